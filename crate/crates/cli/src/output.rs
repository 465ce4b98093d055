//! Artifact writing and check bookkeeping shared by the commands.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use landau_core::io::{sha256_hex, to_json, write_atomic};
use landau_core::{GridSpec, Result};
use serde::Serialize;

use crate::config::RunConfig;

/// One named property with its measured value and the bound it was held to.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable condition, e.g. `<= 1e-10`.
    pub condition: String,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, condition: format!("<= {bound:e}"), passed: value <= bound }
    }

    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, condition: format!(">= {bound:e}"), passed: value >= bound }
    }

    pub fn positive(name: impl Into<String>, value: f64) -> Self {
        Self { name: name.into(), value, condition: "> 0".into(), passed: value > 0.0 }
    }

    pub fn equals(name: impl Into<String>, value: usize, expected: usize) -> Self {
        Self { name: name.into(), value: value as f64, condition: format!("== {expected}"), passed: value == expected }
    }

    pub fn holds(name: impl Into<String>, passed: bool, condition: impl Into<String>) -> Self {
        Self { name: name.into(), value: if passed { 1.0 } else { 0.0 }, condition: condition.into(), passed }
    }
}

/// Fixed-width pass/fail table.
pub fn check_table(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for c in checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{status}  {:width$}  {:<12.4e}  {}", c.name, c.value, c.condition);
    }
    out
}

/// Writes the artifacts of one run into its output directory. Every payload
/// carries the resolved configuration, its hash and the seed.
pub struct Artifacts<'a> {
    pub config: &'a RunConfig,
    pub command: &'a str,
    pub config_toml: String,
    pub config_sha256: String,
    pub dir: PathBuf,
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    command: &'a str,
    config_sha256: &'a str,
    seed: u64,
    grid: GridSpec,
    config: &'a RunConfig,
    result: &'a T,
}

impl<'a> Artifacts<'a> {
    pub fn new(config: &'a RunConfig, command: &'a str) -> Self {
        let config_toml = config.to_toml();
        let config_sha256 = sha256_hex(config_toml.as_bytes());
        Self { config, command, config_toml, config_sha256, dir: config.output_dir.clone() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn json<T: Serialize>(&self, name: &str, result: &T) -> Result<PathBuf> {
        let env = Envelope {
            command: self.command,
            config_sha256: &self.config_sha256,
            seed: self.config.seed,
            grid: self.config.grid_spec(),
            config: self.config,
            result,
        };
        self.raw(name, to_json(&env).as_bytes())
    }

    /// `#`-prefixed provenance lines for text artifacts.
    pub fn header_lines(&self) -> Vec<String> {
        let spec = self.config.grid_spec();
        let mut lines = vec![
            format!("command = {:?}", self.command),
            format!("config_sha256 = {:?}", self.config_sha256),
            format!("grid_spec = {{ points_per_axis = {}, radius = {} }}", spec.points_per_axis, spec.radius),
        ];
        lines.extend(self.config_toml.lines().filter(|l| !l.is_empty()).map(str::to_owned));
        lines
    }

    pub fn csv(&self, name: &str, table: &str) -> Result<PathBuf> {
        let mut text = String::new();
        for l in self.header_lines() {
            let _ = writeln!(text, "# {l}");
        }
        text.push_str(table);
        self.raw(name, text.as_bytes())
    }

    pub fn raw(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path(name);
        write_atomic(&p, bytes)?;
        Ok(p)
    }

    /// Appends a timestamped line to the sidecar log, the only
    /// non-reproducible file a run writes.
    pub fn log(&self, message: &str) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(self.dir.join("run.log"))?;
        writeln!(f, "[{secs:.3}] {}: {message}", self.command)?;
        Ok(())
    }
}
