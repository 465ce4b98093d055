use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use landau_core::io::{parse_csv, read_matrix_market};

const TWO_SPECIES: &str = r#"
[mixture]
gamma = 0.0
species = [{ mass = 1.0, density = 1.0 }, { mass = 2.0, density = 1.0 }]

[grid]
points_per_axis = 6
"#;

fn scratch() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_landau"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--output")
        .arg(out)
        .env_remove("LANDAU_THREADS")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn single_species_gap_reports_five_invariants() {
    let tmp = scratch();
    let dir = tmp.path();
    let out = run(&["gap"], &repo_config("gap_single_species.toml"), dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.join("gap_report.json"));
    assert_eq!(v["result"]["report"]["nullspace_dim"], 5);
    assert!(v["result"]["report"]["gap_l2"].as_f64().unwrap() > 0.0);
    assert_eq!(v["config"]["mixture"]["species"].as_array().unwrap().len(), 1);
    assert_eq!(v["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn shipped_invariants_config_passes() {
    let tmp = scratch();
    let dir = tmp.path();
    let out = run(&["invariants"], &repo_config("reference.toml"), dir);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}{}", String::from_utf8_lossy(&out.stderr));
    assert!(!stdout.contains("FAIL"));
    let table = fs::read_to_string(dir.join("invariants.txt")).unwrap();
    for module in ["mixture:", "grid:", "collision:", "linearized:", "spectral:", "evolution:", "cli:"] {
        assert!(table.contains(module), "no {module} rows");
    }
    let v = json(&dir.join("invariants.json"));
    assert!(v["result"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn kcompact_table_is_monotone() {
    let tmp = scratch();
    let dir = tmp.path();
    let cfg = write_config(dir, &format!("{TWO_SPECIES}\n[kcompact]\nn_values = [2, 4, 8, 16]\n"));
    let out = run(&["kcompact"], &cfg, &dir.join("out"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.join("out/kcompact.csv")).unwrap();
    assert!(text.starts_with("# command = \"kcompact\""));
    assert!(text.contains("# seed = "));
    let (header, rows) = parse_csv(&text).unwrap();
    assert_eq!(header, ["n", "radius", "norm"]);
    assert_eq!(rows.len(), 4);
    assert!(rows.windows(2).all(|w| w[1][2] <= w[0][2]));
}

#[test]
fn failed_check_exits_three() {
    let tmp = scratch();
    let dir = tmp.path();
    // increasing n gives decreasing norms; reversed it is not monotone
    let cfg = write_config(dir, &format!("{TWO_SPECIES}\n[kcompact]\nn_values = [16, 4]\n"));
    let out = run(&["kcompact"], &cfg, &dir.join("out"));
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("check failed: norms nonincreasing in n"), "{err}");
}

#[test]
fn invalid_config_exits_one() {
    let tmp = scratch();
    let dir = tmp.path();
    for bad in [TWO_SPECIES.replace("gamma = 0.0", "gamma = 2.5"), TWO_SPECIES.replace("points_per_axis = 6", "points_per_axis = 5")] {
        let cfg = write_config(dir, &bad);
        let out = run(&["gap"], &cfg, &dir.join("out"));
        assert_eq!(out.status.code(), Some(1));
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
    }
    let out = run(&["gap"], &dir.join("missing.toml"), &dir.join("out"));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn payloads_are_byte_reproducible() {
    let tmp = scratch();
    let dir = tmp.path();
    let cfg = write_config(dir, &format!("{TWO_SPECIES}\n[modes]\nwavenumbers = [0, 1]\nt_end = 10.0\ndt_scale = 0.1\n"));
    let out_dir = dir.join("out");
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let out = run(&["modes"], &cfg, &out_dir);
        assert_ne!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
        let files = ["modes_summary.json", "mode_k0.csv", "mode_k1.csv"];
        snapshots.push(files.map(|f| fs::read(out_dir.join(f)).unwrap()));
    }
    assert_eq!(snapshots[0], snapshots[1]);
    let log = fs::read_to_string(out_dir.join("run.log")).unwrap();
    assert_eq!(log.lines().count(), 4);
    let seeded = run(&["modes", "--seed", "7"], &cfg, &out_dir);
    assert_ne!(seeded.status.code(), Some(1));
    assert_ne!(fs::read(out_dir.join("mode_k1.csv")).unwrap(), snapshots[0][2]);
}

#[test]
fn matrices_export_with_headers() {
    let tmp = scratch();
    let dir = tmp.path();
    let cfg = write_config(dir, &TWO_SPECIES.replace("points_per_axis = 6", "points_per_axis = 4"));
    let out = Command::new(env!("CARGO_BIN_EXE_landau"))
        .args(["gap", "--export-matrices", "--config"])
        .arg(&cfg)
        .arg("--output")
        .arg(dir.join("out"))
        .env("LANDAU_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.join("out/gap_report.json"));
    let sha = v["config_sha256"].as_str().unwrap();
    for name in ["negL_full", "negL_mono", "negL_bi", "Lambda", "K"] {
        let text = fs::read_to_string(dir.join(format!("out/matrices/{name}.mtx"))).unwrap();
        assert!(text.contains(&format!("% config_sha256: {sha}")));
        assert!(text.contains(&format!("% selector: {name}")));
        assert!(text.contains("% grid: points_per_axis=4"));
        let m = read_matrix_market(&text).unwrap();
        assert_eq!(m.nrows(), 2 * 64);
    }
}

#[test]
fn sweep_writes_one_directory_per_point() {
    let tmp = scratch();
    let dir = tmp.path();
    let text = TWO_SPECIES.replace("points_per_axis = 6", "points_per_axis = 4")
        + "\n[sweep]\ncommand = \"gap\"\ngammas = [-1.0, 0.0]\nspecies_counts = [1, 2]\n";
    let cfg = write_config(dir, &text);
    let out = run(&["sweep", "--threads", "2"], &cfg, &dir.join("out"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.join("out/sweep_summary.json"));
    let points = v["result"].as_array().unwrap();
    assert_eq!(points.len(), 4);
    for p in points {
        assert_eq!(p["exit_code"], 0);
        let report = json(&Path::new(p["output_dir"].as_str().unwrap()).join("gap_report.json"));
        let n = report["config"]["mixture"]["species"].as_array().unwrap().len();
        assert_eq!(report["result"]["report"]["nullspace_dim"], n + 4);
    }
}
