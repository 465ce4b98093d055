//! Artifact serialization: CSV tables, JSON payloads, Matrix Market exports
//! and atomic file writes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::linearized::OperatorMatrix;

/// 17 significant digits, enough for a lossless round trip.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Comma-separated table with a header row.
pub fn csv_table<I>(header: &[String], rows: I) -> String
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&v| format_float(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Parses a table written by [`csv_table`]. Lines starting with `#` are skipped.
pub fn parse_csv(text: &str) -> Option<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next()?.split(',').map(str::to_owned).collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|c| c.parse::<f64>().ok()).collect::<Option<Vec<f64>>>())
        .collect::<Option<Vec<_>>>()?;
    Some((header, rows))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact types serialize infallibly");
    s.push('\n');
    s
}

/// Lowercase hex SHA-256 of a payload.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Symmetric coordinate Matrix Market text of the lower triangle. Each
/// comment line is prefixed with `%`.
pub fn matrix_market(m: &OperatorMatrix, comments: &[String]) -> String {
    let n = m.dim();
    let a = &m.matrix;
    let mut entries = Vec::new();
    for j in 0..n {
        for i in j..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            if v != 0.0 {
                entries.push((i + 1, j + 1, v));
            }
        }
    }
    let mut out = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
    let _ = writeln!(out, "% operator: {}", m.tag.name());
    for c in comments {
        let _ = writeln!(out, "% {c}");
    }
    let _ = writeln!(out, "{n} {n} {}", entries.len());
    for (i, j, v) in entries {
        let _ = writeln!(out, "{i} {j} {}", format_float(v));
    }
    out
}

/// Reads a symmetric coordinate Matrix Market file back into a dense matrix.
pub fn read_matrix_market(text: &str) -> Option<faer::Mat<f64>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('%'));
    let dims: Vec<usize> = lines.next()?.split_whitespace().map(|t| t.parse().ok()).collect::<Option<_>>()?;
    let (n, nnz) = (*dims.first()?, *dims.get(2)?);
    let mut a = faer::Mat::<f64>::zeros(n, n);
    let mut seen = 0;
    for l in lines {
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() != 3 {
            continue;
        }
        let i: usize = t[0].parse().ok()?;
        let j: usize = t[1].parse().ok()?;
        let v: f64 = t[2].parse().ok()?;
        a[(i - 1, j - 1)] = v;
        a[(j - 1, i - 1)] = v;
        seen += 1;
    }
    (seen == nnz).then_some(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearized::MatrixTag;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, -1.0 / 3.0, 6.02214076e23, 5e-324, f64::MAX, 0.0] {
            assert_eq!(format_float(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn csv_round_trip() {
        let header = vec!["t".to_string(), "x".to_string()];
        let rows = vec![vec![0.0, 1.0 / 7.0], vec![0.5, -2e-300]];
        let text = format!("# seed = 3\n{}", csv_table(&header, rows.clone()));
        let (h, r) = parse_csv(&text).unwrap();
        assert_eq!(h, header);
        assert_eq!(r, rows);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn matrix_market_round_trip() {
        let a = faer::Mat::from_fn(4, 4, |i, j| if i == j { 2.0 } else if i.abs_diff(j) == 1 { -1.0 / 3.0 } else { 0.0 });
        let m = OperatorMatrix { tag: MatrixTag::Lambda, matrix: a.clone() };
        let text = matrix_market(&m, &["grid: n=4".to_string()]);
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real symmetric\n"));
        assert!(text.contains("% grid: n=4"));
        let b = read_matrix_market(&text).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = std::env::temp_dir().join(format!("landau-io-{}", std::process::id()));
        let p = dir.join("out.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        let leftovers = fs::read_dir(&dir).unwrap().count();
        assert_eq!(leftovers, 1);
        fs::remove_dir_all(&dir).unwrap();
    }
}
