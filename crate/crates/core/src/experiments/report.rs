//! CSV and manifest output for experiment curves.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::CurvePoint;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("nothing to write: {0}")]
    Empty(String),
    #[error("curve {curve:?} at n = {n}: value {value} / stderr {stderr} must be finite and non-negative")]
    BadValue { curve: String, n: usize, value: f64, stderr: f64 },
    #[error("invalid curve name {0:?} (use letters, digits, '.', '_' or '-')")]
    BadName(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    /// File stem of the CSV.
    pub name: String,
    pub points: Vec<CurvePoint>,
}

impl Curve {
    pub fn new(name: impl Into<String>, points: Vec<CurvePoint>) -> Self {
        Self {
            name: name.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub config: serde_json::Value,
    pub base_seed: u64,
    pub git_describe: String,
    pub timings_ms: BTreeMap<String, u64>,
    /// Scalar results that are not curves (slopes, accuracies).
    #[serde(default)]
    pub summary: serde_json::Value,
    /// CSV files written next to the manifest; filled in by [`write_report`].
    #[serde(default)]
    pub files: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    n: usize,
    value: f64,
    stderr: f64,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

fn validate(curves: &[Curve]) -> Result<(), ReportError> {
    if curves.is_empty() {
        return Err(ReportError::Empty("no curves".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for c in curves {
        if !valid_name(&c.name) || !seen.insert(c.name.as_str()) {
            return Err(ReportError::BadName(c.name.clone()));
        }
        if c.points.is_empty() {
            return Err(ReportError::Empty(format!("curve {:?} has no points", c.name)));
        }
        for p in &c.points {
            let ok = |v: f64| v.is_finite() && v >= 0.0;
            if !ok(p.value) || !ok(p.stderr) || p.perturbation_count == 0 {
                return Err(ReportError::BadValue {
                    curve: c.name.clone(),
                    n: p.perturbation_count,
                    value: p.value,
                    stderr: p.stderr,
                });
            }
        }
    }
    Ok(())
}

fn write_curve(curve: &Curve, path: &Path) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    for p in &curve.points {
        w.serialize(Row {
            n: p.perturbation_count,
            value: p.value,
            stderr: p.stderr,
        })?;
    }
    w.flush().map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Writes `<name>.csv` (header `n,value,stderr`) per curve, then
/// `manifest.json`. Returns the manifest path. On any error every file this
/// call created is removed again.
pub fn write_report(curves: &[Curve], manifest: &Manifest, dir: &Path) -> Result<PathBuf, ReportError> {
    validate(curves)?;
    fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| {
        let mut manifest = manifest.clone();
        manifest.files.clear();
        for curve in curves {
            let file = format!("{}.csv", curve.name);
            let path = dir.join(&file);
            written.push(path.clone());
            write_curve(curve, &path)?;
            manifest.files.push(file);
        }
        let path = dir.join(MANIFEST_FILE);
        written.push(path.clone());
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).map_err(|source| ReportError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    })();
    if result.is_err() {
        for path in &written {
            let _ = fs::remove_file(path);
        }
    }
    result
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurvePoint>, ReportError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| {
            let row: Row = row?;
            Ok(CurvePoint {
                perturbation_count: row.n,
                value: row.value,
                stderr: row.stderr,
            })
        })
        .collect()
}

/// `git describe --always --dirty --tags` of the working directory, or
/// `"unknown"` outside a repository.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(n: usize, value: f64, stderr: f64) -> CurvePoint {
        CurvePoint {
            perturbation_count: n,
            value,
            stderr,
        }
    }

    fn manifest(seed: u64) -> Manifest {
        Manifest {
            kind: "equivalence".into(),
            config: serde_json::json!({ "base_seed": seed }),
            base_seed: seed,
            git_describe: git_describe(),
            timings_ms: BTreeMap::from([("total".into(), 12)]),
            summary: serde_json::Value::Null,
            files: vec![],
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let points = vec![point(100, 0.1, 0.01), point(1000, 1.0 / 3.0, 2e-17), point(10_000, 0.0, 0.0)];
        let curves = [Curve::new("equivalence", points.clone())];
        let path = write_report(&curves, &manifest(42), dir.path()).unwrap();
        assert_eq!(read_curve_csv(&dir.path().join("equivalence.csv")).unwrap(), points);
        let text = fs::read_to_string(dir.path().join("equivalence.csv")).unwrap();
        assert!(text.starts_with("n,value,stderr\n"));

        let m: Manifest = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(m.base_seed, 42);
        assert_eq!(m.config["base_seed"], 42);
        assert_eq!(m.files, vec!["equivalence.csv".to_string()]);
    }

    #[test]
    fn empty_results_leave_no_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            write_report(&[], &manifest(0), dir.path()),
            Err(ReportError::Empty(_))
        ));
        let bad = [
            Curve::new("a", vec![point(10, 1.0, 0.0)]),
            Curve::new("b", vec![point(10, f64::NAN, 0.0)]),
        ];
        assert!(matches!(
            write_report(&bad, &manifest(0), dir.path()),
            Err(ReportError::BadValue { .. })
        ));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn failed_write_removes_partial_files() {
        let dir = tempfile::tempdir().unwrap();
        // A directory where the manifest should go makes the final write fail.
        fs::create_dir(dir.path().join(MANIFEST_FILE)).unwrap();
        let curves = [Curve::new("a", vec![point(10, 1.0, 0.0)])];
        assert!(write_report(&curves, &manifest(0), dir.path()).is_err());
        assert!(!dir.path().join("a.csv").exists());
    }

    #[test]
    fn rejects_bad_names() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["", "../x", "a/b", ".."] {
            let curves = [Curve::new(name, vec![point(10, 1.0, 0.0)])];
            assert!(matches!(
                write_report(&curves, &manifest(0), dir.path()),
                Err(ReportError::BadName(_))
            ));
        }
        let dup = [
            Curve::new("a", vec![point(10, 1.0, 0.0)]),
            Curve::new("a", vec![point(10, 1.0, 0.0)]),
        ];
        assert!(write_report(&dup, &manifest(0), dir.path()).is_err());
    }
}
