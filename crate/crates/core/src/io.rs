//! Artifact output: CSV tables, each with a JSON sidecar that embeds the
//! config, plus one `run.meta.json` for the things that change between runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

/// Name of the file written next to partial artifacts of an aborted run.
pub const ABORT_MARKER: &str = "ABORTED";
pub const META_FILE: &str = "run.meta.json";

/// Shortest digit string that parses back to the same `f64`, in
/// scientific notation for very large or small magnitudes.
pub fn fmt_float(v: f64) -> String {
    format!("{v:?}")
}

/// One pass/fail check attached to an experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult { name: name.into(), passed, detail: detail.into() }
    }
}

/// Writes the artifacts of one run into a directory.
#[derive(Debug)]
pub struct ArtifactDir {
    dir: PathBuf,
    config_toml: String,
    kind: String,
    written: Vec<PathBuf>,
}

impl ArtifactDir {
    pub fn create(dir: &Path, config: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        let marker = dir.join(ABORT_MARKER);
        if marker.exists() {
            fs::remove_file(&marker)?;
        }
        Ok(ArtifactDir { dir: dir.to_path_buf(), config_toml: config.to_toml(), kind: config.kind.to_string(), written: vec![] })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn put(&mut self, name: &str, body: &str) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, body).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
        self.written.push(p);
        Ok(())
    }

    /// `name.csv` plus `name.json` holding the config, a summary and the
    /// checks. The sidecar can be passed back as `--config`.
    pub fn table(&mut self, name: &str, csv: &str, summary: Value, checks: &[CheckResult]) -> Result<()> {
        self.put(&format!("{name}.csv"), csv)?;
        let side = json!({
            "artifact": format!("{name}.csv"),
            "kind": self.kind,
            "config": self.config_toml,
            "summary": summary,
            "checks": checks,
        });
        self.put(&format!("{name}.json"), &(pretty(&side) + "\n"))
    }

    /// A JSON document with the config embedded.
    pub fn document(&mut self, name: &str, body: Value) -> Result<()> {
        let doc = json!({ "kind": self.kind, "config": self.config_toml, "body": body });
        self.put(&format!("{name}.json"), &(pretty(&doc) + "\n"))
    }

    pub fn mark_aborted(&mut self, reason: &str) -> Result<()> {
        self.put(ABORT_MARKER, &format!("{reason}\n"))
    }

    /// Timestamps and the status go here, away from the reproducible files.
    pub fn write_meta(&mut self, started: SystemTime, status: i32) -> Result<()> {
        let secs = |t: SystemTime| t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let now = SystemTime::now();
        let meta = json!({
            "started_unix": secs(started),
            "finished_unix": secs(now),
            "elapsed_seconds": now.duration_since(started).map(|d| d.as_secs_f64()).unwrap_or(0.0),
            "status": status,
            "version": env!("CARGO_PKG_VERSION"),
        });
        self.put(META_FILE, &(pretty(&meta) + "\n"))
    }
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("JSON values serialize")
}

/// `serde_json::to_value` for types that cannot fail to serialize.
pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

/// CSV of equal-length columns.
pub fn columns_csv(head: &[&str], cols: &[Vec<String>]) -> String {
    let rows = cols.first().map_or(0, |c| c.len());
    let mut out = head.join(",");
    out.push('\n');
    for i in 0..rows {
        let row: Vec<&str> = cols.iter().map(|c| c[i].as_str()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn floats_round_trip(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let back: f64 = fmt_float(v).parse().unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn shortest_form() {
        assert_eq!(fmt_float(0.1), "0.1");
        assert_eq!(fmt_float(1e-20), "1e-20");
        assert_eq!(fmt_float(2.0), "2.0");
    }

    #[test]
    fn columns() {
        let csv = columns_csv(&["a", "b"], &[vec!["1".into(), "2".into()], vec!["3".into(), "4".into()]]);
        assert_eq!(csv, "a,b\n1,3\n2,4\n");
    }
}
