//! Experiment configs, reports and staged artifact output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use valley_core::sgd_sim::Verdict;

/// One protocol invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: String,
    #[serde(default = "empty_object")]
    pub params: Value,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub timestamp_unix: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub metrics: Value,
    pub verdicts: BTreeMap<String, Verdict>,
    pub provenance: Provenance,
    pub files: Vec<String>,
}

impl Report {
    pub fn any_fail(&self) -> bool {
        self.verdicts.values().any(|v| *v == Verdict::Fail)
    }
}

/// What a protocol produced, held in memory until everything succeeded.
#[derive(Debug, Default)]
pub struct Outcome {
    pub metrics: Value,
    pub verdicts: BTreeMap<String, Verdict>,
    files: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    pub fn new(metrics: Value) -> Self {
        Self {
            metrics,
            ..Default::default()
        }
    }

    pub fn verdict(mut self, name: &str, v: Verdict) -> Self {
        self.verdicts.insert(name.to_string(), v);
        self
    }

    pub fn file(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    /// Serializes rows with a header into `name`.
    pub fn csv<R: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = R>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().context("flushing csv")?;
        self.file(name, bytes);
        Ok(())
    }

    /// CSV with explicit header and numeric rows.
    pub fn table(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        let bytes = w.into_inner().context("flushing csv")?;
        self.file(name, bytes);
        Ok(())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Writes every artifact and `report.json` under the config's output dir.
pub fn finish(config: ExperimentConfig, outcome: Outcome) -> Result<Report> {
    for (name, _) in &outcome.files {
        if Path::new(name).is_absolute() || name.split('/').any(|c| c == "..") {
            bail!("artifact name `{name}` escapes the output directory");
        }
    }
    let mut files: Vec<String> = outcome.files.iter().map(|f| f.0.clone()).collect();
    files.push("report.json".into());
    let report = Report {
        config,
        metrics: outcome.metrics,
        verdicts: outcome.verdicts,
        provenance: Provenance {
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        },
        files,
    };
    let dir = &report.config.output_dir;
    for (name, bytes) in &outcome.files {
        write_atomic(&dir.join(name), bytes)?;
    }
    write_atomic(&dir.join("report.json"), &serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}
