use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

use super::ExperimentConfig;

/// Writes a header and rows to `dir/name`; returns the file name.
pub fn write_csv(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(name)).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(name.to_string())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

pub(crate) fn opt(v: Option<impl ToString>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Run manifest: resolved configuration, seeds, versions, outputs and a
/// result summary. Contains no timestamps, so re-runs are byte-identical.
#[derive(Clone, Debug)]
pub struct Manifest {
    pub command: String,
    pub config: Vec<(String, String)>,
    pub seeds: Vec<u64>,
    pub outputs: Vec<String>,
    pub summary: Value,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            command: config.kind.section().to_string(),
            config: config.to_pairs(),
            seeds: config.run_seeds(),
            outputs: Vec::new(),
            summary: Value::Null,
        }
    }

    pub fn to_json(&self) -> Value {
        let config: Map<String, Value> = self.config.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
        json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": config,
            "seeds": self.seeds,
            "outputs": self.outputs,
            "summary": self.summary,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.to_json()).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}
