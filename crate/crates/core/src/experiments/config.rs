//! Experiment configuration files.
//!
//! ```text
//! # comment
//! seed = 7
//! n_seeds = 3
//!
//! [trainer]
//! epsilon = 0.1
//!
//! [sweep]
//! brainboxes = (1), (1,1), (2)
//! p_grid = 0, 0.1, 0.2, 0.3
//! ```
//!
//! Keys before the first section apply to every command. A command reads
//! the `[trainer]` section and then its own section, later keys overriding
//! earlier ones. Lists are comma-separated; commas inside parentheses do not
//! split.

use std::path::PathBuf;
use std::str::FromStr;

use crate::channels::NoiseKind;
use crate::error::{Error, Result};
use crate::network::{parse_brainbox, EntropyMode};
use crate::trainer::{Objective, UpdateMode};

use super::{ExperimentConfig, ExperimentKind};

/// Section names accepted in config files.
pub const SECTIONS: [&str; 8] = ["trainer", "sweep", "impedance", "crosstest", "datastats", "entropy", "train", "test"];

/// One `key = value` assignment with its source line.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parsed file: global entries and named sections, in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub global: Vec<Entry>,
    pub sections: Vec<(String, Vec<Entry>)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut file = ConfigFile::default();
        let mut current: Option<usize> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {line}: unterminated section header")))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(Error::Config(format!("line {line}: unknown section [{name}]")));
                }
                current = Some(match file.sections.iter().position(|(n, _)| n == name) {
                    Some(k) => k,
                    None => {
                        file.sections.push((name.to_string(), Vec::new()));
                        file.sections.len() - 1
                    }
                });
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected 'key = value'")))?;
            let entry = Entry { key: key.trim().to_string(), value: value.trim().to_string(), line };
            if entry.key.is_empty() {
                return Err(Error::Config(format!("line {line}: empty key")));
            }
            match current {
                Some(k) => file.sections[k].1.push(entry),
                None => file.global.push(entry),
            }
        }
        // Every section is validated, not only the one a command reads.
        let mut scratch = ExperimentConfig::default();
        for e in file.global.iter().chain(file.sections.iter().flat_map(|(_, es)| es)) {
            scratch.set(&e.key, &e.value).map_err(|err| at_line(err, e.line))?;
        }
        Ok(file)
    }

    /// Defaults overlaid with global entries, `[trainer]`, then the command's section.
    pub fn resolve(&self, kind: ExperimentKind) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::for_kind(kind);
        let section = |name: &'static str| self.sections.iter().filter(move |(n, _)| n == name).flat_map(|(_, es)| es);
        for e in self.global.iter().chain(section("trainer")).chain(section(kind.section())) {
            config.set(&e.key, &e.value).map_err(|err| at_line(err, e.line))?;
        }
        Ok(config)
    }
}

fn at_line(err: Error, line: usize) -> Error {
    match err {
        Error::Config(msg) => Error::Config(format!("line {line}: {msg}")),
        other => Error::Config(format!("line {line}: {other}")),
    }
}

/// Splits on commas outside parentheses.
pub fn split_list(value: &str) -> Vec<String> {
    let mut items = Vec::new();
    let mut depth = 0i32;
    let mut current = String::new();
    for c in value.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                items.push(current.trim().to_string());
                current.clear();
                continue;
            }
            _ => {}
        }
        current.push(c);
    }
    if !current.trim().is_empty() || !items.is_empty() {
        items.push(current.trim().to_string());
    }
    items
}

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    split_list(value).iter().map(|v| scalar(key, v)).collect()
}

fn probability(key: &str, value: &str) -> Result<f64> {
    let p: f64 = scalar(key, value)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("'{key}' value {p} outside [0, 1]")));
    }
    Ok(p)
}

impl ExperimentConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "topology" => {
                self.topology = value.parse()?;
                self.brainboxes.clear();
            }
            "n_in" => {
                self.n_in = Some(scalar(key, value)?);
            }
            "brainbox" => self.brainboxes = vec![parse_brainbox(value)?],
            "brainboxes" => {
                self.brainboxes = split_list(value).iter().map(|v| parse_brainbox(v)).collect::<Result<_>>()?;
            }
            "noise" => self.noise = value.parse()?,
            "p_grid" => {
                self.p_grid = split_list(value).iter().map(|v| probability(key, v)).collect::<Result<_>>()?;
            }
            "p_train" => self.p_train = probability(key, value)?,
            "p_test" => {
                self.p_test = split_list(value).iter().map(|v| probability(key, v)).collect::<Result<_>>()?;
            }
            "test_channels" => self.test_channels = list::<NoiseKind>(key, value)?,
            "n_data" => self.n_data = scalar(key, value)?,
            "n_test" => self.n_test = scalar(key, value)?,
            "n_seeds" => self.n_seeds = scalar(key, value)?,
            "seed" => self.seed = scalar(key, value)?,
            "n_qubits" => self.n_qubits = list(key, value)?,
            "entropy_mode" => self.entropy_mode = value.parse::<EntropyMode>()?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "n_it" => self.trainer.n_iterations = scalar(key, value)?,
            "epsilon" => self.trainer.epsilon = scalar(key, value)?,
            "eta" => self.trainer.eta = scalar(key, value)?,
            "fidelity_target" => self.trainer.fidelity_target = scalar(key, value)?,
            "objective" => self.trainer.objective = value.parse::<Objective>()?,
            "update_mode" => self.trainer.update_mode = value.parse::<UpdateMode>()?,
            "checkpoint_every" => self.trainer.checkpoint_every = scalar(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Resolved settings as `key = value` pairs, readable by [`ConfigFile`].
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let floats = |v: &[f64]| v.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(", ");
        let mut pairs = vec![("topology".to_string(), self.topology.to_string())];
        if let Some(n) = self.n_in {
            pairs.push(("n_in".into(), n.to_string()));
        }
        if !self.brainboxes.is_empty() {
            let labels: Vec<String> = self
                .brainboxes
                .iter()
                .map(|b| format!("({})", b.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")))
                .collect();
            pairs.push(("brainboxes".into(), labels.join(", ")));
        }
        let t = &self.trainer;
        pairs.extend([
            ("noise".to_string(), self.noise.to_string()),
            ("p_grid".into(), floats(&self.p_grid)),
            ("p_train".into(), self.p_train.to_string()),
            ("p_test".into(), floats(&self.p_test)),
            (
                "test_channels".into(),
                self.test_channels.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(", "),
            ),
            ("n_data".into(), self.n_data.to_string()),
            ("n_test".into(), self.n_test.to_string()),
            ("n_seeds".into(), self.n_seeds.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("n_qubits".into(), self.n_qubits.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(", ")),
            ("entropy_mode".into(), self.entropy_mode.as_str().into()),
            ("out_dir".into(), self.out_dir.display().to_string()),
            ("n_it".into(), t.n_iterations.to_string()),
            ("epsilon".into(), t.epsilon.to_string()),
            ("eta".into(), t.eta.to_string()),
            ("fidelity_target".into(), t.fidelity_target.to_string()),
            ("objective".into(), t.objective.as_str().into()),
            ("update_mode".into(), t.update_mode.as_str().into()),
            ("checkpoint_every".into(), t.checkpoint_every.to_string()),
        ]);
        pairs
    }
}
