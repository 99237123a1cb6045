use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::channels::NoiseKind;
use crate::error::{Error, Result};
use crate::network::{output_fidelities, NetworkTopology, QuantumMap};
use crate::states::mean_and_std;

use super::output::write_csv;
use super::{ghz_for, test_set, train_run, ExperimentConfig};

/// Reconstruction error `R = 1 − F̄` of one map on one test channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelScore {
    pub channel: NoiseKind,
    pub p_test: f64,
    pub r: f64,
    pub fidelity_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossTestRun {
    pub topology: NetworkTopology,
    /// `None` for a map loaded from a checkpoint.
    pub seed: Option<u64>,
    pub train_fidelity: Option<f64>,
    pub scores: Vec<ChannelScore>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossTestResult {
    pub train_channel: NoiseKind,
    pub p_train: f64,
    pub runs: Vec<CrossTestRun>,
}

/// Scores `map` on `n_test` fresh states per test channel and `p_test`.
pub fn evaluate_channels(map: &QuantumMap, config: &ExperimentConfig, run_seed: u64) -> Result<Vec<ChannelScore>> {
    let target = ghz_for(map.topology())?;
    let cells: Vec<(NoiseKind, f64)> =
        config.test_channels.iter().flat_map(|&k| config.p_test.iter().map(move |&p| (k, p))).collect();
    cells
        .par_iter()
        .map(|&(channel, p_test)| {
            let test = test_set(&target, channel, p_test, config.n_test, run_seed)?;
            let (mean, fidelity_std) = mean_and_std(&output_fidelities(map, &test)?);
            Ok(ChannelScore { channel, p_test, r: (1.0 - mean).clamp(0.0, 1.0), fidelity_std })
        })
        .collect()
}

/// Trains at `p_train` on the training channel for every network and seed,
/// or takes a given map, and scores it on every test channel.
pub fn run_cross_test(config: &ExperimentConfig, checkpoint: Option<&QuantumMap>) -> Result<CrossTestResult> {
    config.validate()?;
    if config.test_channels.is_empty() || config.p_test.is_empty() {
        return Err(Error::Config("cross-test needs test channels and p_test values".into()));
    }
    let runs = match checkpoint {
        Some(map) => vec![CrossTestRun {
            topology: map.topology().clone(),
            seed: None,
            train_fidelity: None,
            scores: evaluate_channels(map, config, config.seed)?,
        }],
        None => {
            let cells: Vec<(NetworkTopology, u64)> = config
                .topologies()?
                .into_iter()
                .flat_map(|t| config.run_seeds().into_iter().map(move |s| (t.clone(), s)))
                .collect();
            cells
                .par_iter()
                .map(|(t, s)| {
                    let run = train_run(config, t, config.p_train, *s)?;
                    Ok(CrossTestRun {
                        topology: t.clone(),
                        seed: Some(*s),
                        train_fidelity: run.trace.final_fidelity(),
                        scores: evaluate_channels(&run.map, config, *s)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(CrossTestResult { train_channel: config.noise, p_train: config.p_train, runs })
}

impl CrossTestRun {
    pub fn score(&self, channel: NoiseKind, p_test: f64) -> Option<&ChannelScore> {
        self.scores.iter().find(|s| s.channel == channel && (s.p_test - p_test).abs() < 1e-12)
    }
}

impl CrossTestResult {
    /// `crosstest.csv`, one row per map, channel and `p_test`.
    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        let rows: Vec<Vec<String>> = self
            .runs
            .iter()
            .flat_map(|run| {
                run.scores.iter().map(move |s| {
                    vec![
                        run.topology.to_string(),
                        run.seed.map(|x| x.to_string()).unwrap_or_default(),
                        self.train_channel.to_string(),
                        self.p_train.to_string(),
                        s.channel.to_string(),
                        s.p_test.to_string(),
                        s.r.to_string(),
                        s.fidelity_std.to_string(),
                    ]
                })
            })
            .collect();
        let header = ["topology", "seed", "train_channel", "p_train", "test_channel", "p_test", "r", "fidelity_std"];
        Ok(vec![write_csv(dir, "crosstest.csv", &header, &rows)?])
    }

    pub fn summary(&self) -> Value {
        json!({
            "train_channel": self.train_channel.to_string(),
            "p_train": self.p_train,
            "max_r": self.runs.iter().map(|run| json!({
                "topology": run.topology.to_string(),
                "seed": run.seed,
                "max_r": run.scores.iter().map(|s| s.r).fold(0.0, f64::max),
            })).collect::<Vec<_>>(),
        })
    }
}
