use std::path::Path;

use serde_json::{json, Value};

use crate::channels::{distribution_report, enumerate_bit_flip, NoiseKind};
use crate::error::{Error, Result};
use crate::states::make_ghz;

use super::output::{opt, write_csv};
use super::{training_set, ExperimentConfig};

/// Ideal-state and leading non-ideal frequencies of one distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionRow {
    pub n_qubits: usize,
    pub p: f64,
    /// `None` for the exact channel distribution, else the run seed.
    pub seed: Option<u64>,
    pub ideal_frequency: f64,
    pub leading_non_ideal_frequency: f64,
}

impl DistributionRow {
    pub fn ideal_is_most_frequent(&self) -> bool {
        self.ideal_frequency > self.leading_non_ideal_frequency
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStats {
    pub rows: Vec<DistributionRow>,
}

/// Exact and finite-sample state distributions of the bit-flip training sets
/// used by the other experiments (same seeds, same sizes).
pub fn run_dataset_stats(config: &ExperimentConfig) -> Result<DatasetStats> {
    config.validate()?;
    if config.noise != NoiseKind::BitFlip {
        return Err(Error::Config("dataset statistics need the bit_flip channel".into()));
    }
    let sizes = if config.n_qubits.is_empty() { vec![config.topology.input_size()] } else { config.n_qubits.clone() };
    let mut rows = Vec::new();
    for &n in &sizes {
        let target = make_ghz(n)?;
        for &p in &config.p_grid {
            let exact = distribution_report(&enumerate_bit_flip(&target, p)?)?;
            rows.push(DistributionRow {
                n_qubits: n,
                p,
                seed: None,
                ideal_frequency: exact.ideal_frequency,
                leading_non_ideal_frequency: exact.leading_non_ideal_frequency,
            });
            for seed in config.run_seeds() {
                let r = distribution_report(&training_set(&target, NoiseKind::BitFlip, p, config.n_data, seed)?)?;
                rows.push(DistributionRow {
                    n_qubits: n,
                    p,
                    seed: Some(seed),
                    ideal_frequency: r.ideal_frequency,
                    leading_non_ideal_frequency: r.leading_non_ideal_frequency,
                });
            }
        }
    }
    Ok(DatasetStats { rows })
}

impl DatasetStats {
    /// `datastats.csv`; `source` is `exact` or `sample`.
    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.n_qubits.to_string(),
                    r.p.to_string(),
                    if r.seed.is_some() { "sample" } else { "exact" }.to_string(),
                    opt(r.seed),
                    r.ideal_frequency.to_string(),
                    r.leading_non_ideal_frequency.to_string(),
                    r.ideal_is_most_frequent().to_string(),
                ]
            })
            .collect();
        let header = ["n_qubits", "p", "source", "seed", "ideal_frequency", "leading_non_ideal_frequency", "ideal_most_frequent"];
        Ok(vec![write_csv(dir, "datastats.csv", &header, &rows)?])
    }

    pub fn summary(&self) -> Value {
        let overtaken: Vec<Value> = self
            .rows
            .iter()
            .filter(|r| r.seed.is_some() && !r.ideal_is_most_frequent())
            .map(|r| json!({ "n_qubits": r.n_qubits, "p": r.p, "seed": r.seed }))
            .collect();
        json!({ "ideal_overtaken": overtaken })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_rows_follow_closed_form() {
        let mut c = ExperimentConfig::default();
        c.set("n_qubits", "4, 6").unwrap();
        c.set("n_seeds", "1").unwrap();
        let s = run_dataset_stats(&c).unwrap();
        assert_eq!(s.rows.len(), 2 * 11 * 2);
        for r in s.rows.iter().filter(|r| r.seed.is_none()) {
            let closed = (1.0 - r.p).powi(r.n_qubits as i32) + r.p.powi(r.n_qubits as i32);
            assert!((r.ideal_frequency - closed).abs() < 1e-12);
        }
        let clean: Vec<_> = s.rows.iter().filter(|r| r.p == 0.0).collect();
        assert!(clean.iter().all(|r| r.ideal_frequency == 1.0));
    }

    #[test]
    fn other_channels_are_rejected() {
        let mut c = ExperimentConfig::default();
        c.set("noise", "erasure").unwrap();
        assert!(matches!(run_dataset_stats(&c), Err(Error::Config(_))));
    }
}
