use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::network::{layer_entropies, NetworkTopology, QuantumMap, MAX_GLOBAL_QUBITS};
use crate::trainer::TrainerConfig;

use super::output::write_csv;
use super::{ghz_for, train_on, training_set, ExperimentConfig};

/// Layer entropies of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyFlowRun {
    pub topology: NetworkTopology,
    pub p: f64,
    pub seed: u64,
    /// `per_iteration[n][l − 1]`: entropy of layer `l` before update `n`;
    /// the last row is the trained map.
    pub per_iteration: Vec<Vec<f64>>,
    /// Inputs passed through identity unitaries: hidden layers untouched.
    pub untrained: Vec<f64>,
    pub final_fidelity: f64,
}

impl EntropyFlowRun {
    pub fn initial(&self) -> &[f64] {
        &self.per_iteration[0]
    }

    pub fn final_entropies(&self) -> &[f64] {
        self.per_iteration.last().expect("at least one record")
    }

    pub fn bottleneck_entropy(&self) -> f64 {
        let (_, bb, _) = regions(&self.topology);
        mean(&self.final_entropies()[bb.0 - 1..bb.1])
    }

    pub fn output_entropy(&self) -> f64 {
        *self.final_entropies().last().expect("at least two layers")
    }

    /// Encoder layers carry more entropy on average than decoder layers.
    pub fn inverted(&self) -> bool {
        let (enc, _, dec) = regions(&self.topology);
        let e = self.final_entropies();
        mean(&e[enc.0 - 1..enc.1]) > mean(&e[dec.0 - 1..dec.1])
    }

    /// Output layer less entangled than the bottleneck.
    pub fn output_sealed(&self) -> bool {
        self.output_entropy() < self.bottleneck_entropy()
    }
}

/// 1-based inclusive layer ranges of encoder, bottleneck and decoder.
fn regions(t: &NetworkTopology) -> ((usize, usize), (usize, usize), (usize, usize)) {
    let l = t.n_layers();
    let (a, b) = t.brainbox().unwrap_or_else(|| {
        let k = t.bottleneck_layer();
        (k, k)
    });
    ((1, a.max(2) - 1), (a, b), ((b + 1).min(l), l))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyFlowResult {
    pub runs: Vec<EntropyFlowRun>,
}

/// Trains with layer entropies recorded at every iteration.
pub fn run_entropy_flow(config: &ExperimentConfig) -> Result<EntropyFlowResult> {
    config.validate()?;
    let topologies = config.topologies()?;
    if let Some(t) = topologies.iter().find(|t| t.total_qubits() > MAX_GLOBAL_QUBITS) {
        return Err(Error::DimensionLimit { dim: t.total_qubits(), limit: MAX_GLOBAL_QUBITS });
    }
    let cells: Vec<(NetworkTopology, f64, u64)> = topologies
        .iter()
        .flat_map(|t| config.p_grid.iter().flat_map(move |&p| config.run_seeds().into_iter().map(move |s| (t.clone(), p, s))))
        .collect();
    let with_entropy = ExperimentConfig {
        trainer: TrainerConfig { entropy_mode: Some(config.entropy_mode), ..config.trainer.clone() },
        ..config.clone()
    };
    let runs = cells
        .par_iter()
        .map(|(t, p, s)| {
            let dataset = training_set(&ghz_for(t)?, config.noise, *p, config.n_data, *s)?;
            let untrained = layer_entropies(&QuantumMap::identity(t), &dataset, config.entropy_mode, 0)?
                .into_iter()
                .map(|r| r.entropy)
                .collect();
            let run = train_on(&with_entropy, t, dataset, *s)?;
            Ok(EntropyFlowRun {
                topology: t.clone(),
                p: *p,
                seed: *s,
                per_iteration: run.trace.entries.iter().map(|e| e.entropies.clone()).collect(),
                untrained,
                final_fidelity: run.trace.final_fidelity().unwrap_or(0.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EntropyFlowResult { runs })
}

impl EntropyFlowResult {
    pub fn run(&self, topology: &NetworkTopology, p: f64, seed: u64) -> Option<&EntropyFlowRun> {
        self.runs.iter().find(|r| &r.topology == topology && (r.p - p).abs() < 1e-12 && r.seed == seed)
    }

    /// `entropy_flow.csv` (every iteration) and `entropy_final.csv`
    /// (untrained, initial and final snapshots with the inversion flags).
    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        let mut flow = Vec::new();
        let mut table = Vec::new();
        for r in &self.runs {
            let key = [r.topology.to_string(), r.p.to_string(), r.seed.to_string()];
            for (n, row) in r.per_iteration.iter().enumerate() {
                for (l, e) in row.iter().enumerate() {
                    let mut line = key.to_vec();
                    line.extend([n.to_string(), (l + 1).to_string(), e.to_string()]);
                    flow.push(line);
                }
            }
            for (stage, row) in [("untrained", &r.untrained[..]), ("initial", r.initial()), ("final", r.final_entropies())] {
                for (l, e) in row.iter().enumerate() {
                    let mut line = key.to_vec();
                    line.extend([
                        stage.to_string(),
                        (l + 1).to_string(),
                        e.to_string(),
                        r.final_fidelity.to_string(),
                        r.inverted().to_string(),
                        r.output_sealed().to_string(),
                    ]);
                    table.push(line);
                }
            }
        }
        Ok(vec![
            write_csv(dir, "entropy_flow.csv", &["topology", "p", "seed", "iteration", "layer", "entropy"], &flow)?,
            write_csv(
                dir,
                "entropy_final.csv",
                &["topology", "p", "seed", "stage", "layer", "entropy", "final_fidelity", "inverted", "output_sealed"],
                &table,
            )?,
        ])
    }

    pub fn summary(&self) -> Value {
        json!({
            "runs": self.runs.iter().map(|r| json!({
                "topology": r.topology.to_string(),
                "p": r.p,
                "seed": r.seed,
                "final_fidelity": r.final_fidelity,
                "final_entropies": r.final_entropies(),
                "inverted": r.inverted(),
                "output_sealed": r.output_sealed(),
            })).collect::<Vec<_>>(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_follow_brainbox() {
        let t: NetworkTopology = "(4,2,|2,1|,2,4)".parse().unwrap();
        assert_eq!(regions(&t), ((1, 2), (3, 4), (5, 6)));
        let t: NetworkTopology = "(3,1,3)".parse().unwrap();
        assert_eq!(regions(&t), ((1, 1), (2, 2), (3, 3)));
    }

    #[test]
    fn untrained_hidden_layers_are_pure() {
        let mut c = ExperimentConfig::for_kind(super::super::ExperimentKind::EntropyFlow);
        for (k, v) in [("topology", "(3,1,3)"), ("p_grid", "0.2"), ("n_data", "10"), ("n_it", "3"), ("n_seeds", "1")] {
            c.set(k, v).unwrap();
        }
        let r = run_entropy_flow(&c).unwrap();
        let run = &r.runs[0];
        assert_eq!(run.per_iteration.len(), 4);
        assert!(run.untrained[0] > 0.0);
        assert!(run.untrained[1..].iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn oversized_networks_are_refused() {
        let mut c = ExperimentConfig::for_kind(super::super::ExperimentKind::EntropyFlow);
        c.set("topology", "(6,2,2,2,2,6)").unwrap();
        assert!(matches!(run_entropy_flow(&c), Err(Error::DimensionLimit { .. })));
    }
}
