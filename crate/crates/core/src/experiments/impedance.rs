use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::Result;
use crate::network::NetworkTopology;
use crate::trainer::training_impedance;

use super::output::{opt, write_csv};
use super::{median_option, train_run, ExperimentConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ImpedanceRun {
    pub topology: NetworkTopology,
    pub p: f64,
    pub seed: u64,
    /// `Z(F_target)`, `None` if the target was never reached.
    pub z: Option<f64>,
    pub final_fidelity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImpedanceCell {
    pub topology: NetworkTopology,
    pub p: f64,
    pub best_z: Option<f64>,
    pub median_z: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImpedanceTable {
    pub fidelity_target: f64,
    pub runs: Vec<ImpedanceRun>,
    pub cells: Vec<ImpedanceCell>,
}

/// `Z(F_target)` for every network, grid point and seed. Runs with the same
/// seed start from the same initial map wherever unitary shapes agree.
pub fn run_impedance_table(config: &ExperimentConfig) -> Result<ImpedanceTable> {
    config.validate()?;
    let topologies = config.topologies()?;
    let cells: Vec<(NetworkTopology, f64, u64)> = topologies
        .iter()
        .flat_map(|t| config.p_grid.iter().flat_map(move |&p| config.run_seeds().into_iter().map(move |s| (t.clone(), p, s))))
        .collect();
    let target = config.trainer.fidelity_target;
    let runs = cells
        .par_iter()
        .map(|(t, p, s)| {
            let run = train_run(config, t, *p, *s)?;
            Ok(ImpedanceRun {
                topology: t.clone(),
                p: *p,
                seed: *s,
                z: training_impedance(&run.trace, target, config.trainer.n_iterations),
                final_fidelity: run.trace.final_fidelity().unwrap_or(0.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table_cells = Vec::new();
    for t in &topologies {
        for &p in &config.p_grid {
            let zs: Vec<Option<f64>> = runs.iter().filter(|r| &r.topology == t && r.p == p).map(|r| r.z).collect();
            let best_z = zs.iter().flatten().copied().reduce(f64::min);
            table_cells.push(ImpedanceCell { topology: t.clone(), p, best_z, median_z: median_option(&zs) });
        }
    }
    Ok(ImpedanceTable { fidelity_target: target, runs, cells: table_cells })
}

impl ImpedanceTable {
    pub fn cell(&self, topology: &NetworkTopology, p: f64) -> Option<&ImpedanceCell> {
        self.cells.iter().find(|c| &c.topology == topology && (c.p - p).abs() < 1e-12)
    }

    /// `impedance_runs.csv` and `impedance.csv`; unreached cells are empty.
    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        let runs: Vec<Vec<String>> = self
            .runs
            .iter()
            .map(|r| {
                let bb = r.topology.brainbox_label().unwrap_or_default();
                vec![r.topology.to_string(), bb, r.p.to_string(), r.seed.to_string(), opt(r.z), r.final_fidelity.to_string()]
            })
            .collect();
        let cells: Vec<Vec<String>> = self
            .cells
            .iter()
            .map(|c| {
                let bb = c.topology.brainbox_label().unwrap_or_default();
                vec![c.topology.to_string(), bb, c.p.to_string(), opt(c.best_z), opt(c.median_z)]
            })
            .collect();
        Ok(vec![
            write_csv(dir, "impedance_runs.csv", &["topology", "brainbox", "p", "seed", "z", "final_fidelity"], &runs)?,
            write_csv(dir, "impedance.csv", &["topology", "brainbox", "p", "z_best", "z_median"], &cells)?,
        ])
    }

    pub fn summary(&self) -> Value {
        json!({
            "fidelity_target": self.fidelity_target,
            "cells": self.cells.iter().map(|c| json!({
                "topology": c.topology.to_string(),
                "p": c.p,
                "z_best": c.best_z,
                "z_median": c.median_z,
            })).collect::<Vec<_>>(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_training_reaches_target_early() {
        let mut c = ExperimentConfig::default();
        for (k, v) in [("topology", "(2,1,2)"), ("p_grid", "0"), ("n_data", "10"), ("n_it", "60"), ("n_seeds", "1")] {
            c.set(k, v).unwrap();
        }
        let t = run_impedance_table(&c).unwrap();
        let z = t.cell(&c.topology, 0.0).unwrap().best_z.expect("reaches 0.99");
        assert!(z > 0.0 && z < 1.0);
    }
}
