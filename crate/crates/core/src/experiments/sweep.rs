use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::Result;
use crate::network::{output_fidelities, NetworkTopology};
use crate::states::mean_and_std;

use super::output::{opt, write_csv};
use super::{ghz_for, median, test_set, train_run, ExperimentConfig};

/// One trained network at one noise level and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub topology: NetworkTopology,
    pub p: f64,
    pub seed: u64,
    pub train_fidelity: f64,
    pub test_mean: f64,
    /// Sample standard deviation of the per-state test fidelities.
    pub test_std: f64,
    pub first_hit: Option<usize>,
}

/// Seed aggregate for one `(topology, p)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub topology: NetworkTopology,
    pub p: f64,
    pub best_seed: u64,
    pub best_mean: f64,
    pub best_std: f64,
    pub median_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepThreshold {
    pub topology: NetworkTopology,
    /// Largest grid point whose best-of-seeds test fidelity reaches the target.
    pub best: Option<f64>,
    /// Same, on the median over seeds.
    pub median: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub fidelity_target: f64,
    pub runs: Vec<SweepRun>,
    pub points: Vec<SweepPoint>,
    pub thresholds: Vec<SweepThreshold>,
}

/// Trains every network at every grid point and seed and tests each map
/// on a fresh set from the same channel.
pub fn run_tolerance_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let topologies = config.topologies()?;
    let cells: Vec<(NetworkTopology, f64, u64)> = topologies
        .iter()
        .flat_map(|t| config.p_grid.iter().flat_map(move |&p| config.run_seeds().into_iter().map(move |s| (t.clone(), p, s))))
        .collect();
    let runs = cells
        .par_iter()
        .map(|(t, p, s)| {
            let run = train_run(config, t, *p, *s)?;
            let test = test_set(&ghz_for(t)?, config.noise, *p, config.n_test, *s)?;
            let (test_mean, test_std) = mean_and_std(&output_fidelities(&run.map, &test)?);
            Ok(SweepRun {
                topology: t.clone(),
                p: *p,
                seed: *s,
                train_fidelity: run.trace.final_fidelity().unwrap_or(0.0),
                test_mean,
                test_std,
                first_hit: run.trace.first_hit(config.trainer.fidelity_target),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(runs, &topologies, &config.p_grid, config.trainer.fidelity_target))
}

fn summarize(runs: Vec<SweepRun>, topologies: &[NetworkTopology], grid: &[f64], target: f64) -> SweepResult {
    let mut points = Vec::new();
    let mut thresholds = Vec::new();
    for t in topologies {
        let mut best_pass = None;
        let mut median_pass = None;
        for &p in grid {
            let cell: Vec<&SweepRun> = runs.iter().filter(|r| &r.topology == t && r.p == p).collect();
            let best = cell.iter().max_by(|a, b| a.test_mean.total_cmp(&b.test_mean)).expect("at least one seed");
            let med = median(&cell.iter().map(|r| r.test_mean).collect::<Vec<_>>());
            if best.test_mean >= target {
                best_pass = Some(best_pass.map_or(p, |q: f64| q.max(p)));
            }
            if med >= target {
                median_pass = Some(median_pass.map_or(p, |q: f64| q.max(p)));
            }
            points.push(SweepPoint {
                topology: t.clone(),
                p,
                best_seed: best.seed,
                best_mean: best.test_mean,
                best_std: best.test_std,
                median_mean: med,
            });
        }
        thresholds.push(SweepThreshold { topology: t.clone(), best: best_pass, median: median_pass });
    }
    SweepResult { fidelity_target: target, runs, points, thresholds }
}

impl SweepResult {
    pub fn point(&self, topology: &NetworkTopology, p: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|x| &x.topology == topology && (x.p - p).abs() < 1e-12)
    }

    pub fn threshold(&self, topology: &NetworkTopology) -> Option<&SweepThreshold> {
        self.thresholds.iter().find(|x| &x.topology == topology)
    }

    /// `sweep_runs.csv`, `sweep.csv` and `sweep_thresholds.csv`.
    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        let runs: Vec<Vec<String>> = self
            .runs
            .iter()
            .map(|r| {
                vec![
                    r.topology.to_string(),
                    r.p.to_string(),
                    r.seed.to_string(),
                    r.train_fidelity.to_string(),
                    r.test_mean.to_string(),
                    r.test_std.to_string(),
                    opt(r.first_hit),
                ]
            })
            .collect();
        let points: Vec<Vec<String>> = self
            .points
            .iter()
            .map(|x| {
                vec![
                    x.topology.to_string(),
                    x.p.to_string(),
                    x.best_mean.to_string(),
                    x.best_std.to_string(),
                    x.best_seed.to_string(),
                    x.median_mean.to_string(),
                ]
            })
            .collect();
        let thresholds: Vec<Vec<String>> = self
            .thresholds
            .iter()
            .map(|x| vec![x.topology.to_string(), opt(x.best), opt(x.median)])
            .collect();
        Ok(vec![
            write_csv(dir, "sweep_runs.csv", &["topology", "p", "seed", "train_fidelity", "test_mean", "test_std", "first_hit"], &runs)?,
            write_csv(dir, "sweep.csv", &["topology", "p", "mean_fidelity", "std_fidelity", "best_seed", "median_fidelity"], &points)?,
            write_csv(dir, "sweep_thresholds.csv", &["topology", "p_star_best", "p_star_median"], &thresholds)?,
        ])
    }

    pub fn summary(&self) -> Value {
        json!({
            "fidelity_target": self.fidelity_target,
            "thresholds": self.thresholds.iter().map(|x| json!({
                "topology": x.topology.to_string(),
                "p_star_best": x.best,
                "p_star_median": x.median,
            })).collect::<Vec<_>>(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(t: &NetworkTopology, p: f64, seed: u64, mean: f64) -> SweepRun {
        SweepRun { topology: t.clone(), p, seed, train_fidelity: mean, test_mean: mean, test_std: 0.0, first_hit: None }
    }

    #[test]
    fn threshold_is_largest_passing_grid_point() {
        let t: NetworkTopology = "(2,1,2)".parse().unwrap();
        let runs = vec![
            run(&t, 0.0, 0, 1.0),
            run(&t, 0.0, 1, 1.0),
            run(&t, 0.1, 0, 0.995),
            run(&t, 0.1, 1, 0.5),
            run(&t, 0.2, 0, 0.3),
            run(&t, 0.2, 1, 0.98),
        ];
        let r = summarize(runs, std::slice::from_ref(&t), &[0.0, 0.1, 0.2], 0.99);
        assert_eq!(r.threshold(&t).unwrap().best, Some(0.1));
        assert_eq!(r.threshold(&t).unwrap().median, Some(0.0));
        assert_eq!(r.point(&t, 0.2).unwrap().best_seed, 1);
        assert_eq!(r.point(&t, 0.1).unwrap().median_mean, 0.7475);
    }

    #[test]
    fn small_sweep_is_reproducible() {
        let mut c = ExperimentConfig::default();
        for (k, v) in [("topology", "(2,1,2)"), ("p_grid", "0, 0.5"), ("n_data", "20"), ("n_test", "20"), ("n_it", "30"), ("n_seeds", "2")] {
            c.set(k, v).unwrap();
        }
        let a = run_tolerance_sweep(&c).unwrap();
        assert_eq!(a, run_tolerance_sweep(&c).unwrap());
        assert_eq!(a.runs.len(), 4);
        let t = &c.topology;
        assert!(a.point(t, 0.0).unwrap().best_mean >= a.point(t, 0.5).unwrap().best_mean);
        assert!(a.runs.iter().all(|r| (0.0..=1.0).contains(&r.test_mean)));
    }
}
