//! Experiment harness: tolerance sweeps, impedance tables, cross-tests,
//! training-set statistics and entropy flow, with CSV and JSON output.

pub mod config;
mod crosstest;
mod datastats;
mod entropy;
mod impedance;
mod output;
mod sweep;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::channels::{sample_dataset, NoiseKind, NoiseSpec, NoisyDataset};
use crate::error::{Error, Result};
use crate::network::{init_random_map, EntropyMode, NetworkTopology, QuantumMap};
use crate::rng::{derive_seed, label_tag};
use crate::states::{make_ghz, TargetState};
use log::info;

use crate::trainer::{train, TrainerConfig, TrainingTrace};

pub use config::ConfigFile;
pub use crosstest::{evaluate_channels, run_cross_test, ChannelScore, CrossTestResult, CrossTestRun};
pub use datastats::{run_dataset_stats, DatasetStats, DistributionRow};
pub use entropy::{run_entropy_flow, EntropyFlowResult, EntropyFlowRun};
pub use impedance::{run_impedance_table, ImpedanceCell, ImpedanceRun, ImpedanceTable};
pub use output::{write_csv, Manifest};
pub use sweep::{run_tolerance_sweep, SweepPoint, SweepResult, SweepRun, SweepThreshold};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    ToleranceSweep,
    Impedance,
    CrossTest,
    DatasetStats,
    EntropyFlow,
    Train,
    Test,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::ToleranceSweep,
        ExperimentKind::Impedance,
        ExperimentKind::CrossTest,
        ExperimentKind::DatasetStats,
        ExperimentKind::EntropyFlow,
        ExperimentKind::Train,
        ExperimentKind::Test,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::ToleranceSweep => "tolerance_sweep",
            ExperimentKind::Impedance => "impedance",
            ExperimentKind::CrossTest => "cross_test",
            ExperimentKind::DatasetStats => "dataset_stats",
            ExperimentKind::EntropyFlow => "entropy_flow",
            ExperimentKind::Train => "train",
            ExperimentKind::Test => "test",
        }
    }

    /// Config section (and CLI subcommand) name.
    pub fn section(self) -> &'static str {
        match self {
            ExperimentKind::ToleranceSweep => "sweep",
            ExperimentKind::Impedance => "impedance",
            ExperimentKind::CrossTest => "crosstest",
            ExperimentKind::DatasetStats => "datastats",
            ExperimentKind::EntropyFlow => "entropy",
            ExperimentKind::Train => "train",
            ExperimentKind::Test => "test",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s || k.section() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// Fully resolved experiment settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Network used when no brainbox list is given.
    pub topology: NetworkTopology,
    /// Input size for brainbox shells; defaults to the topology's.
    pub n_in: Option<usize>,
    /// Brainboxes placed in the `(n_in, 2, …, 2, n_in)` shell.
    pub brainboxes: Vec<Vec<usize>>,
    /// Training channel.
    pub noise: NoiseKind,
    pub p_grid: Vec<f64>,
    pub p_train: f64,
    pub p_test: Vec<f64>,
    pub test_channels: Vec<NoiseKind>,
    pub n_data: usize,
    pub n_test: usize,
    pub n_seeds: usize,
    pub seed: u64,
    /// Input sizes for training-set statistics; defaults to the input size.
    pub n_qubits: Vec<usize>,
    pub entropy_mode: EntropyMode,
    pub out_dir: PathBuf,
    pub trainer: TrainerConfig,
}

/// `{0, 0.05, …, 0.5}`.
pub fn default_p_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 20.0).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::ToleranceSweep,
            topology: "(4,2,|1|,2,4)".parse().expect("valid default topology"),
            n_in: None,
            brainboxes: Vec::new(),
            noise: NoiseKind::BitFlip,
            p_grid: default_p_grid(),
            p_train: 0.3,
            p_test: vec![0.1, 0.2, 0.3, 0.4],
            test_channels: NoiseKind::ALL.to_vec(),
            n_data: 200,
            n_test: 200,
            n_seeds: 3,
            seed: 0,
            n_qubits: Vec::new(),
            entropy_mode: EntropyMode::ChannelAveraged,
            out_dir: PathBuf::from("results"),
            trainer: TrainerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults for one command; entropy flow contrasts a weak and a strong noise level.
    pub fn for_kind(kind: ExperimentKind) -> Self {
        let mut c = Self { kind, ..Default::default() };
        if kind == ExperimentKind::EntropyFlow {
            c.p_grid = vec![0.1, 0.45];
        }
        c
    }

    /// Networks the experiment runs on.
    pub fn topologies(&self) -> Result<Vec<NetworkTopology>> {
        if self.brainboxes.is_empty() {
            return Ok(vec![self.topology.clone()]);
        }
        let n_in = self.n_in.unwrap_or_else(|| self.topology.input_size());
        self.brainboxes.iter().map(|bb| NetworkTopology::brainbox_shell(n_in, bb)).collect()
    }

    /// Run seeds `seed, seed + 1, …`.
    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|k| self.seed.wrapping_add(k)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.trainer.validate()?;
        let topologies = self.topologies()?;
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be at least 1".into()));
        }
        if self.n_data == 0 || self.n_test == 0 {
            return Err(Error::Config("n_data and n_test must be positive".into()));
        }
        if let Some(t) = topologies.iter().find(|t| t.input_size() != t.output_size()) {
            return Err(Error::Config(format!("network {t} does not map its input size to itself")));
        }
        let check = |kind: NoiseKind, ps: &[f64], what: &str| -> Result<()> {
            match ps.iter().find(|&&p| !(0.0..=kind.max_p()).contains(&p)) {
                Some(p) => Err(Error::Config(format!("{what} value {p} outside [0, {}] for {kind}", kind.max_p()))),
                None => Ok(()),
            }
        };
        check(self.noise, &self.p_grid, "p_grid")?;
        check(self.noise, &[self.p_train], "p_train")?;
        for &kind in &self.test_channels {
            check(kind, &self.p_test, "p_test")?;
        }
        Ok(())
    }
}

fn p_tag(p: f64) -> u64 {
    (p * 1e9).round() as u64
}

/// Seed of the training set for one run.
pub fn training_seed(run_seed: u64, kind: NoiseKind, p: f64) -> u64 {
    derive_seed(run_seed, &[label_tag("train"), label_tag(kind.as_str()), p_tag(p)])
}

/// Seed of the test set for one run; a stream disjoint from training.
pub fn test_seed(run_seed: u64, kind: NoiseKind, p: f64) -> u64 {
    derive_seed(run_seed, &[label_tag("test"), label_tag(kind.as_str()), p_tag(p)])
}

/// Initial map for one run; shared by every network with the same seed.
pub fn initial_map(topology: &NetworkTopology, run_seed: u64) -> QuantumMap {
    init_random_map(topology, derive_seed(run_seed, &[label_tag("init")]))
}

pub fn training_set(target: &TargetState, kind: NoiseKind, p: f64, n: usize, run_seed: u64) -> Result<NoisyDataset> {
    sample_dataset(target, &NoiseSpec::new(kind, p, training_seed(run_seed, kind, p))?, n)
}

pub fn test_set(target: &TargetState, kind: NoiseKind, p: f64, n: usize, run_seed: u64) -> Result<NoisyDataset> {
    sample_dataset(target, &NoiseSpec::new(kind, p, test_seed(run_seed, kind, p))?, n)
}

/// One training run: seeded training set, shared initial map, trained map.
pub struct TrainedRun {
    pub topology: NetworkTopology,
    pub p: f64,
    pub seed: u64,
    pub dataset: NoisyDataset,
    pub map: QuantumMap,
    pub trace: TrainingTrace,
}

pub fn train_run(config: &ExperimentConfig, topology: &NetworkTopology, p: f64, run_seed: u64) -> Result<TrainedRun> {
    let target = ghz_for(topology)?;
    let dataset = training_set(&target, config.noise, p, config.n_data, run_seed)?;
    train_on(config, topology, dataset, run_seed)
}

pub fn train_on(config: &ExperimentConfig, topology: &NetworkTopology, dataset: NoisyDataset, run_seed: u64) -> Result<TrainedRun> {
    let trainer = TrainerConfig { seed: run_seed, ..config.trainer.clone() };
    let start = initial_map(topology, run_seed);
    let (map, trace) = train(&start, &dataset, &dataset.target, &trainer)?;
    info!("{topology} p={} seed={run_seed}: training fidelity {:.6}", dataset.spec.p, trace.final_fidelity().unwrap_or(0.0));
    Ok(TrainedRun { topology: topology.clone(), p: dataset.spec.p, seed: run_seed, dataset, map, trace })
}

pub(crate) fn ghz_for(topology: &NetworkTopology) -> Result<TargetState> {
    make_ghz(topology.input_size())
}

/// Median of the finite values, treating `None` as +∞.
pub(crate) fn median_option(values: &[Option<f64>]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().map(|x| x.unwrap_or(f64::INFINITY)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    m.is_finite().then_some(m)
}

pub(crate) fn median(values: &[f64]) -> f64 {
    median_option(&values.iter().map(|&v| Some(v)).collect::<Vec<_>>()).unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_and_counts() {
        let c = ExperimentConfig::default();
        assert_eq!(c.p_grid.len(), 11);
        assert_eq!(c.p_grid[6], 0.3);
        assert_eq!((c.n_data, c.n_test, c.trainer.n_iterations, c.n_seeds), (200, 200, 200, 3));
        c.validate().unwrap();
    }

    #[test]
    fn shells_from_brainboxes() {
        let mut c = ExperimentConfig::default();
        c.set("brainboxes", "(1), (2,1)").unwrap();
        c.set("n_in", "6").unwrap();
        let names: Vec<String> = c.topologies().unwrap().iter().map(|t| t.to_string()).collect();
        assert_eq!(names, ["(6,2,|1|,2,6)", "(6,2,|2,1|,2,6)"]);
    }

    #[test]
    fn bit_flip_grid_is_capped() {
        let mut c = ExperimentConfig::default();
        c.set("p_grid", "0.1, 0.6").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn train_and_test_streams_differ() {
        let g = make_ghz(4).unwrap();
        let a = training_set(&g, NoiseKind::BitFlip, 0.3, 50, 1).unwrap();
        let b = test_set(&g, NoiseKind::BitFlip, 0.3, 50, 1).unwrap();
        assert_ne!(a.samples, b.samples);
        assert_eq!(a.samples, training_set(&g, NoiseKind::BitFlip, 0.3, 50, 1).unwrap().samples);
    }

    #[test]
    fn medians() {
        assert_eq!(median_option(&[Some(0.3), None, Some(0.1)]), Some(0.3));
        assert_eq!(median_option(&[None, None, Some(0.1)]), None);
        assert_eq!(median(&[1.0, 2.0, 4.0, 3.0]), 2.5);
    }
}
