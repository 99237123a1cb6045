//! Gradient ascent on the mean output fidelity.
//!
//! Every neuron unitary is updated as `U ← exp(iεK) U`. The generator is
//! `K^l_j = η · 2^{N_{l−1}} · Σ_x w_x Tr_rest(i[A^l_j(x), B^l_j(x)])` with the
//! forward state `A` after neurons `1..=j` and the backward operator `B`
//! obtained by pulling the target projector back through the later neurons
//! and layers. Along these generators `dF/dε = Σ Tr(K M) ≥ 0`.

use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};

use std::collections::HashMap;

use crate::channels::{sample_dataset, state_key, DatasetMode, NoiseSpec, NoisyDataset};
use crate::error::{Error, Result};
use crate::factored::{self, Plan, Sample, Scores};
use crate::network::{check_dataset, layer_entropies, merged_inputs, realization_vectors, EntropyMode, QuantumMap};
use crate::rng::{derive_seed, label_tag};
use crate::states::TargetState;
use crate::tensor::{expm_hermitian_generator, orthonormalize_columns, ComplexMatrix, C64};

/// What each output is compared with during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Autoencoding: every output against its own noisy input.
    Reconstruction,
    /// Every output against the ideal target state.
    Target,
    /// Every output against an independent noisy realization of the target,
    /// drawn from the same channel and paired by sample index.
    NoisyPairs,
    /// Every output against the mean state of the training data, whose
    /// leading eigenvector is its most frequent noise realization.
    DataMean,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Reconstruction => "reconstruction",
            Objective::Target => "target",
            Objective::NoisyPairs => "noisy_pairs",
            Objective::DataMean => "data_mean",
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "reconstruction" => Ok(Objective::Reconstruction),
            "target" => Ok(Objective::Target),
            "noisy_pairs" => Ok(Objective::NoisyPairs),
            "data_mean" => Ok(Objective::DataMean),
            other => Err(Error::Config(format!("unknown objective '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateMode {
    /// All generators from the same map, then all unitaries updated.
    Synchronous,
    /// Layer by layer from input to output, each layer seeing the already
    /// updated earlier layers.
    Layerwise,
}

impl UpdateMode {
    pub fn as_str(self) -> &'static str {
        match self {
            UpdateMode::Synchronous => "synchronous",
            UpdateMode::Layerwise => "layerwise",
        }
    }
}

impl FromStr for UpdateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "synchronous" => Ok(UpdateMode::Synchronous),
            "layerwise" => Ok(UpdateMode::Layerwise),
            other => Err(Error::Config(format!("unknown update mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    pub epsilon: f64,
    pub eta: f64,
    pub n_iterations: usize,
    pub fidelity_target: f64,
    pub seed: u64,
    /// Checkpoint period in iterations; 0 disables checkpoints.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub update_mode: UpdateMode,
    pub objective: Objective,
    /// Layer entropies recorded every iteration when set.
    pub entropy_mode: Option<EntropyMode>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            eta: 1.0,
            n_iterations: 200,
            fidelity_target: 0.99,
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
            update_mode: UpdateMode::Synchronous,
            objective: Objective::NoisyPairs,
            entropy_mode: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.fidelity_target > 0.0 && self.fidelity_target <= 1.0) {
            return Err(Error::Config(format!("fidelity target {} outside (0, 1]", self.fidelity_target)));
        }
        Ok(())
    }
}

/// Generator `K^l_j` of one neuron update.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterMatrix {
    /// 1-based layer (≥ 2).
    pub layer: usize,
    /// 1-based neuron within the layer.
    pub neuron: usize,
    pub k: ComplexMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Mean fidelity of the training outputs with the ideal target.
    pub fidelity: f64,
    /// Value of the training objective.
    pub objective: f64,
    /// Layer entropies `S_1..S_L`; empty when not recorded.
    pub entropies: Vec<f64>,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingTrace {
    pub entries: Vec<TraceEntry>,
}

impl TrainingTrace {
    pub fn fidelities(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.fidelity).collect()
    }

    pub fn final_fidelity(&self) -> Option<f64> {
        self.entries.last().map(|e| e.fidelity)
    }

    /// Smallest iteration with `F(n) ≥ target`.
    pub fn first_hit(&self, target: f64) -> Option<usize> {
        self.entries.iter().find(|e| e.fidelity >= target).map(|e| e.iteration)
    }

    /// CSV with `iteration,fidelity,objective,entropy_layer_1..L,elapsed_ms`; timing is
    /// left empty unless `with_timing`.
    pub fn write_csv<W: Write>(&self, out: &mut W, n_layers: usize, with_timing: bool) -> Result<()> {
        let mut header = vec!["iteration".to_string(), "fidelity".to_string(), "objective".to_string()];
        header.extend((1..=n_layers).map(|l| format!("entropy_layer_{l}")));
        header.push("elapsed_ms".into());
        writeln!(out, "{}", header.join(","))?;
        for e in &self.entries {
            let mut row =
                vec![e.iteration.to_string(), format!("{:.16e}", e.fidelity), format!("{:.16e}", e.objective)];
            for l in 0..n_layers {
                row.push(e.entropies.get(l).map(|s| format!("{s:.16e}")).unwrap_or_default());
            }
            row.push(if with_timing { format!("{:.3}", e.elapsed_ms) } else { String::new() });
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `Z = n(F)/N_it`, or `None` if the target is never reached.
pub fn training_impedance(trace: &TrainingTrace, f_target: f64, n_it: usize) -> Option<f64> {
    let n = trace.first_hit(f_target)?;
    Some(if n_it == 0 { 0.0 } else { n as f64 / n_it as f64 })
}

fn check_target(map: &QuantumMap, dataset: &NoisyDataset, target: &TargetState) -> Result<()> {
    check_dataset(map, dataset)?;
    if target.dim() != dataset.target.dim() {
        return Err(Error::Shape("target does not match the dataset".into()));
    }
    Ok(())
}

/// Objective observables and weighted samples for one dataset.
fn training_samples(dataset: &NoisyDataset, target: &TargetState, objective: Objective) -> (Vec<ComplexMatrix>, Vec<Sample>) {
    let inputs = merged_inputs(dataset);
    match objective {
        Objective::Target => (
            vec![target.projector().clone()],
            inputs.into_iter().map(|(weight, input)| Sample { weight, input, objective: 0 }).collect(),
        ),
        Objective::Reconstruction => {
            let observables = inputs.iter().map(|(_, vs)| to_density(vs)).collect();
            let samples = inputs
                .into_iter()
                .enumerate()
                .map(|(k, (weight, input))| Sample { weight, input, objective: k })
                .collect();
            (observables, samples)
        }
        Objective::NoisyPairs => noisy_pair_samples(dataset),
        Objective::DataMean => {
            let mean = dataset.channel_average().scale(C64::new(1.0 / dataset.total_weight(), 0.0));
            (vec![unit_spread(&mean)], inputs.into_iter().map(|(weight, input)| Sample { weight, input, objective: 0 }).collect())
        }
    }
}

/// Output partners for noisy-pair training: an independent draw of the same
/// size from the same channel, or the dataset itself in exact mode.
pub fn partner_dataset(dataset: &NoisyDataset) -> Result<NoisyDataset> {
    match dataset.mode {
        DatasetMode::Exact => Ok(dataset.clone()),
        DatasetMode::Sampled => {
            let spec = NoiseSpec { seed: derive_seed(dataset.spec.seed, &[label_tag("partner")]), ..dataset.spec };
            sample_dataset(&dataset.target, &spec, dataset.len())
        }
    }
}

/// Input identity: descriptor and rounded amplitudes.
type InputKey = Vec<(u64, Vec<(i64, i64)>)>;

/// Samples with identical inputs share one observable: the weighted mean of
/// their partners' density matrices.
fn noisy_pair_samples(dataset: &NoisyDataset) -> (Vec<ComplexMatrix>, Vec<Sample>) {
    let partners = partner_dataset(dataset).expect("dataset parameters were validated on construction");
    let dim = dataset.target.dim();
    if dataset.mode == DatasetMode::Exact {
        let average = dataset.channel_average().scale(C64::new(1.0 / dataset.total_weight(), 0.0));
        let samples = merged_inputs(dataset)
            .into_iter()
            .map(|(weight, input)| Sample { weight, input, objective: 0 })
            .collect();
        return (vec![unit_spread(&average)], samples);
    }
    let mut index: HashMap<InputKey, usize> = HashMap::new();
    let mut samples: Vec<Sample> = Vec::new();
    let mut observables: Vec<ComplexMatrix> = Vec::new();
    for (x, y) in dataset.samples.iter().zip(&partners.samples) {
        let key: Vec<_> = x.branches.iter().map(|b| (b.probability.to_bits(), state_key(&b.state))).collect();
        let k = *index.entry(key).or_insert_with(|| {
            samples.push(Sample { weight: 0.0, input: realization_vectors(&x.branches), objective: observables.len() });
            observables.push(ComplexMatrix::zeros(dim));
            samples.len() - 1
        });
        samples[k].weight += x.weight;
        observables[k].add_scaled(&y.density_matrix(), C64::new(x.weight, 0.0)).unwrap();
    }
    let mut mean = ComplexMatrix::zeros(dim);
    for o in &observables {
        mean.add_scaled(o, C64::new(1.0 / dataset.total_weight(), 0.0)).unwrap();
    }
    let (shift, scale) = spread(&mean);
    for s in &samples {
        let o = &mut observables[s.objective];
        *o = o.scale(C64::new(1.0 / s.weight, 0.0));
        *o = o.sub(&ComplexMatrix::identity(dim).scale(C64::new(shift, 0.0))).unwrap().scale(C64::new(scale, 0.0));
    }
    (observables, samples)
}

/// `(σ − λ_min)/(λ_max − λ_min)`: same maximizers as `σ`, spectrum spanning `[0, 1]`.
fn unit_spread(sigma: &ComplexMatrix) -> ComplexMatrix {
    let (shift, scale) = spread(sigma);
    sigma.sub(&ComplexMatrix::identity(sigma.dim()).scale(C64::new(shift, 0.0))).unwrap().scale(C64::new(scale, 0.0))
}

/// `(λ_min, 1/(λ_max − λ_min))`, or a zero scale for a multiple of the identity.
fn spread(sigma: &ComplexMatrix) -> (f64, f64) {
    let (values, _) = sigma.hermitian_eigen();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 { (lo, 0.0) } else { (lo, 1.0 / (hi - lo)) }
}

fn to_density(vs: &[Vec<C64>]) -> ComplexMatrix {
    let dim = vs[0].len();
    let mut rho = ComplexMatrix::zeros(dim);
    for v in vs {
        rho.add_scaled(&ComplexMatrix::outer(v, v).unwrap(), C64::new(1.0, 0.0)).unwrap();
    }
    rho
}

/// Normalized scores and the matrices `M^l_j` with `dF/dδ = Tr(K M)`.
fn scores_and_gradient(
    map: &QuantumMap,
    dataset: &NoisyDataset,
    target: &TargetState,
    objective: Objective,
) -> Result<(Scores, Vec<Vec<ComplexMatrix>>)> {
    check_target(map, dataset, target)?;
    let plan = Plan::new(map.topology().sizes())?;
    let (observables, samples) = training_samples(dataset, target, objective);
    let total = dataset.total_weight();
    let (sc, ms) = factored::gradient(&plan, map, &observables, target.vector().amplitudes(), &samples);
    let scale = C64::new(1.0 / total, 0.0);
    let ms = ms.into_iter().map(|l| l.into_iter().map(|m| m.scale(scale)).collect()).collect();
    Ok((normalize(sc, total), ms))
}

fn normalize(sc: Scores, total: f64) -> Scores {
    Scores { objective: sc.objective / total, fidelity: (sc.fidelity / total).clamp(0.0, 1.0) }
}

/// Objective value and ideal-target fidelity of `map` on the dataset.
pub fn evaluate_objective(
    map: &QuantumMap,
    dataset: &NoisyDataset,
    target: &TargetState,
    objective: Objective,
) -> Result<(f64, f64)> {
    check_target(map, dataset, target)?;
    let plan = Plan::new(map.topology().sizes())?;
    let (observables, samples) = training_samples(dataset, target, objective);
    let sc = normalize(
        factored::evaluate(&plan, map, &observables, target.vector().amplitudes(), &samples),
        dataset.total_weight(),
    );
    Ok((sc.objective, sc.fidelity))
}

fn to_parameters(map: &QuantumMap, ms: Vec<Vec<ComplexMatrix>>, eta: f64) -> Vec<ParameterMatrix> {
    let sizes = map.topology().sizes();
    ms.into_iter()
        .enumerate()
        .flat_map(|(k, layer)| {
            let c = C64::new(eta * (1u64 << sizes[k]) as f64, 0.0);
            layer.into_iter().enumerate().map(move |(j, m)| ParameterMatrix {
                layer: k + 2,
                neuron: j + 1,
                k: m.scale(c).hermitian_part(),
            })
        })
        .collect()
}

pub fn compute_parameter_matrices(
    map: &QuantumMap,
    dataset: &NoisyDataset,
    target: &TargetState,
    objective: Objective,
    eta: f64,
) -> Result<Vec<ParameterMatrix>> {
    let (_, ms) = scores_and_gradient(map, dataset, target, objective)?;
    Ok(to_parameters(map, ms, eta))
}

/// First-order change of the objective when every `U^l_j` is replaced
/// by `exp(iεK^l_j) U^l_j`, at `ε = 0`.
pub fn directional_derivative(
    map: &QuantumMap,
    dataset: &NoisyDataset,
    target: &TargetState,
    objective: Objective,
    ks: &[ParameterMatrix],
) -> Result<f64> {
    let (_, ms) = scores_and_gradient(map, dataset, target, objective)?;
    let mut d = 0.0;
    for p in ks {
        let m = ms
            .get(p.layer.wrapping_sub(2))
            .and_then(|l| l.get(p.neuron.wrapping_sub(1)))
            .ok_or_else(|| Error::Index(format!("no neuron {} in layer {}", p.neuron, p.layer)))?;
        if m.dim() != p.k.dim() {
            return Err(Error::Shape(format!("generator of dimension {} for neuron ({}, {})", p.k.dim(), p.layer, p.neuron)));
        }
        d += p.k.trace_product(m).re;
    }
    Ok(d)
}

/// `U^l_j ← exp(iεK^l_j) U^l_j` for every given generator.
pub fn apply_updates(map: &QuantumMap, ks: &[ParameterMatrix], epsilon: f64) -> Result<QuantumMap> {
    let mut next = map.clone();
    for p in ks {
        let e = expm_hermitian_generator(&p.k, epsilon)?;
        let mut u = e.matmul(map.unitary(p.layer, p.neuron))?;
        let drift = u.unitarity_error();
        if drift > 1e-8 {
            warn!("unitarity drift {drift:.3e} in neuron ({}, {}); re-orthonormalizing", p.layer, p.neuron);
            orthonormalize_columns(&mut u)?;
            let after = u.unitarity_error();
            if after > 1e-8 {
                return Err(Error::NumericDrift(after));
            }
        }
        next.set_unitary(p.layer, p.neuron, u)?;
    }
    Ok(next)
}

/// One update; also returns the scores of the map before it.
fn step(
    map: &QuantumMap,
    dataset: &NoisyDataset,
    target: &TargetState,
    config: &TrainerConfig,
) -> Result<(Scores, QuantumMap)> {
    match config.update_mode {
        UpdateMode::Synchronous => {
            let (sc, ms) = scores_and_gradient(map, dataset, target, config.objective)?;
            let ks = to_parameters(map, ms, config.eta);
            Ok((sc, apply_updates(map, &ks, config.epsilon)?))
        }
        UpdateMode::Layerwise => {
            let mut current = map.clone();
            let mut f0 = None;
            for layer in 2..=map.topology().n_layers() {
                let (sc, ms) = scores_and_gradient(&current, dataset, target, config.objective)?;
                f0.get_or_insert(sc);
                let ks: Vec<_> =
                    to_parameters(&current, ms, config.eta).into_iter().filter(|p| p.layer == layer).collect();
                current = apply_updates(&current, &ks, config.epsilon)?;
            }
            Ok((f0.unwrap_or_default(), current))
        }
    }
}

pub fn training_step(
    map: &QuantumMap,
    dataset: &NoisyDataset,
    target: &TargetState,
    config: &TrainerConfig,
) -> Result<QuantumMap> {
    Ok(step(map, dataset, target, config)?.1)
}

fn write_checkpoint(map: &QuantumMap, config: &TrainerConfig, iteration: usize) -> Result<()> {
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("checkpoint_{iteration:06}.bbqc"));
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        map.write_checkpoint(&mut file, iteration as u64)?;
        file.flush()?;
    }
    Ok(())
}

/// Runs `n_iterations` updates, recording `F(0), …, F(N_it)`.
pub fn train(
    map: &QuantumMap,
    dataset: &NoisyDataset,
    target: &TargetState,
    config: &TrainerConfig,
) -> Result<(QuantumMap, TrainingTrace)> {
    config.validate()?;
    check_target(map, dataset, target)?;
    let start = Instant::now();
    let mut current = map.clone();
    let mut trace = TrainingTrace::default();
    let entropies = |m: &QuantumMap, n: usize| -> Result<Vec<f64>> {
        match config.entropy_mode {
            Some(mode) => Ok(layer_entropies(m, dataset, mode, n)?.into_iter().map(|r| r.entropy).collect()),
            None => Ok(Vec::new()),
        }
    };
    for n in 0..config.n_iterations {
        let entropy = entropies(&current, n)?;
        let (sc, next) = step(&current, dataset, target, config)?;
        if config.checkpoint_every > 0 && n % config.checkpoint_every == 0 {
            write_checkpoint(&current, config, n)?;
        }
        trace.entries.push(TraceEntry {
            iteration: n,
            fidelity: sc.fidelity,
            objective: sc.objective,
            entropies: entropy,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        current = next;
    }
    let n = config.n_iterations;
    let (objective, f) = evaluate_objective(&current, dataset, target, config.objective)?;
    trace.entries.push(TraceEntry {
        iteration: n,
        fidelity: f,
        objective,
        entropies: entropies(&current, n)?,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    });
    if config.checkpoint_every > 0 {
        write_checkpoint(&current, config, n)?;
    }
    info!("trained {} for {n} iterations: F = {f:.6}", map.topology());
    Ok((current, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{sample_bit_flip, sample_dataset, NoiseKind, NoiseSpec};
    use crate::network::{init_random_map, mean_fidelity, NetworkTopology};
    use crate::states::make_ghz;

    fn setup(spec: &str, p: f64, seed: u64) -> (QuantumMap, NoisyDataset) {
        let t: NetworkTopology = spec.parse().unwrap();
        let g = make_ghz(t.input_size()).unwrap();
        (init_random_map(&t, seed), sample_bit_flip(&g, p, 20, seed ^ 0xabc).unwrap())
    }

    fn finite_difference(map: &QuantumMap, ds: &NoisyDataset, obj: Objective, ks: &[ParameterMatrix], delta: f64) -> f64 {
        let value = |m: &QuantumMap| evaluate_objective(m, ds, &ds.target, obj).unwrap().0;
        (value(&apply_updates(map, ks, delta).unwrap()) - value(&apply_updates(map, ks, -delta).unwrap())) / (2.0 * delta)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let objectives = [Objective::Target, Objective::NoisyPairs, Objective::DataMean, Objective::Reconstruction];
        for (spec, seed) in [("(2,1,2)", 1), ("(3,1,3)", 2), ("(3,2,1,2,3)", 3)] {
            let (map, ds) = setup(spec, 0.2, seed);
            for obj in objectives {
                let ks = compute_parameter_matrices(&map, &ds, &ds.target, obj, 1.0).unwrap();
                let analytic = directional_derivative(&map, &ds, &ds.target, obj, &ks).unwrap();
                let fd = finite_difference(&map, &ds, obj, &ks, 1e-5);
                assert!((analytic - fd).abs() <= 1e-4 * fd.abs().max(1e-12), "{spec} {obj:?}: {analytic} vs {fd}");
                assert!(analytic > 0.0);
            }
        }
    }

    #[test]
    fn single_neuron_gradients_match_finite_differences() {
        let (map, ds) = setup("(2,1,2)", 0.1, 7);
        let obj = Objective::Target;
        let ks = compute_parameter_matrices(&map, &ds, &ds.target, obj, 1.0).unwrap();
        for p in &ks {
            let one = std::slice::from_ref(p);
            let analytic = directional_derivative(&map, &ds, &ds.target, obj, one).unwrap();
            let fd = finite_difference(&map, &ds, obj, one, 1e-5);
            assert!((analytic - fd).abs() <= 1e-4 * fd.abs().max(1e-12));
        }
    }

    #[test]
    fn mixed_inputs_use_branch_mixtures() {
        let t: NetworkTopology = "(2,1,2)".parse().unwrap();
        let g = make_ghz(2).unwrap();
        let ds = sample_dataset(&g, &NoiseSpec::new(NoiseKind::Erasure, 0.8, 5).unwrap(), 15).unwrap();
        let map = init_random_map(&t, 5);
        for obj in [Objective::Target, Objective::NoisyPairs] {
            let ks = compute_parameter_matrices(&map, &ds, &g, obj, 1.0).unwrap();
            let analytic = directional_derivative(&map, &ds, &g, obj, &ks).unwrap();
            let fd = finite_difference(&map, &ds, obj, &ks, 1e-5);
            assert!((analytic - fd).abs() <= 1e-4 * fd.abs());
        }
    }

    #[test]
    fn generators_are_hermitian_and_vanish_at_optimum() {
        let (map, ds) = setup("(2,1,2)", 0.3, 4);
        for p in compute_parameter_matrices(&map, &ds, &ds.target, Objective::NoisyPairs, 1.0).unwrap() {
            assert!(p.k.hermiticity_error() < 1e-12);
            assert_eq!(p.k.dim(), if p.layer == 2 { 8 } else { 4 });
        }
        // Swap-based (1,1) teleport is a fixed point for any clean input.
        let t = NetworkTopology::new(vec![2, 2]).unwrap();
        let mut map = crate::network::QuantumMap::identity(&t);
        // Neuron j swaps input qubit j into output qubit j.
        for j in 1..=2 {
            let u = ComplexMatrix::from_fn(8, |r, c| {
                let (a, b, o) = (c >> 2 & 1, c >> 1 & 1, c & 1);
                let (a, o) = if j == 1 { (o, a) } else { (a, o) };
                let (b, o) = if j == 2 { (o, b) } else { (b, o) };
                if r == (a << 2 | b << 1 | o) { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }
            });
            map.set_unitary(2, j, u).unwrap();
        }
        let g = make_ghz(2).unwrap();
        let clean = sample_bit_flip(&g, 0.0, 3, 0).unwrap();
        assert!((mean_fidelity(&map, &clean).unwrap() - 1.0).abs() < 1e-12);
        let ks = compute_parameter_matrices(&map, &clean, &g, Objective::Target, 1.0).unwrap();
        assert!(directional_derivative(&map, &clean, &g, Objective::Target, &ks).unwrap().abs() < 1e-8);
    }

    #[test]
    fn zero_step_leaves_map_unchanged() {
        let (map, ds) = setup("(2,1,2)", 0.1, 3);
        let config = TrainerConfig { epsilon: 0.0, ..Default::default() };
        assert_eq!(training_step(&map, &ds, &ds.target, &config).unwrap(), map);
    }

    #[test]
    fn clean_steps_never_decrease_fidelity() {
        for seed in 0..100 {
            let (map, ds) = setup("(2,1,2)", 0.0, seed);
            let before = mean_fidelity(&map, &ds).unwrap();
            let after = mean_fidelity(&training_step(&map, &ds, &ds.target, &TrainerConfig::default()).unwrap(), &ds).unwrap();
            assert!(after >= before - 1e-9, "seed {seed}: {before} -> {after}");
        }
    }

    #[test]
    fn training_is_deterministic_and_records_every_iteration() {
        let (map, ds) = setup("(2,1,2)", 0.1, 9);
        let config = TrainerConfig {
            n_iterations: 5,
            entropy_mode: Some(EntropyMode::ChannelAveraged),
            ..Default::default()
        };
        let (a, ta) = train(&map, &ds, &ds.target, &config).unwrap();
        let (b, tb) = train(&map, &ds, &ds.target, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.fidelities(), tb.fidelities());
        assert_eq!(ta.entries.len(), 6);
        assert!(ta.entries.iter().all(|e| e.entropies.len() == 3));
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_checkpoint(&mut ca, 5).unwrap();
        b.write_checkpoint(&mut cb, 5).unwrap();
        assert_eq!(ca, cb);

        let zero = TrainerConfig { n_iterations: 0, ..Default::default() };
        let (_, t0) = train(&map, &ds, &ds.target, &zero).unwrap();
        assert_eq!(t0.entries.len(), 1);
    }

    #[test]
    fn layerwise_mode_also_ascends() {
        let (map, ds) = setup("(2,1,2)", 0.0, 12);
        let config = TrainerConfig { update_mode: UpdateMode::Layerwise, ..Default::default() };
        let before = mean_fidelity(&map, &ds).unwrap();
        let after = mean_fidelity(&training_step(&map, &ds, &ds.target, &config).unwrap(), &ds).unwrap();
        assert!(after > before);
    }

    #[test]
    fn impedance_definition() {
        let trace = |fs: &[f64]| TrainingTrace {
            entries: fs
                .iter()
                .enumerate()
                .map(|(i, &f)| TraceEntry { iteration: i, fidelity: f, objective: f, entropies: vec![], elapsed_ms: 0.0 })
                .collect(),
        };
        assert_eq!(training_impedance(&trace(&[0.995, 0.999]), 0.99, 1), Some(0.0));
        assert_eq!(training_impedance(&trace(&[0.5, 0.6, 0.7]), 0.99, 2), None);
        assert_eq!(training_impedance(&trace(&[0.5, 0.6, 0.992, 0.999, 0.999]), 0.99, 4), Some(0.5));
    }

    #[test]
    fn dataset_order_does_not_change_generators() {
        let (map, ds) = setup("(2,1,2)", 0.3, 21);
        let mut reversed = ds.clone();
        reversed.samples.reverse();
        let a = compute_parameter_matrices(&map, &ds, &ds.target, Objective::DataMean, 1.0).unwrap();
        let b = compute_parameter_matrices(&map, &reversed, &ds.target, Objective::DataMean, 1.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.k.max_abs_diff(&y.k) < 1e-12);
        }
    }
}
