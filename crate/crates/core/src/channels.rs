//! Noise channels and noisy training/test datasets.
//!
//! Every channel is sampled in Kraus form: a realization is a discrete
//! outcome (flip subset, Pauli string, erased qubit) applied to the pure
//! target, so datasets are weighted lists of pure states. The erasure
//! channel leaves the erased qubit in a product with the traced remainder,
//! which makes its realizations two-branch mixtures.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::states::TargetState;
use crate::tensor::{ComplexMatrix, StateVector, C64};

/// Largest register for exhaustive bit-flip enumeration.
pub const MAX_ENUMERATION_QUBITS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    BitFlip,
    Depolarizing,
    Erasure,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::BitFlip, NoiseKind::Depolarizing, NoiseKind::Erasure];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::BitFlip => "bit_flip",
            NoiseKind::Depolarizing => "depolarizing",
            NoiseKind::Erasure => "erasure",
        }
    }

    /// Upper end of the admissible probability range.
    pub fn max_p(self) -> f64 {
        match self {
            NoiseKind::BitFlip => 0.5,
            _ => 1.0,
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bit_flip" | "bitflip" => Ok(NoiseKind::BitFlip),
            "depolarizing" => Ok(NoiseKind::Depolarizing),
            "erasure" => Ok(NoiseKind::Erasure),
            other => Err(Error::Config(format!("unknown noise channel '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub p: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, p: f64, seed: u64) -> Result<Self> {
        check_probability(kind, p)?;
        Ok(Self { kind, p, seed })
    }
}

fn check_probability(kind: NoiseKind, p: f64) -> Result<()> {
    if !(0.0..=kind.max_p()).contains(&p) {
        return Err(Error::Argument(format!(
            "{kind} probability {p} outside [0, {}]",
            kind.max_p()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    fn from_char(c: char) -> Result<Self> {
        match c {
            'I' => Ok(Pauli::I),
            'X' => Ok(Pauli::X),
            'Y' => Ok(Pauli::Y),
            'Z' => Ok(Pauli::Z),
            _ => Err(Error::Format(format!("unknown Pauli label '{c}'"))),
        }
    }
}

/// Applies a single-qubit Pauli to `amps` in place.
pub fn apply_pauli(amps: &mut [C64], qubit: usize, pauli: Pauli) {
    let n = amps.len().trailing_zeros() as usize;
    let mask = 1usize << (n - 1 - qubit);
    let i_unit = C64::new(0.0, 1.0);
    match pauli {
        Pauli::I => {}
        Pauli::X => {
            for i in 0..amps.len() {
                if i & mask == 0 {
                    amps.swap(i, i | mask);
                }
            }
        }
        Pauli::Y => {
            // Y|0⟩ = i|1⟩, Y|1⟩ = −i|0⟩
            for i in 0..amps.len() {
                if i & mask == 0 {
                    let (a0, a1) = (amps[i], amps[i | mask]);
                    amps[i] = -i_unit * a1;
                    amps[i | mask] = i_unit * a0;
                }
            }
        }
        Pauli::Z => {
            for (i, a) in amps.iter_mut().enumerate() {
                if i & mask != 0 {
                    *a = -*a;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErasedQubit {
    pub qubit: usize,
    pub alpha: C64,
    pub beta: C64,
}

/// What happened in one noise realization.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseDescriptor {
    BitFlip { flipped: Vec<usize> },
    Depolarizing { paulis: Vec<Pauli> },
    Erasure { erased: Option<ErasedQubit> },
}

impl fmt::Display for NoiseDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseDescriptor::BitFlip { flipped } if flipped.is_empty() => write!(f, "bit_flip:-"),
            NoiseDescriptor::BitFlip { flipped } => {
                let list: Vec<String> = flipped.iter().map(|q| q.to_string()).collect();
                write!(f, "bit_flip:{}", list.join(","))
            }
            NoiseDescriptor::Depolarizing { paulis } => {
                write!(f, "depolarizing:{}", paulis.iter().map(|p| p.as_char()).collect::<String>())
            }
            NoiseDescriptor::Erasure { erased: None } => write!(f, "erasure:-"),
            NoiseDescriptor::Erasure { erased: Some(e) } => write!(
                f,
                "erasure:{}:{:.16e}:{:.16e}:{:.16e}:{:.16e}",
                e.qubit, e.alpha.re, e.alpha.im, e.beta.re, e.beta.im
            ),
        }
    }
}

impl FromStr for NoiseDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, body) = s
            .split_once(':')
            .ok_or_else(|| Error::Format(format!("bad noise descriptor '{s}'")))?;
        let bad = |_| Error::Format(format!("bad noise descriptor '{s}'"));
        match kind.parse::<NoiseKind>().map_err(bad)? {
            NoiseKind::BitFlip => {
                let flipped = if body == "-" {
                    Vec::new()
                } else {
                    body.split(',')
                        .map(|t| t.parse::<usize>().map_err(|_| Error::Format(format!("bad qubit '{t}'"))))
                        .collect::<Result<_>>()?
                };
                Ok(NoiseDescriptor::BitFlip { flipped })
            }
            NoiseKind::Depolarizing => Ok(NoiseDescriptor::Depolarizing {
                paulis: body.chars().map(Pauli::from_char).collect::<Result<_>>()?,
            }),
            NoiseKind::Erasure => {
                if body == "-" {
                    return Ok(NoiseDescriptor::Erasure { erased: None });
                }
                let parts: Vec<&str> = body.split(':').collect();
                if parts.len() != 5 {
                    return Err(Error::Format(format!("bad erasure descriptor '{s}'")));
                }
                let num = |t: &str| t.parse::<f64>().map_err(|_| Error::Format(format!("bad number '{t}'")));
                Ok(NoiseDescriptor::Erasure {
                    erased: Some(ErasedQubit {
                        qubit: parts[0].parse().map_err(|_| Error::Format(format!("bad qubit '{}'", parts[0])))?,
                        alpha: C64::new(num(parts[1])?, num(parts[2])?),
                        beta: C64::new(num(parts[3])?, num(parts[4])?),
                    }),
                })
            }
        }
    }
}

/// One pure component of a realization.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub probability: f64,
    pub state: StateVector,
}

/// A sampled or enumerated outcome of a noise channel acting on the target.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRealization {
    pub descriptor: NoiseDescriptor,
    /// Pure components; a single branch with probability 1 for pure realizations.
    pub branches: Vec<Branch>,
    pub weight: f64,
}

impl NoiseRealization {
    fn pure(descriptor: NoiseDescriptor, state: StateVector, weight: f64) -> Self {
        Self { descriptor, branches: vec![Branch { probability: 1.0, state }], weight }
    }

    pub fn is_pure(&self) -> bool {
        self.branches.len() == 1
    }

    /// The realized state of a pure realization (the first branch otherwise).
    pub fn state(&self) -> &StateVector {
        &self.branches[0].state
    }

    pub fn density_matrix(&self) -> ComplexMatrix {
        let dim = self.branches[0].state.dim();
        let mut rho = ComplexMatrix::zeros(dim);
        for b in &self.branches {
            rho.add_scaled(&b.state.projector(), C64::new(b.probability, 0.0)).unwrap();
        }
        rho
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetMode {
    /// Independent draws, each with weight `1/N`.
    Sampled,
    /// Every outcome of the channel, weighted by its probability.
    Exact,
}

impl DatasetMode {
    fn as_str(self) -> &'static str {
        match self {
            DatasetMode::Sampled => "sampled",
            DatasetMode::Exact => "exact",
        }
    }
}

/// Pure state with a mixing weight.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedState {
    pub weight: f64,
    pub state: StateVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisyDataset {
    pub target: TargetState,
    pub spec: NoiseSpec,
    pub samples: Vec<NoiseRealization>,
    pub mode: DatasetMode,
}

/// Hashable key identifying a state up to 1e-12 per amplitude component.
pub(crate) fn state_key(state: &StateVector) -> Vec<(i64, i64)> {
    state
        .amplitudes()
        .iter()
        .map(|a| ((a.re * 1e12).round() as i64, (a.im * 1e12).round() as i64))
        .collect()
}

impl NoisyDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.samples.iter().map(|s| s.weight).sum()
    }

    /// All pure components with weight `realization weight × branch
    /// probability`, in dataset order.
    pub fn pure_components(&self) -> Vec<WeightedState> {
        self.samples
            .iter()
            .flat_map(|s| {
                s.branches.iter().map(move |b| WeightedState {
                    weight: s.weight * b.probability,
                    state: b.state.clone(),
                })
            })
            .collect()
    }

    /// Like [`pure_components`](Self::pure_components), with identical states
    /// merged into the first occurrence. The channel-averaged state and every
    /// weighted sum over the dataset are unchanged by the merge.
    pub fn merged_components(&self) -> Vec<WeightedState> {
        merge_states(self.pure_components())
    }

    /// `Σ_x w_x ρ_x`.
    pub fn channel_average(&self) -> ComplexMatrix {
        let mut rho = ComplexMatrix::zeros(self.target.dim());
        for c in self.merged_components() {
            rho.add_scaled(&c.state.projector(), C64::new(c.weight, 0.0)).unwrap();
        }
        rho
    }

    /// Writes the dataset as line-oriented text (17 significant digits).
    pub fn write_text<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "bbqae-dataset 1")?;
        write!(out, "target {}", self.target.n_qubits())?;
        write_amplitudes(out, self.target.vector().amplitudes())?;
        writeln!(out)?;
        writeln!(out, "spec {} {:.16e} {}", self.spec.kind, self.spec.p, self.spec.seed)?;
        writeln!(out, "mode {}", self.mode.as_str())?;
        writeln!(out, "count {}", self.samples.len())?;
        for s in &self.samples {
            writeln!(out, "realization {} {:.16e} {}", s.descriptor, s.weight, s.branches.len())?;
            for b in &s.branches {
                write!(out, "branch {:.16e}", b.probability)?;
                write_amplitudes(out, b.state.amplitudes())?;
                writeln!(out)?;
            }
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
        let mut next = |what: &str| -> Result<Vec<String>> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("unexpected end of dataset, expected {what}")))??;
            let tokens: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
            if tokens.first().map(String::as_str) != Some(what) {
                return Err(Error::Format(format!("expected '{what}', found '{line}'")));
            }
            Ok(tokens)
        };
        let header = next("bbqae-dataset")?;
        if header.get(1).map(String::as_str) != Some("1") {
            return Err(Error::Format("unsupported dataset version".into()));
        }
        let target_line = next("target")?;
        let target = TargetState::from_vector(StateVector::new(parse_amplitudes(&target_line[2..])?)?);
        let spec_line = next("spec")?;
        if spec_line.len() != 4 {
            return Err(Error::Format("malformed spec line".into()));
        }
        let spec = NoiseSpec::new(
            spec_line[1].parse()?,
            parse_f64(&spec_line[2])?,
            spec_line[3].parse().map_err(|_| Error::Format("bad seed".into()))?,
        )?;
        let mode = match next("mode")?.get(1).map(String::as_str) {
            Some("sampled") => DatasetMode::Sampled,
            Some("exact") => DatasetMode::Exact,
            _ => return Err(Error::Format("bad dataset mode".into())),
        };
        let count: usize = next("count")?
            .get(1)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Format("bad count".into()))?;
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let r = next("realization")?;
            if r.len() != 4 {
                return Err(Error::Format("malformed realization line".into()));
            }
            let descriptor: NoiseDescriptor = r[1].parse()?;
            let weight = parse_f64(&r[2])?;
            let n_branches: usize = r[3].parse().map_err(|_| Error::Format("bad branch count".into()))?;
            let mut branches = Vec::with_capacity(n_branches);
            for _ in 0..n_branches {
                let b = next("branch")?;
                if b.len() < 2 {
                    return Err(Error::Format("malformed branch line".into()));
                }
                branches.push(Branch {
                    probability: parse_f64(&b[1])?,
                    state: StateVector::new(parse_amplitudes(&b[2..])?)?,
                });
            }
            samples.push(NoiseRealization { descriptor, branches, weight });
        }
        Ok(Self { target, spec, samples, mode })
    }
}

fn write_amplitudes<W: Write>(out: &mut W, amps: &[C64]) -> Result<()> {
    for a in amps {
        write!(out, " {:.16e} {:.16e}", a.re, a.im)?;
    }
    Ok(())
}

fn parse_f64(t: &str) -> Result<f64> {
    t.parse().map_err(|_| Error::Format(format!("bad number '{t}'")))
}

fn parse_amplitudes(tokens: &[String]) -> Result<Vec<C64>> {
    if !tokens.len().is_multiple_of(2) {
        return Err(Error::Format("odd number of amplitude components".into()));
    }
    tokens
        .chunks(2)
        .map(|c| Ok(C64::new(parse_f64(&c[0])?, parse_f64(&c[1])?)))
        .collect()
}

/// Merges identical states, keeping first-occurrence order.
pub fn merge_states(states: Vec<WeightedState>) -> Vec<WeightedState> {
    let mut index: HashMap<Vec<(i64, i64)>, usize> = HashMap::new();
    let mut out: Vec<WeightedState> = Vec::new();
    for s in states {
        match index.get(&state_key(&s.state)) {
            Some(&k) => out[k].weight += s.weight,
            None => {
                index.insert(state_key(&s.state), out.len());
                out.push(s);
            }
        }
    }
    out
}

fn flip_state(target: &TargetState, flipped: &[usize]) -> StateVector {
    let mut amps = target.vector().amplitudes().to_vec();
    for &q in flipped {
        apply_pauli(&mut amps, q, Pauli::X);
    }
    StateVector::new(amps).expect("Pauli operators preserve the norm")
}

fn check_samples(n_samples: usize) -> Result<()> {
    if n_samples == 0 {
        return Err(Error::Argument("dataset needs at least one sample".into()));
    }
    Ok(())
}

/// Independent bit-flip draws; sample `i` uses substream `i` of `seed`.
pub fn sample_bit_flip(target: &TargetState, p: f64, n_samples: usize, seed: u64) -> Result<NoisyDataset> {
    check_probability(NoiseKind::BitFlip, p)?;
    check_samples(n_samples)?;
    let weight = 1.0 / n_samples as f64;
    let samples = (0..n_samples)
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let flipped: Vec<usize> =
                (0..target.n_qubits()).filter(|_| rng.random::<f64>() < p).collect();
            let state = flip_state(target, &flipped);
            NoiseRealization::pure(NoiseDescriptor::BitFlip { flipped }, state, weight)
        })
        .collect();
    Ok(NoisyDataset {
        target: target.clone(),
        spec: NoiseSpec::new(NoiseKind::BitFlip, p, seed)?,
        samples,
        mode: DatasetMode::Sampled,
    })
}

/// All `2^n` flip subsets with weights `p^|S| (1−p)^(n−|S|)`; zero-weight
/// subsets are dropped. Subsets realizing the same state are kept apart.
pub fn enumerate_bit_flip(target: &TargetState, p: f64) -> Result<NoisyDataset> {
    check_probability(NoiseKind::BitFlip, p)?;
    let n = target.n_qubits();
    if n > MAX_ENUMERATION_QUBITS {
        return Err(Error::EnumerationLimit { n_qubits: n, limit: MAX_ENUMERATION_QUBITS });
    }
    let mut samples = Vec::new();
    for mask in 0u32..1 << n {
        let flipped: Vec<usize> = (0..n).filter(|q| mask >> (n - 1 - q) & 1 == 1).collect();
        let k = flipped.len() as i32;
        let weight = p.powi(k) * (1.0 - p).powi(n as i32 - k);
        if weight == 0.0 {
            continue;
        }
        let state = flip_state(target, &flipped);
        samples.push(NoiseRealization::pure(NoiseDescriptor::BitFlip { flipped }, state, weight));
    }
    Ok(NoisyDataset {
        target: target.clone(),
        spec: NoiseSpec::new(NoiseKind::BitFlip, p, 0)?,
        samples,
        mode: DatasetMode::Exact,
    })
}

/// Per-qubit Pauli draw: I with probability `1 − 3p/4`, X, Y, Z with `p/4` each.
pub fn apply_depolarizing_with<R: Rng + ?Sized>(
    state: &StateVector,
    p: f64,
    rng: &mut R,
) -> Result<NoiseRealization> {
    check_probability(NoiseKind::Depolarizing, p)?;
    let mut amps = state.amplitudes().to_vec();
    let paulis: Vec<Pauli> = (0..state.n_qubits())
        .map(|q| {
            let u: f64 = rng.random();
            let pauli = if u < p / 4.0 {
                Pauli::X
            } else if u < p / 2.0 {
                Pauli::Y
            } else if u < 3.0 * p / 4.0 {
                Pauli::Z
            } else {
                Pauli::I
            };
            apply_pauli(&mut amps, q, pauli);
            pauli
        })
        .collect();
    Ok(NoiseRealization::pure(
        NoiseDescriptor::Depolarizing { paulis },
        StateVector::new(amps)?,
        1.0,
    ))
}

pub fn apply_depolarizing(state: &StateVector, p: f64, seed: u64) -> Result<NoiseRealization> {
    apply_depolarizing_with(state, p, &mut substream(seed, 0))
}

/// Uniform point on the Bloch sphere as `(α, β)`.
pub fn random_qubit<R: Rng + ?Sized>(rng: &mut R) -> (C64, C64) {
    loop {
        let g: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return (C64::new(g[0] / norm, g[1] / norm), C64::new(g[2] / norm, g[3] / norm));
        }
    }
}

/// Replaces qubit `qubit` of `state` by `α|0⟩ + β|1⟩`, producing
/// `|φ⟩⟨φ|_q ⊗ Tr_q |ψ⟩⟨ψ|` as a list of pure branches.
pub fn erase_qubit(state: &StateVector, qubit: usize, alpha: C64, beta: C64) -> Result<Vec<Branch>> {
    let n = state.n_qubits();
    if qubit >= n {
        return Err(Error::Index(format!("qubit {qubit} on a {n}-qubit register")));
    }
    let mask = 1usize << (n - 1 - qubit);
    let amps = state.amplitudes();
    let mut branches = Vec::with_capacity(2);
    for bit in [0usize, mask] {
        // Remainder |r_b⟩ = (⟨b|_q ⊗ I)|ψ⟩, re-tensored with |φ⟩ on qubit q.
        let weight: f64 = (0..amps.len()).filter(|i| i & mask == bit).map(|i| amps[i].norm_sqr()).sum();
        if weight < 1e-15 {
            continue;
        }
        let scale = weight.sqrt();
        let mut out = vec![C64::new(0.0, 0.0); amps.len()];
        for i in (0..amps.len()).filter(|i| i & mask == bit) {
            let r = amps[i] / scale;
            out[i & !mask] = alpha * r;
            out[i | mask] = beta * r;
        }
        branches.push(Branch { probability: weight, state: StateVector::normalized(out)? });
    }
    Ok(branches)
}

pub fn apply_erasure_with<R: Rng + ?Sized>(
    target: &TargetState,
    p: f64,
    rng: &mut R,
) -> Result<NoiseRealization> {
    check_probability(NoiseKind::Erasure, p)?;
    if rng.random::<f64>() >= p {
        return Ok(NoiseRealization::pure(
            NoiseDescriptor::Erasure { erased: None },
            target.vector().clone(),
            1.0,
        ));
    }
    let qubit = rng.random_range(0..target.n_qubits());
    let (alpha, beta) = random_qubit(rng);
    Ok(NoiseRealization {
        descriptor: NoiseDescriptor::Erasure { erased: Some(ErasedQubit { qubit, alpha, beta }) },
        branches: erase_qubit(target.vector(), qubit, alpha, beta)?,
        weight: 1.0,
    })
}

pub fn apply_erasure(target: &TargetState, p: f64, seed: u64) -> Result<NoiseRealization> {
    apply_erasure_with(target, p, &mut substream(seed, 0))
}

/// Draws `n_samples` realizations of any channel (substream `i` per sample).
pub fn sample_dataset(target: &TargetState, spec: &NoiseSpec, n_samples: usize) -> Result<NoisyDataset> {
    check_probability(spec.kind, spec.p)?;
    if spec.kind == NoiseKind::BitFlip {
        return sample_bit_flip(target, spec.p, n_samples, spec.seed);
    }
    check_samples(n_samples)?;
    let weight = 1.0 / n_samples as f64;
    let samples = (0..n_samples)
        .map(|i| {
            let mut rng = substream(spec.seed, i as u64);
            let mut r = match spec.kind {
                NoiseKind::Depolarizing => apply_depolarizing_with(target.vector(), spec.p, &mut rng)?,
                _ => apply_erasure_with(target, spec.p, &mut rng)?,
            };
            r.weight = weight;
            Ok(r)
        })
        .collect::<Result<_>>()?;
    Ok(NoisyDataset { target: target.clone(), spec: *spec, samples, mode: DatasetMode::Sampled })
}

/// Frequency of one distinct realized state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateBin {
    pub frequency: f64,
    pub is_target: bool,
    /// Descriptor of the first realization that produced this state.
    pub example: NoiseDescriptor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributionReport {
    /// Distinct states, most frequent first.
    pub bins: Vec<StateBin>,
    pub ideal_frequency: f64,
    pub leading_non_ideal_frequency: f64,
}

impl DistributionReport {
    /// Whether the ideal state is strictly more frequent than every other state.
    pub fn ideal_is_most_frequent(&self) -> bool {
        self.ideal_frequency > self.leading_non_ideal_frequency
    }
}

/// Groups pure realizations by realized state.
pub fn distribution_report(dataset: &NoisyDataset) -> Result<DistributionReport> {
    if dataset.samples.iter().any(|s| !s.is_pure()) {
        return Err(Error::Argument("distribution report needs pure realizations".into()));
    }
    let mut index: HashMap<Vec<(i64, i64)>, usize> = HashMap::new();
    let mut bins: Vec<StateBin> = Vec::new();
    for s in &dataset.samples {
        let key = state_key(s.state());
        match index.get(&key) {
            Some(&k) => bins[k].frequency += s.weight,
            None => {
                index.insert(key, bins.len());
                bins.push(StateBin {
                    frequency: s.weight,
                    is_target: dataset.target.overlap_sqr(s.state().amplitudes()) > 1.0 - 1e-12,
                    example: s.descriptor.clone(),
                });
            }
        }
    }
    let total: f64 = bins.iter().map(|b| b.frequency).sum();
    for b in &mut bins {
        b.frequency /= total;
    }
    bins.sort_by(|a, b| b.frequency.total_cmp(&a.frequency));
    let ideal_frequency = bins.iter().filter(|b| b.is_target).map(|b| b.frequency).sum();
    let leading_non_ideal_frequency =
        bins.iter().filter(|b| !b.is_target).map(|b| b.frequency).fold(0.0, f64::max);
    Ok(DistributionReport { bins, ideal_frequency, leading_non_ideal_frequency })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::make_ghz;
    use crate::tensor::{embed_unitary, kron, pauli_x, pauli_y, pauli_z, QubitIndexSet};
    use proptest::prelude::*;

    fn three_sigma(w: f64, n: usize) -> f64 {
        3.0 * (w * (1.0 - w) / n as f64).sqrt()
    }

    fn ghz_fraction(ds: &NoisyDataset) -> f64 {
        ds.samples
            .iter()
            .filter(|s| ds.target.overlap_sqr(s.state().amplitudes()) > 1.0 - 1e-12)
            .map(|s| s.weight)
            .sum()
    }

    #[test]
    fn zero_noise_returns_target() {
        let g = make_ghz(4).unwrap();
        let ds = sample_bit_flip(&g, 0.0, 20, 3).unwrap();
        assert!(ds.samples.iter().all(|s| s.state() == g.vector()));
        let dep = apply_depolarizing(g.vector(), 0.0, 1).unwrap();
        assert_eq!(dep.state(), g.vector());
        let er = apply_erasure(&g, 0.0, 1).unwrap();
        assert_eq!(er.state(), g.vector());
        assert!(er.is_pure());
    }

    #[test]
    fn probability_ranges_are_enforced() {
        let g = make_ghz(2).unwrap();
        assert!(sample_bit_flip(&g, 0.6, 10, 0).is_err());
        assert!(sample_bit_flip(&g, 0.1, 0, 0).is_err());
        assert!(apply_depolarizing(g.vector(), 1.2, 0).is_err());
        assert!(NoiseSpec::new(NoiseKind::Erasure, 1.0, 0).is_ok());
    }

    #[test]
    fn sampled_ghz_fractions_match_enumeration() {
        let g = make_ghz(4).unwrap();
        let n = 100_000;
        for (p, expect) in [(0.5, 2.0 / 16.0), (0.1, 0.9f64.powi(4) + 0.1f64.powi(4))] {
            let ds = sample_bit_flip(&g, p, n, 17).unwrap();
            let frac = ghz_fraction(&ds);
            assert!((frac - expect).abs() < three_sigma(expect, n), "p={p}: {frac} vs {expect}");
        }
    }

    #[test]
    fn sampled_state_classes_converge_to_exact_weights() {
        let g = make_ghz(4).unwrap();
        let n = 100_000;
        let p = 0.3;
        let exact = distribution_report(&enumerate_bit_flip(&g, p).unwrap()).unwrap();
        let sampled = distribution_report(&sample_bit_flip(&g, p, n, 99).unwrap()).unwrap();
        assert_eq!(exact.bins.len(), 8);
        for bin in &exact.bins {
            let example = match &bin.example {
                NoiseDescriptor::BitFlip { flipped } => flip_state(&g, flipped),
                _ => unreachable!(),
            };
            let got: f64 = sampled
                .bins
                .iter()
                .filter(|b| match &b.example {
                    NoiseDescriptor::BitFlip { flipped } => {
                        crate::tensor::inner(flip_state(&g, flipped).amplitudes(), example.amplitudes()).norm() > 0.5
                    }
                    _ => false,
                })
                .map(|b| b.frequency)
                .sum();
            let w = bin.frequency;
            assert!((got - w).abs() < 4.0 * (w * (1.0 - w) / n as f64).sqrt());
        }
    }

    #[test]
    fn enumeration_weights() {
        let g = make_ghz(4).unwrap();
        let zero = enumerate_bit_flip(&g, 0.0).unwrap();
        assert_eq!(zero.samples.len(), 1);
        assert_eq!(zero.samples[0].weight, 1.0);

        let ds = enumerate_bit_flip(&g, 0.3).unwrap();
        assert_eq!(ds.samples.len(), 16);
        let ideal = ghz_fraction(&ds);
        assert!((ideal - (0.7f64.powi(4) + 0.3f64.powi(4))).abs() < 1e-12);
        assert!((ideal - 0.2482).abs() < 1e-12);

        for k in 0..=10 {
            let p = 0.05 * k as f64;
            let ds = enumerate_bit_flip(&g, p).unwrap();
            assert!((ds.total_weight() - 1.0).abs() < 1e-12);
        }
        let big = TargetState::from_vector(StateVector::basis(13, 0).unwrap());
        assert!(matches!(enumerate_bit_flip(&big, 0.1), Err(Error::EnumerationLimit { .. })));
    }

    #[test]
    fn depolarizing_full_strength_is_maximally_mixed() {
        let psi = StateVector::new(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)]).unwrap();
        let target = TargetState::from_vector(psi.clone());
        let ds = sample_dataset(&target, &NoiseSpec::new(NoiseKind::Depolarizing, 1.0, 5).unwrap(), 100_000).unwrap();
        let avg = ds.channel_average();
        let n = 100_000;
        // Each entry is a mean of bounded variables; 3σ with σ ≤ 1/(2√n) per component.
        let tol = 3.0 * 0.5 / (n as f64).sqrt();
        assert!((avg.get(0, 0).re - 0.5).abs() < tol);
        assert!(avg.get(0, 1).norm() < 2.0 * tol);
    }

    #[test]
    fn depolarizing_average_matches_kraus_composition() {
        let g = make_ghz(2).unwrap();
        let p = 0.2;
        // Exact channel: per qubit (1 − 3p/4)ρ + p/4 (XρX + YρY + ZρZ).
        let mut rho = g.projector().clone();
        for q in 0..2 {
            let set = QubitIndexSet::new(vec![q], 2).unwrap();
            let mut next = rho.scale(C64::new(1.0 - 0.75 * p, 0.0));
            for pauli in [pauli_x(), pauli_y(), pauli_z()] {
                let e = embed_unitary(&pauli, &set, 2).unwrap();
                let term = e.matmul(&rho).unwrap().matmul(&e.adjoint()).unwrap();
                next.add_scaled(&term, C64::new(p / 4.0, 0.0)).unwrap();
            }
            rho = next;
        }
        let n = 100_000;
        let ds = sample_dataset(&g, &NoiseSpec::new(NoiseKind::Depolarizing, p, 8).unwrap(), n).unwrap();
        let avg = ds.channel_average();
        let tol = 3.0 * 0.5 / (n as f64).sqrt();
        assert!(avg.max_abs_diff(&rho) < tol, "deviation {}", avg.max_abs_diff(&rho));
    }

    #[test]
    fn erasure_replaces_one_qubit() {
        let g = make_ghz(3).unwrap();
        let (alpha, beta) = (C64::new(0.6, 0.0), C64::new(0.0, 0.8));
        let branches = erase_qubit(g.vector(), 1, alpha, beta).unwrap();
        assert_eq!(branches.len(), 2);
        let mut rho = ComplexMatrix::zeros(8);
        for b in &branches {
            rho.add_scaled(&b.state.projector(), C64::new(b.probability, 0.0)).unwrap();
        }
        let phi = StateVector::new(vec![alpha, beta]).unwrap().projector();
        let erased = crate::tensor::partial_trace(&rho, &QubitIndexSet::new(vec![0, 2], 3).unwrap()).unwrap();
        assert!(erased.max_abs_diff(&phi) < 1e-15);
        // The remainder is Tr_1(ρ_GHZ) and the erased qubit is in a product with it.
        let rest = crate::tensor::partial_trace(&rho, &QubitIndexSet::new(vec![1], 3).unwrap()).unwrap();
        let expect_rest = crate::tensor::partial_trace(g.projector(), &QubitIndexSet::new(vec![1], 3).unwrap()).unwrap();
        assert!(rest.max_abs_diff(&expect_rest) < 1e-15);
        let product = kron(&kron(&ComplexMatrix::identity(1), &phi).unwrap(), &ComplexMatrix::identity(1)).unwrap();
        assert_eq!(product.dim(), 2);
    }

    #[test]
    fn erasure_amplitudes_are_uniform_on_the_sphere() {
        let mut rng = substream(31, 0);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let (a, b) = random_qubit(&mut rng);
            assert!((a.norm_sqr() + b.norm_sqr() - 1.0).abs() < 1e-12);
            sum += a.norm_sqr();
        }
        // |α|² is uniform on [0, 1] for Haar qubits: variance 1/12.
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 3.0 * (1.0 / 12.0 / n as f64).sqrt());
    }

    #[test]
    fn distribution_report_exact_weights() {
        let g = make_ghz(4).unwrap();
        let p: f64 = 0.2;
        let report = distribution_report(&enumerate_bit_flip(&g, p).unwrap()).unwrap();
        assert!((report.ideal_frequency - ((1.0 - p).powi(4) + p.powi(4))).abs() < 1e-12);
        let single = p * (1.0 - p).powi(3) + p.powi(3) * (1.0 - p);
        assert!((report.leading_non_ideal_frequency - single).abs() < 1e-12);
        assert!(report.ideal_is_most_frequent());

        let half = distribution_report(&enumerate_bit_flip(&g, 0.5).unwrap()).unwrap();
        assert!((half.ideal_frequency - half.leading_non_ideal_frequency).abs() < 1e-12);
        assert!(!half.ideal_is_most_frequent());

        let clean = distribution_report(&sample_bit_flip(&g, 0.0, 200, 1).unwrap()).unwrap();
        assert_eq!(clean.bins.len(), 1);
        assert!((clean.ideal_frequency - 1.0).abs() < 1e-12);
    }

    #[test]
    fn finite_samples_can_hide_the_ideal_state() {
        let g = make_ghz(4).unwrap();
        let overtaken = (0..10)
            .filter(|&s| {
                let ds = sample_bit_flip(&g, 0.4, 200, crate::rng::derive_seed(2024, &[s])).unwrap();
                !distribution_report(&ds).unwrap().ideal_is_most_frequent()
            })
            .count();
        assert!(overtaken >= 1);
    }

    #[test]
    fn merging_preserves_weights_and_average() {
        let g = make_ghz(4).unwrap();
        let ds = sample_bit_flip(&g, 0.3, 200, 4).unwrap();
        let merged = ds.merged_components();
        assert!(merged.len() <= 8);
        assert!((merged.iter().map(|m| m.weight).sum::<f64>() - 1.0).abs() < 1e-12);
        let mut full = ComplexMatrix::zeros(16);
        for c in ds.pure_components() {
            full.add_scaled(&c.state.projector(), C64::new(c.weight, 0.0)).unwrap();
        }
        assert!(full.max_abs_diff(&ds.channel_average()) < 1e-14);
    }

    #[test]
    fn dataset_text_round_trip() {
        let g = make_ghz(3).unwrap();
        for kind in NoiseKind::ALL {
            let spec = NoiseSpec::new(kind, 0.4, 12).unwrap();
            let ds = sample_dataset(&g, &spec, 25).unwrap();
            let mut buf = Vec::new();
            ds.write_text(&mut buf).unwrap();
            let back = NoisyDataset::read_text(buf.as_slice()).unwrap();
            assert_eq!(back, ds);
        }
        assert!(NoisyDataset::read_text("nonsense".as_bytes()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sampling_is_deterministic(seed in any::<u64>(), p in 0.0f64..0.5, kind_idx in 0usize..3) {
            let g = make_ghz(4).unwrap();
            let kind = NoiseKind::ALL[kind_idx];
            let spec = NoiseSpec::new(kind, p, seed).unwrap();
            let a = sample_dataset(&g, &spec, 30).unwrap();
            let b = sample_dataset(&g, &spec, 30).unwrap();
            let (mut ba, mut bb) = (Vec::new(), Vec::new());
            a.write_text(&mut ba).unwrap();
            b.write_text(&mut bb).unwrap();
            prop_assert_eq!(ba, bb);
            for s in &a.samples {
                for br in &s.branches {
                    prop_assert!((br.state.norm() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
