//! Network topologies, per-neuron unitaries and the layerwise feedforward map.
//!
//! Layer `l` (1-based, `l ≥ 2`) holds `N_l` neurons. Neuron `j` owns a unitary
//! `U^l_j` on all `N_{l−1}` qubits of the previous layer followed by qubit `j`
//! of layer `l` (as the least significant factor). The layer unitary is
//! `𝒰^l = U^l_{N_l} ⋯ U^l_1`, i.e. neurons are applied with `j` ascending.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::channels::NoisyDataset;
use crate::error::{Error, Result};
use crate::factored::{self, Plan, Vectors};
use crate::rng::{derive_seed, substream};
use crate::states::{renyi2_entropy, LayerEntropyRecord};
use crate::tensor::{
    ground_projector, haar_unitary, kron, partial_trace, read_cmat, write_cmat, ComplexMatrix, Embedding,
    QubitIndexSet, StateVector, C64, MAX_DIM,
};

/// Largest register simulated as one global pure state.
pub const MAX_GLOBAL_QUBITS: usize = 14;

/// Layer sizes with an optional brainbox designation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NetworkTopology {
    sizes: Vec<usize>,
    /// 1-based inclusive layer range of the brainbox.
    brainbox: Option<(usize, usize)>,
}

impl NetworkTopology {
    /// A general dissipative network: at least two layers, every pair of
    /// adjacent layers within the simulation cap.
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Argument(format!("a network needs at least 2 layers, got {}", sizes.len())));
        }
        if sizes.contains(&0) {
            return Err(Error::Argument("layer sizes must be positive".into()));
        }
        for w in sizes.windows(2) {
            if w[0] + w[1] > MAX_GLOBAL_QUBITS {
                return Err(Error::DimensionLimit { dim: 1 << (w[0] + w[1]).min(62), limit: MAX_DIM });
            }
        }
        Ok(Self { sizes, brainbox: None })
    }

    /// An autoencoder with the brainbox occupying layers `span.0..=span.1`.
    pub fn with_brainbox(sizes: Vec<usize>, span: (usize, usize)) -> Result<Self> {
        let mut t = Self::new(sizes)?;
        let l = t.sizes.len();
        if l < 3 {
            return Err(Error::Argument("an autoencoder needs at least 3 layers".into()));
        }
        if t.sizes[0] != t.sizes[l - 1] {
            return Err(Error::Argument(format!(
                "input and output sizes differ: {} vs {}",
                t.sizes[0],
                t.sizes[l - 1]
            )));
        }
        let (a, b) = span;
        if a < 2 || b < a || b > l - 1 {
            return Err(Error::Argument(format!("brainbox span {a}..{b} outside the hidden layers")));
        }
        if t.sizes[a - 1..b].iter().any(|&n| n >= t.sizes[0]) {
            return Err(Error::Argument("brainbox layers must be narrower than the input".into()));
        }
        t.brainbox = Some(span);
        Ok(t)
    }

    /// The `(N_in, 2, brainbox…, 2, N_in)` shell.
    pub fn brainbox_shell(n_in: usize, brainbox: &[usize]) -> Result<Self> {
        if brainbox.is_empty() {
            return Err(Error::Argument("empty brainbox".into()));
        }
        let mut sizes = vec![n_in, 2];
        sizes.extend_from_slice(brainbox);
        sizes.extend([2, n_in]);
        Self::with_brainbox(sizes, (3, 2 + brainbox.len()))
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len()
    }

    /// `N_l` for 1-based `l`.
    pub fn size(&self, layer: usize) -> usize {
        self.sizes[layer - 1]
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn total_qubits(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn brainbox(&self) -> Option<(usize, usize)> {
        self.brainbox
    }

    /// Brainbox layer sizes, e.g. `[2, 1]`.
    pub fn brainbox_sizes(&self) -> Option<&[usize]> {
        self.brainbox.map(|(a, b)| &self.sizes[a - 1..b])
    }

    /// 1-based index of the narrowest hidden layer (first one on ties).
    pub fn bottleneck_layer(&self) -> usize {
        let hidden = 2..self.sizes.len();
        hidden.min_by_key(|&l| self.sizes[l - 1]).unwrap_or(1)
    }

    /// Brainbox label such as `(2,1)`.
    pub fn brainbox_label(&self) -> Option<String> {
        self.brainbox_sizes().map(|s| format!("({})", join(s)))
    }
}

fn join(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl fmt::Display for NetworkTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = match self.brainbox {
            None => self.sizes.iter().map(|s| s.to_string()).collect(),
            Some((a, b)) => {
                let mut parts: Vec<String> = self.sizes[..a - 1].iter().map(|s| s.to_string()).collect();
                parts.push(format!("|{}|", join(&self.sizes[a - 1..b])));
                parts.extend(self.sizes[b..].iter().map(|s| s.to_string()));
                parts
            }
        };
        write!(f, "({})", parts.join(","))
    }
}

/// Parses `(4,2,1,2,4)` or `(4,2,|1,2|,2,4)`.
impl FromStr for NetworkTopology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let body = s
            .trim()
            .strip_prefix('(')
            .and_then(|b| b.strip_suffix(')'))
            .ok_or_else(|| Error::Config(format!("topology '{s}' must be parenthesized")))?;
        let mut sizes = Vec::new();
        let mut bars = Vec::new();
        for token in body.split(',') {
            let mut t = token.trim();
            if let Some(rest) = t.strip_prefix('|') {
                bars.push(sizes.len() + 1);
                t = rest.trim();
            }
            let closes = t.ends_with('|');
            let t = t.trim_end_matches('|').trim();
            sizes.push(t.parse::<usize>().map_err(|_| Error::Config(format!("bad layer size '{token}' in '{s}'")))?);
            if closes {
                bars.push(sizes.len());
            }
        }
        match bars.as_slice() {
            [] => Self::new(sizes),
            [a, b] => Self::with_brainbox(sizes, (*a, *b)),
            _ => Err(Error::Config(format!("unbalanced brainbox bars in '{s}'"))),
        }
    }
}

/// Parses a brainbox label such as `(1,2)` or `1,2`.
pub fn parse_brainbox(label: &str) -> Result<Vec<usize>> {
    let body = label.trim().trim_start_matches('(').trim_end_matches(')');
    body.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad brainbox label '{label}'"))))
        .collect()
}

/// All per-neuron unitaries of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumMap {
    topology: NetworkTopology,
    /// `unitaries[l − 2][j − 1] = U^l_j`.
    unitaries: Vec<Vec<ComplexMatrix>>,
}

/// Application-order tag stored in checkpoints: neurons with `j` ascending.
pub const ORDER_ASCENDING: u8 = 0;

const CHECKPOINT_MAGIC: &[u8; 4] = b"BBQC";
const CHECKPOINT_VERSION: u16 = 1;

impl QuantumMap {
    pub fn from_unitaries(topology: NetworkTopology, unitaries: Vec<Vec<ComplexMatrix>>) -> Result<Self> {
        let sizes = topology.sizes();
        if unitaries.len() != sizes.len() - 1 {
            return Err(Error::Shape(format!("{} unitary layers for {topology}", unitaries.len())));
        }
        for (k, layer) in unitaries.iter().enumerate() {
            if layer.len() != sizes[k + 1] {
                return Err(Error::Shape(format!("layer {} has {} unitaries", k + 2, layer.len())));
            }
            for u in layer {
                if u.dim() != 1 << (sizes[k] + 1) {
                    return Err(Error::Shape(format!("unitary of dimension {} in layer {}", u.dim(), k + 2)));
                }
                let err = u.unitarity_error();
                if err > 1e-10 {
                    return Err(Error::NumericDrift(err));
                }
            }
        }
        Ok(Self { topology, unitaries })
    }

    pub fn identity(topology: &NetworkTopology) -> Self {
        let s = topology.sizes();
        let unitaries = (1..s.len())
            .map(|k| (0..s[k]).map(|_| ComplexMatrix::identity(1 << (s[k - 1] + 1))).collect())
            .collect();
        Self { topology: topology.clone(), unitaries }
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    /// `U^l_j` with 1-based `layer ≥ 2` and `neuron ≥ 1`.
    pub fn unitary(&self, layer: usize, neuron: usize) -> &ComplexMatrix {
        &self.unitaries[layer - 2][neuron - 1]
    }

    pub fn set_unitary(&mut self, layer: usize, neuron: usize, u: ComplexMatrix) -> Result<()> {
        let slot = self
            .unitaries
            .get_mut(layer.wrapping_sub(2))
            .and_then(|l| l.get_mut(neuron.wrapping_sub(1)))
            .ok_or_else(|| Error::Index(format!("no neuron {neuron} in layer {layer}")))?;
        if slot.dim() != u.dim() {
            return Err(Error::Shape(format!("expected dimension {}, got {}", slot.dim(), u.dim())));
        }
        *slot = u;
        Ok(())
    }

    /// Unitaries per layer transition, starting with layer 2.
    pub fn layers(&self) -> &[Vec<ComplexMatrix>] {
        &self.unitaries
    }

    pub fn max_unitarity_error(&self) -> f64 {
        self.unitaries.iter().flatten().map(|u| u.unitarity_error()).fold(0.0, f64::max)
    }

    pub fn write_checkpoint<W: Write>(&self, out: &mut W, iteration: u64) -> Result<()> {
        let sizes = self.topology.sizes();
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(sizes.len() as u16).to_le_bytes())?;
        for &s in sizes {
            out.write_all(&(s as u16).to_le_bytes())?;
        }
        let (a, b) = self.topology.brainbox().unwrap_or((0, 0));
        out.write_all(&(a as u16).to_le_bytes())?;
        out.write_all(&(b as u16).to_le_bytes())?;
        out.write_all(&[ORDER_ASCENDING])?;
        out.write_all(&iteration.to_le_bytes())?;
        for u in self.unitaries.iter().flatten() {
            write_cmat(out, u)?;
        }
        Ok(())
    }

    /// Reads a checkpoint, returning the map and its iteration number.
    pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<(Self, u64)> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = read_u16(input)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let n_layers = read_u16(input)? as usize;
        let sizes = (0..n_layers).map(|_| Ok(read_u16(input)? as usize)).collect::<Result<Vec<_>>>()?;
        let (a, b) = (read_u16(input)? as usize, read_u16(input)? as usize);
        let mut tag = [0u8; 1];
        input.read_exact(&mut tag)?;
        if tag[0] != ORDER_ASCENDING {
            return Err(Error::Format(format!("unknown application order {}", tag[0])));
        }
        let mut it = [0u8; 8];
        input.read_exact(&mut it)?;
        let topology = if a == 0 {
            NetworkTopology::new(sizes)?
        } else {
            NetworkTopology::with_brainbox(sizes, (a, b))?
        };
        let s = topology.sizes().to_vec();
        let mut unitaries = Vec::with_capacity(s.len() - 1);
        for &n in &s[1..] {
            unitaries.push((0..n).map(|_| read_cmat(input)).collect::<Result<Vec<_>>>()?);
        }
        Ok((Self::from_unitaries(topology, unitaries)?, u64::from_le_bytes(it)))
    }
}

fn read_u16<R: Read>(input: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    input.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

/// Haar-random map. `U^l_j` is drawn from a stream keyed by
/// `(seed, l, j, dim)`, so networks sharing a unitary shape at the same
/// position start from the same matrix.
pub fn init_random_map(topology: &NetworkTopology, seed: u64) -> QuantumMap {
    let s = topology.sizes();
    let unitaries = (1..s.len())
        .map(|k| {
            let dim = 1usize << (s[k - 1] + 1);
            (0..s[k])
                .map(|j| {
                    let key = derive_seed(seed, &[(k + 1) as u64, (j + 1) as u64, dim as u64]);
                    haar_unitary(dim, &mut substream(key, 0))
                })
                .collect()
        })
        .collect();
    QuantumMap { topology: topology.clone(), unitaries }
}

/// Layer states `ρ^1, …, ρ^L` of one feedforward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStateCache {
    pub layers: Vec<ComplexMatrix>,
}

impl LayerStateCache {
    pub fn output(&self) -> &ComplexMatrix {
        self.layers.last().unwrap()
    }

    /// `ρ^l` for 1-based `l`.
    pub fn layer(&self, l: usize) -> &ComplexMatrix {
        &self.layers[l - 1]
    }
}

/// Dense layerwise feedforward: `ρ^l = Tr_{l−1}(𝒰^l (ρ^{l−1} ⊗ |0⟩⟨0|) 𝒰^l†)`.
pub fn feedforward(map: &QuantumMap, input: &ComplexMatrix) -> Result<LayerStateCache> {
    let sizes = map.topology.sizes();
    if input.dim() != 1 << sizes[0] {
        return Err(Error::Shape(format!(
            "input of dimension {} for a {}-qubit input layer",
            input.dim(),
            sizes[0]
        )));
    }
    let mut layers = vec![input.clone()];
    for (k, us) in map.unitaries.iter().enumerate() {
        let (m, n) = (sizes[k], sizes[k + 1]);
        let mut rho = kron(layers.last().unwrap(), &ground_projector(n)?)?;
        for (j, u) in us.iter().enumerate() {
            let mut qubits: Vec<usize> = (0..m).collect();
            qubits.push(m + j);
            rho = Embedding::on(&qubits, m + n)?.conjugate(u, &rho);
        }
        layers.push(partial_trace(&rho, &QubitIndexSet::new((0..m).collect(), m + n)?)?);
    }
    Ok(LayerStateCache { layers })
}

fn check_global(topology: &NetworkTopology) -> Result<usize> {
    let total = topology.total_qubits();
    if total > MAX_GLOBAL_QUBITS {
        return Err(Error::DimensionLimit { dim: 1usize << total.min(62), limit: MAX_DIM });
    }
    Ok(total)
}

/// Global register simulation without intermediate traces.
struct GlobalPlan {
    total: usize,
    /// Per transition, one embedding per neuron.
    neurons: Vec<Vec<Embedding>>,
    /// Per layer, the embedding of its qubits.
    layers: Vec<Embedding>,
}

impl GlobalPlan {
    fn new(topology: &NetworkTopology) -> Result<Self> {
        let total = check_global(topology)?;
        let sizes = topology.sizes();
        let offsets: Vec<usize> = sizes.iter().scan(0, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
        let layers = sizes
            .iter()
            .zip(&offsets)
            .map(|(&s, &o)| Embedding::on(&(o..o + s).collect::<Vec<_>>(), total))
            .collect::<Result<_>>()?;
        let neurons = (1..sizes.len())
            .map(|k| {
                (0..sizes[k])
                    .map(|j| {
                        let mut q: Vec<usize> = (offsets[k - 1]..offsets[k - 1] + sizes[k - 1]).collect();
                        q.push(offsets[k] + j);
                        Embedding::on(&q, total)
                    })
                    .collect::<Result<_>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self { total, neurons, layers })
    }

    fn lift(&self, input: &[C64]) -> Vec<C64> {
        let shift = self.total - self.layers[0].sub_dim().trailing_zeros() as usize;
        let mut psi = vec![C64::new(0.0, 0.0); 1 << self.total];
        for (i, &a) in input.iter().enumerate() {
            psi[i << shift] = a;
        }
        psi
    }

    /// Adds `weight ·` (layer-l marginal) for every layer, reading layer 1 at
    /// input time and layer `l ≥ 2` right after `𝒰^l`.
    fn accumulate(&self, map: &QuantumMap, input: &[C64], weight: f64, acc: &mut [ComplexMatrix]) {
        let mut psi = self.lift(input);
        self.layers[0].accumulate_outer(&psi, &psi, weight, &mut acc[0]);
        for (k, us) in map.unitaries.iter().enumerate() {
            for (emb, u) in self.neurons[k].iter().zip(us) {
                emb.apply_vec(u, &mut psi);
            }
            self.layers[k + 1].accumulate_outer(&psi, &psi, weight, &mut acc[k + 1]);
        }
    }

    fn zero_marginals(&self) -> Vec<ComplexMatrix> {
        self.layers.iter().map(|e| ComplexMatrix::zeros(e.sub_dim())).collect()
    }
}

/// Applies every neuron unitary to `input ⊗ |0…0⟩` on the concatenated
/// register of all layers.
pub fn feedforward_global(map: &QuantumMap, input: &StateVector) -> Result<StateVector> {
    let plan = GlobalPlan::new(&map.topology)?;
    check_input(map, input)?;
    let mut psi = plan.lift(input.amplitudes());
    for (k, us) in map.unitaries.iter().enumerate() {
        for (emb, u) in plan.neurons[k].iter().zip(us) {
            emb.apply_vec(u, &mut psi);
        }
    }
    StateVector::new(psi)
}

fn check_input(map: &QuantumMap, input: &StateVector) -> Result<()> {
    if input.n_qubits() != map.topology.input_size() {
        return Err(Error::Shape(format!(
            "{}-qubit input for a {}-qubit input layer",
            input.n_qubits(),
            map.topology.input_size()
        )));
    }
    Ok(())
}

/// Layer marginals from the global simulation: layer 1 at input time and
/// layer `l ≥ 2` just after `𝒰^l`.
pub fn global_layer_marginals(map: &QuantumMap, input: &StateVector) -> Result<Vec<ComplexMatrix>> {
    let plan = GlobalPlan::new(&map.topology)?;
    check_input(map, input)?;
    let mut acc = plan.zero_marginals();
    plan.accumulate(map, input.amplitudes(), 1.0, &mut acc);
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntropyMode {
    /// Entropy of the dataset-averaged layer marginal.
    ChannelAveraged,
    /// Weighted mean of the entropies of each realization's marginal.
    PerRealization,
}

impl EntropyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EntropyMode::ChannelAveraged => "channel_averaged",
            EntropyMode::PerRealization => "per_realization",
        }
    }
}

impl FromStr for EntropyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "channel_averaged" => Ok(EntropyMode::ChannelAveraged),
            "per_realization" => Ok(EntropyMode::PerRealization),
            other => Err(Error::Config(format!("unknown entropy mode '{other}'"))),
        }
    }
}

/// Rényi-2 entropy of every layer for the dataset, from the global
/// pure-state simulation of each noise realization.
pub fn layer_entropies(
    map: &QuantumMap,
    dataset: &NoisyDataset,
    mode: EntropyMode,
    iteration: usize,
) -> Result<Vec<LayerEntropyRecord>> {
    let plan = GlobalPlan::new(&map.topology)?;
    if dataset.target.n_qubits() != map.topology.input_size() {
        return Err(Error::Shape("dataset does not match the input layer".into()));
    }
    let entropies = match mode {
        EntropyMode::ChannelAveraged => {
            let mut acc = plan.zero_marginals();
            for c in dataset.merged_components() {
                plan.accumulate(map, c.state.amplitudes(), c.weight, &mut acc);
            }
            let total = dataset.total_weight();
            acc.iter()
                .map(|rho| renyi2_entropy(&rho.scale(C64::new(1.0 / total, 0.0))))
                .collect::<Result<Vec<_>>>()?
        }
        EntropyMode::PerRealization => {
            // Realizations with identical branch lists share one simulation.
            let mut groups: HashMap<String, (f64, usize)> = HashMap::new();
            let mut order = Vec::new();
            for (i, s) in dataset.samples.iter().enumerate() {
                let key = s
                    .branches
                    .iter()
                    .map(|b| format!("{:?}", (b.probability, b.state.amplitudes())))
                    .collect::<String>();
                let entry = groups.entry(key).or_insert_with(|| {
                    order.push(i);
                    (0.0, i)
                });
                entry.0 += s.weight;
            }
            let mut weights: HashMap<usize, f64> = HashMap::new();
            for (w, i) in groups.values() {
                weights.insert(*i, *w);
            }
            let mut sums = vec![0.0; map.topology.n_layers()];
            for i in order {
                let s = &dataset.samples[i];
                let mut acc = plan.zero_marginals();
                for b in &s.branches {
                    plan.accumulate(map, b.state.amplitudes(), b.probability, &mut acc);
                }
                for (sum, rho) in sums.iter_mut().zip(&acc) {
                    *sum += weights[&i] * renyi2_entropy(rho)?;
                }
            }
            let total = dataset.total_weight();
            sums.iter().map(|s| s / total).collect()
        }
    };
    Ok(entropies
        .into_iter()
        .enumerate()
        .map(|(k, entropy)| LayerEntropyRecord { iteration, layer_index: k + 1, entropy })
        .collect())
}

/// Factored input of one realization: `√p_b |ψ_b⟩` per branch.
pub(crate) fn realization_vectors(branches: &[crate::channels::Branch]) -> Vectors {
    branches
        .iter()
        .map(|b| b.state.amplitudes().iter().map(|a| a * b.probability.sqrt()).collect())
        .collect()
}

/// Per-realization output fidelities `⟨ψ|ρ^out_x|ψ⟩`.
pub fn output_fidelities(map: &QuantumMap, dataset: &NoisyDataset) -> Result<Vec<f64>> {
    check_dataset(map, dataset)?;
    let plan = Plan::new(map.topology.sizes())?;
    let psi = dataset.target.vector().amplitudes();
    use rayon::prelude::*;
    Ok(dataset
        .samples
        .par_iter()
        .map(|s| {
            let out = factored::output(&plan, map, realization_vectors(&s.branches));
            factored::pure_overlap(&out, psi).clamp(0.0, 1.0)
        })
        .collect())
}

/// Weighted mean output fidelity with the ideal target over the dataset.
pub fn mean_fidelity(map: &QuantumMap, dataset: &NoisyDataset) -> Result<f64> {
    check_dataset(map, dataset)?;
    let plan = Plan::new(map.topology.sizes())?;
    let samples: Vec<factored::Sample> = merged_inputs(dataset)
        .into_iter()
        .map(|(weight, input)| factored::Sample { weight, input, objective: 0 })
        .collect();
    let target = dataset.target.projector().clone();
    let scores = factored::evaluate(&plan, map, &[target], dataset.target.vector().amplitudes(), &samples);
    Ok((scores.fidelity / dataset.total_weight()).clamp(0.0, 1.0))
}

pub(crate) fn check_dataset(map: &QuantumMap, dataset: &NoisyDataset) -> Result<()> {
    let (n_in, n_out) = (map.topology.input_size(), map.topology.output_size());
    if dataset.target.n_qubits() != n_in || n_in != n_out {
        return Err(Error::Shape(format!(
            "{}-qubit dataset for network {}",
            dataset.target.n_qubits(),
            map.topology
        )));
    }
    Ok(())
}

/// Weighted factored inputs: identical pure states merged, mixed
/// realizations kept whole.
pub(crate) fn merged_inputs(dataset: &NoisyDataset) -> Vec<(f64, Vectors)> {
    if dataset.samples.iter().any(|s| !s.is_pure()) {
        return dataset.samples.iter().map(|s| (s.weight, realization_vectors(&s.branches))).collect();
    }
    dataset
        .merged_components()
        .into_iter()
        .map(|c| (c.weight, vec![c.state.into_amplitudes()]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{sample_bit_flip, enumerate_bit_flip};
    use crate::states::{make_ghz, renyi2_entropy};
    use crate::tensor::haar_unitary;
    use proptest::prelude::*;

    fn random_pure(n: usize, seed: u64) -> StateVector {
        let u = haar_unitary(1 << n, &mut substream(seed, 77));
        StateVector::new((0..1 << n).map(|i| u.get(i, 0)).collect()).unwrap()
    }

    fn random_density(n: usize, seed: u64) -> ComplexMatrix {
        let dim = 1 << n;
        let mut rho = ComplexMatrix::zeros(dim);
        for k in 0..3 {
            let v = random_pure(n, seed.wrapping_mul(7).wrapping_add(k));
            rho.add_scaled(&v.projector(), C64::new([0.5, 0.3, 0.2][k as usize], 0.0)).unwrap();
        }
        rho
    }

    fn swap() -> ComplexMatrix {
        ComplexMatrix::from_fn(4, |i, j| {
            let swapped = ((j & 1) << 1) | (j >> 1);
            if i == swapped { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }
        })
    }

    #[test]
    fn topology_parsing_and_display() {
        let t: NetworkTopology = "(4,2,|1,2|,2,4)".parse().unwrap();
        assert_eq!(t.sizes(), &[4, 2, 1, 2, 2, 4]);
        assert_eq!(t.brainbox(), Some((3, 4)));
        assert_eq!(t.brainbox_label().unwrap(), "(1,2)");
        assert_eq!(t.to_string(), "(4,2,|1,2|,2,4)");
        assert_eq!(NetworkTopology::brainbox_shell(4, &[1, 2]).unwrap(), t);

        let plain: NetworkTopology = "(2,1,2)".parse().unwrap();
        assert_eq!(plain.brainbox(), None);
        assert_eq!(plain.bottleneck_layer(), 2);
        assert!("(4,2,|5|,2,4)".parse::<NetworkTopology>().is_err());
        assert!("(4,2,|1,2,4)".parse::<NetworkTopology>().is_err());
        assert!("4,2".parse::<NetworkTopology>().is_err());
        assert!(NetworkTopology::new(vec![8, 8]).is_err());
        assert_eq!(parse_brainbox("(2,1)").unwrap(), vec![2, 1]);
    }

    #[test]
    fn random_maps_are_unitary_and_deterministic() {
        let t: NetworkTopology = "(4,2,1,2,4)".parse().unwrap();
        let a = init_random_map(&t, 5);
        assert!(a.max_unitarity_error() < 1e-10);
        assert_eq!(a, init_random_map(&t, 5));
        assert_ne!(a, init_random_map(&t, 6));

        // Shared shapes start equal across topologies.
        let b = init_random_map(&"(4,2,1,1,2,4)".parse().unwrap(), 5);
        assert_eq!(a.unitary(2, 1), b.unitary(2, 1));
        assert_eq!(a.unitary(3, 1), b.unitary(3, 1));
    }

    #[test]
    fn haar_first_moment() {
        let n = 10_000;
        let mut sum = 0.0;
        for i in 0..n {
            sum += haar_unitary(4, &mut substream(i, 3)).get(0, 0).norm_sqr();
        }
        let mean = sum / n as f64;
        // |U00|² ~ Beta(1, 3): variance 3/80.
        assert!((mean - 0.25).abs() < 3.0 * (3.0 / 80.0 / n as f64).sqrt());
    }

    #[test]
    fn identity_map_outputs_ground_state() {
        let t: NetworkTopology = "(2,1,2)".parse().unwrap();
        let rho = random_density(2, 3);
        let cache = feedforward(&QuantumMap::identity(&t), &rho).unwrap();
        assert!(cache.output().max_abs_diff(&ground_projector(2).unwrap()) < 1e-14);

        let psi = random_pure(2, 4);
        let global = feedforward_global(&QuantumMap::identity(&t), &psi).unwrap();
        let mut expect = vec![C64::new(0.0, 0.0); 32];
        for (i, a) in psi.amplitudes().iter().enumerate() {
            expect[i << 3] = *a;
        }
        assert_eq!(global.amplitudes(), expect.as_slice());
    }

    #[test]
    fn swap_teleports_one_qubit() {
        let t = NetworkTopology::new(vec![1, 1]).unwrap();
        let map = QuantumMap::from_unitaries(t, vec![vec![swap()]]).unwrap();
        let rho = random_density(1, 9);
        let out = feedforward(&map, &rho).unwrap();
        assert!(out.output().max_abs_diff(&rho) < 1e-14);
    }

    #[test]
    fn deferred_trace_matches_layerwise() {
        for (spec, seed) in [("(2,1,2)", 1), ("(3,2,1,2,3)", 2), ("(1,1)", 3)] {
            let t: NetworkTopology = spec.parse().unwrap();
            let map = init_random_map(&t, seed);
            let psi = random_pure(t.input_size(), seed);
            let dense = feedforward(&map, &psi.projector()).unwrap();
            let global = global_layer_marginals(&map, &psi).unwrap();
            for (a, b) in dense.layers.iter().zip(&global) {
                assert!(a.max_abs_diff(b) < 1e-10);
            }
            assert!((feedforward_global(&map, &psi).unwrap().norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn factored_path_matches_dense() {
        let t: NetworkTopology = "(3,2,1,2,3)".parse().unwrap();
        let map = init_random_map(&t, 11);
        let plan = Plan::new(t.sizes()).unwrap();
        let rho = random_density(3, 2);
        let (values, vecs) = rho.hermitian_eigen();
        let input: Vectors = values
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > 1e-14)
            .map(|(k, &l)| (0..8).map(|i| vecs.get(i, k) * l.sqrt()).collect())
            .collect();
        let layers = factored::forward(&plan, &map, input);
        let dense = feedforward(&map, &rho).unwrap();
        for (vs, d) in layers.iter().zip(&dense.layers) {
            assert!(factored::to_density(vs, d.dim()).max_abs_diff(d) < 1e-12);
        }
    }

    #[test]
    fn backward_observables_reproduce_fidelity() {
        let t: NetworkTopology = "(3,2,1,2,3)".parse().unwrap();
        let map = init_random_map(&t, 4);
        let plan = Plan::new(t.sizes()).unwrap();
        let g = make_ghz(3).unwrap();
        let sigmas = factored::backward_observables(&plan, &map, g.projector());
        let psi = random_pure(3, 8);
        let cache = feedforward(&map, &psi.projector()).unwrap();
        let f = cache.output().trace_product(g.projector()).re;
        for (rho, sigma) in cache.layers.iter().zip(&sigmas) {
            assert!((rho.trace_product(sigma).re - f).abs() < 1e-12);
        }
    }

    #[test]
    fn entropies_of_clean_identity_map_vanish() {
        let t: NetworkTopology = "(2,1,2)".parse().unwrap();
        let g = make_ghz(2).unwrap();
        let ds = sample_bit_flip(&g, 0.0, 10, 1).unwrap();
        for mode in [EntropyMode::ChannelAveraged, EntropyMode::PerRealization] {
            let recs = layer_entropies(&QuantumMap::identity(&t), &ds, mode, 0).unwrap();
            assert_eq!(recs.len(), 3);
            assert!(recs.iter().all(|r| r.entropy.abs() < 1e-12));
        }
    }

    #[test]
    fn channel_averaged_input_entropy_at_half_flip() {
        let t: NetworkTopology = "(2,1,2)".parse().unwrap();
        let g = make_ghz(2).unwrap();
        let ds = enumerate_bit_flip(&g, 0.5).unwrap();
        let recs = layer_entropies(&QuantumMap::identity(&t), &ds, EntropyMode::ChannelAveraged, 0).unwrap();
        // Average of the four flips of GHZ₂ is an equal mixture of two Bell states.
        assert!((recs[0].entropy - std::f64::consts::LN_2).abs() < 1e-12);
        let per = layer_entropies(&QuantumMap::identity(&t), &ds, EntropyMode::PerRealization, 0).unwrap();
        assert!(per[0].entropy.abs() < 1e-12);
    }

    #[test]
    fn global_register_cap() {
        let t: NetworkTopology = "(6,6,6)".parse().unwrap();
        let psi = random_pure(6, 1);
        assert!(matches!(
            feedforward_global(&QuantumMap::identity(&t), &psi),
            Err(Error::DimensionLimit { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let t: NetworkTopology = "(4,2,|1,2|,2,4)".parse().unwrap();
        let map = init_random_map(&t, 3);
        let mut buf = Vec::new();
        map.write_checkpoint(&mut buf, 42).unwrap();
        let (back, it) = QuantumMap::read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(it, 42);
        assert_eq!(back, map);
        buf[0] = b'X';
        assert!(QuantumMap::read_checkpoint(&mut buf.as_slice()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn feedforward_preserves_trace_and_is_linear(seed in any::<u64>(), alpha in 0.0f64..1.0) {
            let t: NetworkTopology = "(3,2,1,2,3)".parse().unwrap();
            let map = init_random_map(&t, seed);
            let a = random_density(3, seed);
            let b = random_density(3, seed.wrapping_add(1));
            let mix = a.scale(C64::new(alpha, 0.0)).add(&b.scale(C64::new(1.0 - alpha, 0.0))).unwrap();
            let (ca, cb, cm) = (
                feedforward(&map, &a).unwrap(),
                feedforward(&map, &b).unwrap(),
                feedforward(&map, &mix).unwrap(),
            );
            for rho in &cm.layers {
                prop_assert!((rho.trace().re - 1.0).abs() < 1e-10);
                prop_assert!(rho.check_density().is_ok());
            }
            let lin = ca.output().scale(C64::new(alpha, 0.0)).add(&cb.output().scale(C64::new(1.0 - alpha, 0.0))).unwrap();
            prop_assert!(lin.max_abs_diff(cm.output()) < 1e-10);
        }

        #[test]
        fn layer_entropy_equals_complement_entropy(seed in any::<u64>()) {
            let t: NetworkTopology = "(2,1,2)".parse().unwrap();
            let map = init_random_map(&t, seed);
            let psi = feedforward_global(&map, &random_pure(2, seed)).unwrap();
            let rho = psi.projector();
            let layer = partial_trace(&rho, &QubitIndexSet::new(vec![0, 1, 2], 5).unwrap()).unwrap();
            let complement = partial_trace(&rho, &QubitIndexSet::new(vec![3, 4], 5).unwrap()).unwrap();
            prop_assert!((renyi2_entropy(&layer).unwrap() - renyi2_entropy(&complement).unwrap()).abs() < 1e-10);
        }
    }
}
