//! Feedforward and gradient passes on factored mixed states.
//!
//! A layer state is kept as a list of unnormalized vectors `v_k` with
//! `ρ = Σ_k |v_k⟩⟨v_k|`. Appending fresh ancillas, applying neuron unitaries
//! and tracing out the previous layer all act on the vectors directly, so no
//! two-layer density matrix is ever formed.

use rayon::prelude::*;

use crate::error::Result;
use crate::network::QuantumMap;
use crate::tensor::{ComplexMatrix, Embedding, C64};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Samples per parallel work unit; partial sums are combined in chunk order.
const CHUNK: usize = 4;

pub(crate) type Vectors = Vec<Vec<C64>>;

/// Index tables for one layer transition `l−1 → l`.
pub(crate) struct LayerPlan {
    pub m: usize,
    pub n: usize,
    /// Neuron `j` acts on all of layer `l−1` plus qubit `j` of layer `l`.
    pub neurons: Vec<Embedding>,
    /// Layer `l` inside the two-layer register.
    pub output: Embedding,
}

pub(crate) struct Plan {
    pub layers: Vec<LayerPlan>,
}

impl Plan {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (m, n) = (w[0], w[1]);
                let neurons = (0..n)
                    .map(|j| {
                        let mut qubits: Vec<usize> = (0..m).collect();
                        qubits.push(m + j);
                        Embedding::on(&qubits, m + n)
                    })
                    .collect::<Result<_>>()?;
                let output = Embedding::on(&(m..m + n).collect::<Vec<_>>(), m + n)?;
                Ok(LayerPlan { m, n, neurons, output })
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }
}

/// `v ⊗ |0…0⟩` with `n` fresh qubits.
fn lift(vs: &[Vec<C64>], n: usize) -> Vectors {
    vs.iter()
        .map(|v| {
            let mut out = vec![ZERO; v.len() << n];
            for (i, &a) in v.iter().enumerate() {
                out[i << n] = a;
            }
            out
        })
        .collect()
}

/// Traces out the leading (previous-layer) qubits: every length-`2^n` row of
/// every vector becomes a component of the output.
fn trace_leading(vs: &[Vec<C64>], n: usize) -> Vectors {
    let d = 1usize << n;
    vs.iter()
        .flat_map(|v| v.chunks(d))
        .filter(|row| row.iter().any(|a| a.norm_sqr() > 1e-300))
        .map(|row| row.to_vec())
        .collect()
}

fn density(vs: &[Vec<C64>], dim: usize) -> ComplexMatrix {
    let mut rho = ComplexMatrix::zeros(dim);
    let data = rho.as_mut_slice();
    for v in vs {
        for (i, a) in v.iter().enumerate() {
            if *a == ZERO {
                continue;
            }
            for (o, b) in data[i * dim..(i + 1) * dim].iter_mut().zip(v) {
                *o += a * b.conj();
            }
        }
    }
    rho
}

/// Re-expresses the mixture with at most `dim` vectors.
fn compress(vs: Vectors, dim: usize) -> Vectors {
    if vs.len() <= dim {
        return vs;
    }
    let (values, vecs) = density(&vs, dim).hermitian_eigen();
    values
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > 1e-15)
        .map(|(k, &l)| {
            let s = l.sqrt();
            (0..dim).map(|i| vecs.get(i, k) * s).collect()
        })
        .collect()
}

/// One layer transition without bookkeeping for gradients.
fn advance(lp: &LayerPlan, us: &[ComplexMatrix], vs: &[Vec<C64>]) -> Vectors {
    let mut a = lift(vs, lp.n);
    for (emb, u) in lp.neurons.iter().zip(us) {
        for v in &mut a {
            emb.apply_vec(u, v);
        }
    }
    compress(trace_leading(&a, lp.n), 1 << lp.n)
}

/// Layer states `ρ^1, …, ρ^L` for one input mixture.
#[cfg(test)]
pub(crate) fn forward(plan: &Plan, map: &QuantumMap, input: Vectors) -> Vec<Vectors> {
    let mut out = Vec::with_capacity(plan.layers.len() + 1);
    out.push(input);
    for (lp, us) in plan.layers.iter().zip(map.layers()) {
        let next = advance(lp, us, out.last().unwrap());
        out.push(next);
    }
    out
}

pub(crate) fn output(plan: &Plan, map: &QuantumMap, input: Vectors) -> Vectors {
    plan.layers
        .iter()
        .zip(map.layers())
        .fold(input, |vs, (lp, us)| advance(lp, us, &vs))
}

/// `Σ_k ⟨v_k|σ|v_k⟩` for a mixture and Hermitian `σ`.
pub(crate) fn expectation(vs: &[Vec<C64>], sigma: &ComplexMatrix) -> f64 {
    vs.iter()
        .map(|v| {
            let sv = sigma.mul_vec(v).expect("observable matches the layer");
            crate::tensor::inner(v, &sv).re
        })
        .sum()
}

/// Observables `σ^1, …, σ^L` obtained by pulling the target projector back
/// through the adjoint layer channels, so that `F_x = Tr(σ^l ρ^l_x)` for every
/// layer `l`.
pub(crate) fn backward_observables(plan: &Plan, map: &QuantumMap, target: &ComplexMatrix) -> Vec<ComplexMatrix> {
    let mut sigmas = vec![target.clone()];
    for (lp, us) in plan.layers.iter().zip(map.layers()).rev() {
        let sigma = sigmas.last().unwrap();
        let dm = 1usize << lp.m;
        // Columns 𝒰|b,0⟩ and (I⊗σ)𝒰|b,0⟩ for every basis state b of layer l−1.
        let mut cols: Vectors = (0..dm)
            .map(|b| {
                let mut e = vec![ZERO; dm];
                e[b] = C64::new(1.0, 0.0);
                e
            })
            .collect();
        cols = lift(&cols, lp.n);
        for (emb, u) in lp.neurons.iter().zip(us) {
            for v in &mut cols {
                emb.apply_vec(u, v);
            }
        }
        let images: Vectors = cols
            .iter()
            .map(|v| {
                let mut w = v.clone();
                lp.output.apply_vec(sigma, &mut w);
                w
            })
            .collect();
        let mut prev = ComplexMatrix::from_fn(dm, |a, b| crate::tensor::inner(&cols[a], &images[b]));
        prev = prev.hermitian_part();
        sigmas.push(prev);
    }
    sigmas.reverse();
    sigmas
}

/// Accumulators `X^l_j = Σ_x w_x Tr_rest |a^j_x⟩⟨b^j_x|`, indexed like the map.
pub(crate) type Accumulators = Vec<Vec<ComplexMatrix>>;

fn zero_accumulators(plan: &Plan) -> Accumulators {
    plan.layers
        .iter()
        .map(|lp| (0..lp.n).map(|_| ComplexMatrix::zeros(1 << (lp.m + 1))).collect())
        .collect()
}

fn add_accumulators(acc: &mut Accumulators, other: &Accumulators) {
    for (la, lb) in acc.iter_mut().zip(other) {
        for (a, b) in la.iter_mut().zip(lb) {
            a.add_scaled(b, C64::new(1.0, 0.0)).unwrap();
        }
    }
}

/// One weighted training input and the index of its output observable.
pub(crate) struct Sample {
    pub weight: f64,
    pub input: Vectors,
    pub objective: usize,
}

/// Objective value and ideal-target fidelity of one weighted pass.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Scores {
    pub objective: f64,
    pub fidelity: f64,
}

/// Adds one sample's contribution to `acc`; returns its unweighted scores.
fn sample_gradient(
    plan: &Plan,
    map: &QuantumMap,
    sigmas: &[ComplexMatrix],
    monitor: &[C64],
    sample: &Sample,
    acc: &mut Accumulators,
) -> Scores {
    let mut vs = sample.input.clone();
    for (k, (lp, us)) in plan.layers.iter().zip(map.layers()).enumerate() {
        // Forward: a^j = U_j ⋯ U_1 (v ⊗ |0⟩) for every j.
        let mut stages: Vec<Vectors> = Vec::with_capacity(lp.n);
        let mut a = lift(&vs, lp.n);
        for (emb, u) in lp.neurons.iter().zip(us) {
            for v in &mut a {
                emb.apply_vec(u, v);
            }
            stages.push(a.clone());
        }
        // Backward: b^N = (I⊗σ^l) a^N, b^{j−1} = U_j† b^j.
        let mut b: Vectors = a
            .iter()
            .map(|v| {
                let mut w = v.clone();
                lp.output.apply_vec(&sigmas[k + 1], &mut w);
                w
            })
            .collect();
        for j in (0..lp.n).rev() {
            for (aj, bj) in stages[j].iter().zip(&b) {
                lp.neurons[j].accumulate_outer(aj, bj, sample.weight, &mut acc[k][j]);
            }
            if j > 0 {
                for v in &mut b {
                    lp.neurons[j].apply_adjoint_vec(&us[j], v);
                }
            }
        }
        vs = compress(trace_leading(&a, lp.n), 1 << lp.n);
    }
    Scores { objective: expectation(&vs, sigmas.last().unwrap()), fidelity: pure_overlap(&vs, monitor) }
}

/// Weighted scores and the Hermitian matrices
/// `M^l_j = Σ_x w_x Tr_rest(i[A^l_j(x), B^l_j(x)])`, with `dF/dδ = Tr(K M)`
/// for a perturbation `U^l_j → e^{iδK} U^l_j` of the objective
/// `F = Σ_x w_x Tr(σ_x ρ^out_x)`, `σ_x = objectives[sample.objective]`.
pub(crate) fn gradient(
    plan: &Plan,
    map: &QuantumMap,
    objectives: &[ComplexMatrix],
    monitor: &[C64],
    samples: &[Sample],
) -> (Scores, Vec<Vec<ComplexMatrix>>) {
    let sigmas: Vec<Vec<ComplexMatrix>> =
        objectives.par_iter().map(|o| backward_observables(plan, map, o)).collect();
    let partials: Vec<(Scores, Accumulators)> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = zero_accumulators(plan);
            let mut total = Scores::default();
            for s in chunk {
                let sc = sample_gradient(plan, map, &sigmas[s.objective], monitor, s, &mut acc);
                total.objective += s.weight * sc.objective;
                total.fidelity += s.weight * sc.fidelity;
            }
            (total, acc)
        })
        .collect();
    let mut acc = zero_accumulators(plan);
    let mut scores = Scores::default();
    for (sc, part) in &partials {
        scores.objective += sc.objective;
        scores.fidelity += sc.fidelity;
        add_accumulators(&mut acc, part);
    }
    let i = C64::new(0.0, 1.0);
    let ms = acc
        .into_iter()
        .map(|layer| {
            layer
                .into_iter()
                .map(|x| x.sub(&x.adjoint()).unwrap().scale(i).hermitian_part())
                .collect()
        })
        .collect();
    (scores, ms)
}

/// Weighted scores without gradients.
pub(crate) fn evaluate(
    plan: &Plan,
    map: &QuantumMap,
    objectives: &[ComplexMatrix],
    monitor: &[C64],
    samples: &[Sample],
) -> Scores {
    let parts: Vec<Scores> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut total = Scores::default();
            for s in chunk {
                let out = output(plan, map, s.input.clone());
                total.objective += s.weight * expectation(&out, &objectives[s.objective]);
                total.fidelity += s.weight * pure_overlap(&out, monitor);
            }
            total
        })
        .collect();
    parts.iter().fold(Scores::default(), |a, b| Scores {
        objective: a.objective + b.objective,
        fidelity: a.fidelity + b.fidelity,
    })
}

/// `Σ_k |⟨ψ|v_k⟩|²`.
pub(crate) fn pure_overlap(vs: &[Vec<C64>], psi: &[C64]) -> f64 {
    vs.iter().map(|v| crate::tensor::inner(psi, v).norm_sqr()).sum()
}

#[cfg(test)]
pub(crate) fn to_density(vs: &[Vec<C64>], dim: usize) -> ComplexMatrix {
    density(vs, dim)
}
