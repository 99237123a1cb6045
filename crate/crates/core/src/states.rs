//! Target states and scalar figures of merit.

use crate::error::{Error, Result};
use crate::tensor::{ComplexMatrix, StateVector, C64};

/// Pure target state together with its projector.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetState {
    n_qubits: usize,
    vector: StateVector,
    projector: ComplexMatrix,
}

impl TargetState {
    pub fn from_vector(vector: StateVector) -> Self {
        let projector = vector.projector();
        Self { n_qubits: vector.n_qubits(), vector, projector }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.vector.dim()
    }

    pub fn vector(&self) -> &StateVector {
        &self.vector
    }

    pub fn projector(&self) -> &ComplexMatrix {
        &self.projector
    }

    /// `⟨ψ|v⟩⟨v|ψ⟩` for an unnormalized vector `v`.
    pub fn overlap_sqr(&self, v: &[C64]) -> f64 {
        crate::tensor::inner(self.vector.amplitudes(), v).norm_sqr()
    }
}

/// `(|0…0⟩ + |1…1⟩)/√2` on `n_qubits ≥ 2`.
pub fn make_ghz(n_qubits: usize) -> Result<TargetState> {
    if n_qubits < 2 {
        return Err(Error::Argument(format!("GHZ state needs at least 2 qubits, got {n_qubits}")));
    }
    if n_qubits > 14 {
        return Err(Error::DimensionLimit { dim: 1 << n_qubits, limit: crate::tensor::MAX_DIM });
    }
    let dim = 1usize << n_qubits;
    let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let mut amps = vec![C64::new(0.0, 0.0); dim];
    amps[0] = h;
    amps[dim - 1] = h;
    Ok(TargetState::from_vector(StateVector::new(amps)?))
}

/// `⟨ψ|ρ|ψ⟩`, clamped to `[0, 1]`.
pub fn fidelity(rho_out: &ComplexMatrix, target: &TargetState) -> Result<f64> {
    if rho_out.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "output of dimension {} vs target of dimension {}",
            rho_out.dim(),
            target.dim()
        )));
    }
    let psi = target.vector.amplitudes();
    let rho_psi = rho_out.mul_vec(psi)?;
    let f = crate::tensor::inner(psi, &rho_psi).re;
    Ok(f.clamp(0.0, 1.0))
}

/// Mean fidelity over a batch of outputs.
pub fn average_fidelity(outputs: &[ComplexMatrix], target: &TargetState) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::Argument("average fidelity of an empty batch".into()));
    }
    let mut sum = 0.0;
    for rho in outputs {
        sum += fidelity(rho, target)?;
    }
    Ok(sum / outputs.len() as f64)
}

/// `1 − average_fidelity`.
pub fn reconstruction_error(outputs: &[ComplexMatrix], target: &TargetState) -> Result<f64> {
    Ok(1.0 - average_fidelity(outputs, target)?)
}

/// `Tr(ρ²)` for a Hermitian `ρ`.
pub fn purity(rho: &ComplexMatrix) -> f64 {
    rho.as_slice().iter().map(|z| z.norm_sqr()).sum()
}

/// Second-order Rényi entropy `−ln Tr(ρ²)` in nats.
pub fn renyi2_entropy(rho: &ComplexMatrix) -> Result<f64> {
    let tr = rho.trace();
    if (tr - C64::new(1.0, 0.0)).norm() > 1e-8 {
        return Err(Error::Normalization(format!("density matrix trace {tr}")));
    }
    renyi2_from_purity(purity(rho))
}

pub(crate) fn renyi2_from_purity(purity: f64) -> Result<f64> {
    let s = -purity.ln();
    if s >= 0.0 {
        Ok(s)
    } else if s >= -1e-10 {
        Ok(0.0)
    } else {
        Err(Error::InvalidDensity(format!("purity {purity} exceeds 1")))
    }
}

/// Entropy of one network layer at one training iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerEntropyRecord {
    pub iteration: usize,
    /// 1-based layer number (input layer is 1).
    pub layer_index: usize,
    pub entropy: f64,
}

/// Sample mean and sample standard deviation (n − 1 denominator; 0 for a
/// single value).
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{embed_unitary, haar_unitary, kron, pauli_x, QubitIndexSet};
    use crate::rng::substream;
    use proptest::prelude::*;

    fn flipped(target: &TargetState, qubit: usize) -> ComplexMatrix {
        let n = target.n_qubits();
        let x = embed_unitary(&pauli_x(), &QubitIndexSet::new(vec![qubit], n).unwrap(), n).unwrap();
        x.matmul(target.projector()).unwrap().matmul(&x).unwrap()
    }

    fn mixed_single_qubit(seed: u64) -> ComplexMatrix {
        let u = haar_unitary(2, &mut substream(seed, 0));
        let p = 0.1 + 0.8 * ((seed % 97) as f64 / 97.0);
        let d = ComplexMatrix::diagonal(&[C64::new(p, 0.0), C64::new(1.0 - p, 0.0)]);
        u.matmul(&d).unwrap().matmul(&u.adjoint()).unwrap()
    }

    #[test]
    fn ghz_amplitudes_and_projector() {
        let g2 = make_ghz(2).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let amps: Vec<f64> = g2.vector().amplitudes().iter().map(|a| a.re).collect();
        assert_eq!(amps, vec![h, 0.0, 0.0, h]);

        let g4 = make_ghz(4).unwrap();
        let p = g4.projector();
        let nonzero: Vec<(usize, usize)> = (0..16)
            .flat_map(|i| (0..16).map(move |j| (i, j)))
            .filter(|&(i, j)| p.get(i, j).norm() > 0.0)
            .collect();
        assert_eq!(nonzero, vec![(0, 0), (0, 15), (15, 0), (15, 15)]);
        for (i, j) in nonzero {
            assert!((p.get(i, j).re - 0.5).abs() < 1e-15);
        }

        assert!((purity(make_ghz(3).unwrap().projector()) - 1.0).abs() < 1e-14);
        assert!(matches!(make_ghz(1), Err(Error::Argument(_))));
    }

    #[test]
    fn fidelity_examples() {
        let g = make_ghz(4).unwrap();
        assert!((fidelity(g.projector(), &g).unwrap() - 1.0).abs() < 1e-14);
        let f = flipped(&g, 0);
        assert!(fidelity(&f, &g).unwrap().abs() < 1e-14);

        let q = 0.3;
        let mix = g
            .projector()
            .scale(C64::new(1.0 - q, 0.0))
            .add(&f.scale(C64::new(q, 0.0)))
            .unwrap();
        assert!((fidelity(&mix, &g).unwrap() - 0.7).abs() < 1e-12);

        assert!(matches!(fidelity(&ComplexMatrix::identity(4), &g), Err(Error::Shape(_))));
    }

    #[test]
    fn average_and_reconstruction() {
        let g = make_ghz(4).unwrap();
        let good = g.projector().clone();
        let bad = flipped(&g, 0);
        assert!((average_fidelity(&[good.clone(), good.clone()], &g).unwrap() - 1.0).abs() < 1e-14);
        assert!((average_fidelity(&[good.clone(), bad.clone()], &g).unwrap() - 0.5).abs() < 1e-14);
        assert!(reconstruction_error(std::slice::from_ref(&good), &g).unwrap().abs() < 1e-14);
        assert!((reconstruction_error(&[bad.clone(), bad], &g).unwrap() - 1.0).abs() < 1e-14);
        assert!(average_fidelity(&[], &g).is_err());

        // 999 perfect outputs and one orthogonal one.
        let mut outs = vec![good; 999];
        outs.push(flipped(&g, 1));
        assert!((reconstruction_error(&outs, &g).unwrap() - 0.001).abs() < 1e-12);
    }

    #[test]
    fn renyi_examples() {
        assert_eq!(renyi2_entropy(make_ghz(3).unwrap().projector()).unwrap(), 0.0);
        let half = ComplexMatrix::identity(2).scale(C64::new(0.5, 0.0));
        assert!((renyi2_entropy(&half).unwrap() - std::f64::consts::LN_2).abs() < 1e-14);
        let quarter = ComplexMatrix::identity(4).scale(C64::new(0.25, 0.0));
        assert!((renyi2_entropy(&quarter).unwrap() - 4f64.ln()).abs() < 1e-14);
        assert!(matches!(
            renyi2_entropy(&ComplexMatrix::identity(2)),
            Err(Error::Normalization(_))
        ));
    }

    proptest! {
        #[test]
        fn fidelity_is_linear(alpha in 0.0f64..1.0, seed in 0u64..500) {
            let g = make_ghz(2).unwrap();
            let a = kron(&mixed_single_qubit(seed), &mixed_single_qubit(seed + 1)).unwrap();
            let b = kron(&mixed_single_qubit(seed + 2), &mixed_single_qubit(seed + 3)).unwrap();
            let mix = a.scale(C64::new(alpha, 0.0)).add(&b.scale(C64::new(1.0 - alpha, 0.0))).unwrap();
            let lhs = fidelity(&mix, &g).unwrap();
            let rhs = alpha * fidelity(&a, &g).unwrap() + (1.0 - alpha) * fidelity(&b, &g).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn renyi_is_additive_on_products(seed in 0u64..500) {
            let a = mixed_single_qubit(seed);
            let b = kron(&mixed_single_qubit(seed + 5), &mixed_single_qubit(seed + 9)).unwrap();
            let ab = kron(&a, &b).unwrap();
            let lhs = renyi2_entropy(&ab).unwrap();
            let rhs = renyi2_entropy(&a).unwrap() + renyi2_entropy(&b).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn renyi_is_unitarily_invariant(seed in 0u64..500) {
            let rho = kron(&mixed_single_qubit(seed), &mixed_single_qubit(seed + 3)).unwrap();
            let u = haar_unitary(4, &mut substream(seed, 9));
            let rotated = u.matmul(&rho).unwrap().matmul(&u.adjoint()).unwrap();
            prop_assert!((renyi2_entropy(&rho).unwrap() - renyi2_entropy(&rotated).unwrap()).abs() < 1e-10);
        }

        #[test]
        fn complementary_subsystems_of_pure_states_agree(seed in 0u64..500, cut in 1usize..4) {
            let n = 4;
            let psi = haar_unitary(1 << n, &mut substream(seed, 4));
            let v = StateVector::new((0..1 << n).map(|i| psi.get(i, 0)).collect()).unwrap();
            let rho = v.projector();
            let a = crate::tensor::partial_trace(&rho, &QubitIndexSet::new((cut..n).collect(), n).unwrap()).unwrap();
            let b = crate::tensor::partial_trace(&rho, &QubitIndexSet::new((0..cut).collect(), n).unwrap()).unwrap();
            prop_assert!((renyi2_entropy(&a).unwrap() - renyi2_entropy(&b).unwrap()).abs() < 1e-10);
        }
    }
}
