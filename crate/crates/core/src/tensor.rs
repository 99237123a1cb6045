//! Dense complex linear algebra on qubit registers.
//!
//! Qubit ordering convention used throughout the crate: in an `n`-qubit
//! register, qubit 0 is the most significant tensor factor, so qubit `q`
//! corresponds to bit `n - 1 - q` of a basis index. Multi-layer registers
//! concatenate layers in network order (input layer first).

use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest matrix or vector dimension any operation will construct.
pub const MAX_DIM: usize = 1 << 14;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

fn check_dim(dim: usize) -> Result<()> {
    if dim > MAX_DIM {
        return Err(Error::DimensionLimit { dim, limit: MAX_DIM });
    }
    Ok(())
}

/// `log2(dim)` if `dim` is a power of two.
pub fn qubit_count(dim: usize) -> Option<usize> {
    dim.is_power_of_two().then(|| dim.trailing_zeros() as usize)
}

/// Dense square complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be positive");
        Self { dim, data: vec![ZERO; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = ONE;
        }
        m
    }

    pub fn from_vec(dim: usize, data: Vec<C64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(Error::Shape(format!(
                "{} entries cannot form a {dim}x{dim} matrix",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Self { dim, data }
    }

    /// Row-major builder from real pairs, handy for small literals.
    pub fn from_rows(rows: &[&[(f64, f64)]]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend(row.iter().map(|&(re, im)| C64::new(re, im)));
        }
        Self::from_vec(dim, data)
    }

    pub fn diagonal(diag: &[C64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = d;
        }
        m
    }

    /// `|v⟩⟨w|`.
    pub fn outer(v: &[C64], w: &[C64]) -> Result<Self> {
        if v.len() != w.len() || v.is_empty() {
            return Err(Error::Shape("outer product of unequal vectors".into()));
        }
        Ok(Self::from_fn(v.len(), |i, j| v[i] * w[j].conj()))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_qubits(&self) -> Option<usize> {
        qubit_count(self.dim)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self.get(j, i).conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|&x| x * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Self, s: C64) -> Result<()> {
        self.same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        let n = self.dim;
        let mut out = vec![ZERO; n * n];
        for i in 0..n {
            let out_row = &mut out[i * n..(i + 1) * n];
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == ZERO {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Self { dim: n, data: out })
    }

    pub fn mul_vec(&self, v: &[C64]) -> Result<Vec<C64>> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!("vector of length {} vs dim {}", v.len(), self.dim)));
        }
        Ok((0..self.dim)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `[self, other] = self·other − other·self`.
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.matmul(other)?.sub(&other.matmul(self)?)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim, "max_abs_diff on unequal shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    /// Frobenius inner product `Tr(self† other)`.
    pub fn frobenius_inner(&self, other: &Self) -> C64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }

    /// `Tr(self · other)` without forming the product.
    pub fn trace_product(&self, other: &Self) -> C64 {
        let n = self.dim;
        let mut acc = ZERO;
        for i in 0..n {
            for k in 0..n {
                acc += self.data[i * n + k] * other.data[k * n + i];
            }
        }
        acc
    }

    /// Largest entrywise deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in i..self.dim {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    /// `(A + A†)/2`.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.dim, |i, j| (self.get(i, j) + self.get(j, i).conj()) * 0.5)
    }

    /// `‖U†U − I‖_max`.
    pub fn unitarity_error(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                let mut acc = ZERO;
                for k in 0..n {
                    acc += self.data[k * n + i].conj() * self.data[k * n + j];
                }
                if i == j {
                    acc -= ONE;
                }
                worst = worst.max(acc.norm());
            }
        }
        worst
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_error() < tol
    }

    /// Checks the density-matrix invariants: Hermitian within 1e-12,
    /// unit trace within 1e-10 and no eigenvalue below −1e-10.
    pub fn check_density(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > 1e-12 {
            return Err(Error::InvalidDensity(format!("Hermiticity error {herm:.3e}")));
        }
        let tr = self.trace();
        if (tr - ONE).norm() > 1e-10 {
            return Err(Error::InvalidDensity(format!("trace {tr}")));
        }
        let (values, _) = self.hermitian_eigen();
        if let Some(&min) = values.first() {
            if min < -1e-10 {
                return Err(Error::InvalidDensity(format!("negative eigenvalue {min:.3e}")));
            }
        }
        Ok(())
    }

    /// Eigendecomposition of the Hermitian part: ascending eigenvalues and
    /// the unitary whose columns are the matching eigenvectors.
    pub fn hermitian_eigen(&self) -> (Vec<f64>, ComplexMatrix) {
        let n = self.dim;
        let h = self.hermitian_part();
        let m = DMatrix::<C64>::from_fn(n, n, |i, j| h.get(i, j));
        let eig = m.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = Self::from_fn(n, |i, j| eig.eigenvectors[(i, order[j])]);
        (values, vectors)
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::Shape(format!("{} vs {}", self.dim, other.dim)));
        }
        Ok(())
    }
}

/// Normalized pure state of a qubit register.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<C64>,
}

impl StateVector {
    pub const NORM_TOLERANCE: f64 = 1e-10;

    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.is_empty() || !amplitudes.len().is_power_of_two() {
            return Err(Error::Shape(format!(
                "state dimension {} is not a power of two",
                amplitudes.len()
            )));
        }
        check_dim(amplitudes.len())?;
        let norm = l2_norm(&amplitudes);
        if (norm - 1.0).abs() > Self::NORM_TOLERANCE {
            return Err(Error::Normalization(format!("state norm {norm}")));
        }
        Ok(Self { amplitudes })
    }

    /// Rescales to unit norm.
    pub fn normalized(amplitudes: Vec<C64>) -> Result<Self> {
        let norm = l2_norm(&amplitudes);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Normalization("cannot normalize a zero vector".into()));
        }
        Self::new(amplitudes.into_iter().map(|a| a / norm).collect())
    }

    /// Computational basis state `|index⟩` on `n_qubits`.
    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        let dim = 1usize << n_qubits;
        check_dim(dim)?;
        if index >= dim {
            return Err(Error::Index(format!("basis index {index} on {n_qubits} qubits")));
        }
        let mut amps = vec![ZERO; dim];
        amps[index] = ONE;
        Ok(Self { amplitudes: amps })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn n_qubits(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.amplitudes)
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> C64 {
        inner(&self.amplitudes, &other.amplitudes)
    }

    pub fn projector(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.dim(), |i, j| self.amplitudes[i] * self.amplitudes[j].conj())
    }

    /// Tensor product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim() * other.dim())?;
        let mut amps = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amplitudes {
            amps.extend(other.amplitudes.iter().map(|b| a * b));
        }
        Ok(Self { amplitudes: amps })
    }
}

pub fn l2_norm(v: &[C64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

/// `⟨a|b⟩`.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Ordered list of distinct qubit positions within a register.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QubitIndexSet(Vec<usize>);

impl QubitIndexSet {
    pub fn new(indices: Vec<usize>, n_qubits: usize) -> Result<Self> {
        for (k, &q) in indices.iter().enumerate() {
            if q >= n_qubits {
                return Err(Error::Index(format!("qubit {q} on a {n_qubits}-qubit register")));
            }
            if indices[..k].contains(&q) {
                return Err(Error::Index(format!("qubit {q} listed twice")));
            }
        }
        Ok(Self(indices))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Qubits of the register not in this set, ascending.
    pub fn complement(&self, n_qubits: usize) -> Self {
        Self((0..n_qubits).filter(|q| !self.0.contains(q)).collect())
    }
}

/// Index tables splitting a register into a subsystem (in a given qubit
/// order) and the rest (ascending). Every basis index decomposes uniquely
/// as `rest[r] + sub[s]`.
#[derive(Clone, Debug)]
pub struct Embedding {
    n_qubits: usize,
    sub: Vec<usize>,
    rest: Vec<usize>,
}

fn bit_offsets(qubits: &[usize], n_qubits: usize) -> Vec<usize> {
    let k = qubits.len();
    (0..1usize << k)
        .map(|s| {
            qubits
                .iter()
                .enumerate()
                .filter(|(b, _)| (s >> (k - 1 - b)) & 1 == 1)
                .map(|(_, &q)| 1usize << (n_qubits - 1 - q))
                .sum()
        })
        .collect()
}

impl Embedding {
    pub fn new(qubits: &QubitIndexSet, n_qubits: usize) -> Result<Self> {
        check_dim(1usize.checked_shl(n_qubits as u32).unwrap_or(usize::MAX))?;
        if let Some(&q) = qubits.as_slice().iter().find(|&&q| q >= n_qubits) {
            return Err(Error::Index(format!("qubit {q} on a {n_qubits}-qubit register")));
        }
        let rest = qubits.complement(n_qubits);
        Ok(Self {
            n_qubits,
            sub: bit_offsets(qubits.as_slice(), n_qubits),
            rest: bit_offsets(rest.as_slice(), n_qubits),
        })
    }

    /// Shorthand for a validated list of qubits.
    pub fn on(qubits: &[usize], n_qubits: usize) -> Result<Self> {
        Self::new(&QubitIndexSet::new(qubits.to_vec(), n_qubits)?, n_qubits)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn total_dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn sub_dim(&self) -> usize {
        self.sub.len()
    }

    fn check_op(&self, u: &ComplexMatrix) {
        assert_eq!(u.dim(), self.sub.len(), "operator does not match the embedded subsystem");
    }

    /// `v ← (u on the subsystem) v`.
    pub fn apply_vec(&self, u: &ComplexMatrix, v: &mut [C64]) {
        self.check_op(u);
        debug_assert_eq!(v.len(), self.total_dim());
        let d = self.sub.len();
        let mut tmp = vec![ZERO; d];
        for &base in &self.rest {
            for (t, &o) in tmp.iter_mut().zip(&self.sub) {
                *t = v[base + o];
            }
            for (s, &o) in self.sub.iter().enumerate() {
                let row = u.row(s);
                let mut acc = ZERO;
                for (a, t) in row.iter().zip(&tmp) {
                    acc += a * t;
                }
                v[base + o] = acc;
            }
        }
    }

    /// `v ← (u† on the subsystem) v`.
    pub fn apply_adjoint_vec(&self, u: &ComplexMatrix, v: &mut [C64]) {
        self.check_op(u);
        let d = self.sub.len();
        let mut tmp = vec![ZERO; d];
        let mut out = vec![ZERO; d];
        for &base in &self.rest {
            for (t, &o) in tmp.iter_mut().zip(&self.sub) {
                *t = v[base + o];
            }
            out.iter_mut().for_each(|x| *x = ZERO);
            for (s, &t) in tmp.iter().enumerate() {
                let row = u.row(s);
                for (x, a) in out.iter_mut().zip(row) {
                    *x += a.conj() * t;
                }
            }
            for (&x, &o) in out.iter().zip(&self.sub) {
                v[base + o] = x;
            }
        }
    }

    /// `U ρ U†` with `U` acting on the subsystem.
    pub fn conjugate(&self, u: &ComplexMatrix, rho: &ComplexMatrix) -> ComplexMatrix {
        self.check_op(u);
        let n = rho.dim();
        assert_eq!(n, self.total_dim(), "density matrix does not match the register");
        // Left action on every column, then right action through the adjoint.
        let mut left = rho.clone();
        self.apply_left(u, &mut left);
        let mut right = left.adjoint();
        self.apply_left(u, &mut right);
        right.adjoint()
    }

    /// `m ← (u on the subsystem) m`.
    pub fn apply_left(&self, u: &ComplexMatrix, m: &mut ComplexMatrix) {
        self.check_op(u);
        let n = m.dim();
        let d = self.sub.len();
        let mut tmp = vec![ZERO; d * n];
        let data = m.as_mut_slice();
        for &base in &self.rest {
            for (s, &o) in self.sub.iter().enumerate() {
                tmp[s * n..(s + 1) * n].copy_from_slice(&data[(base + o) * n..(base + o + 1) * n]);
            }
            for (s, &o) in self.sub.iter().enumerate() {
                let out = &mut data[(base + o) * n..(base + o + 1) * n];
                out.iter_mut().for_each(|x| *x = ZERO);
                for (s2, &a) in u.row(s).iter().enumerate() {
                    if a == ZERO {
                        continue;
                    }
                    for (x, t) in out.iter_mut().zip(&tmp[s2 * n..(s2 + 1) * n]) {
                        *x += a * t;
                    }
                }
            }
        }
    }

    /// Trace over the rest, keeping the subsystem in its given order.
    pub fn reduce(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(rho.dim(), self.total_dim(), "density matrix does not match the register");
        let d = self.sub.len();
        ComplexMatrix::from_fn(d, |s1, s2| {
            self.rest
                .iter()
                .map(|&base| rho.get(base + self.sub[s1], base + self.sub[s2]))
                .sum()
        })
    }

    /// Reduced density matrix of a pure state, `Tr_rest |v⟩⟨v|`.
    pub fn reduce_pure(&self, v: &[C64]) -> ComplexMatrix {
        let mut acc = ComplexMatrix::zeros(self.sub.len());
        self.accumulate_outer(v, v, 1.0, &mut acc);
        acc
    }

    /// `acc += weight · Tr_rest |a⟩⟨b|`.
    pub fn accumulate_outer(&self, a: &[C64], b: &[C64], weight: f64, acc: &mut ComplexMatrix) {
        let d = self.sub.len();
        assert_eq!(acc.dim(), d);
        let out = acc.as_mut_slice();
        let mut ta = vec![ZERO; d];
        let mut tb = vec![ZERO; d];
        for &base in &self.rest {
            for s in 0..d {
                ta[s] = a[base + self.sub[s]] * weight;
                tb[s] = b[base + self.sub[s]].conj();
            }
            for s1 in 0..d {
                let x = ta[s1];
                if x == ZERO {
                    continue;
                }
                let row = &mut out[s1 * d..(s1 + 1) * d];
                for (o, y) in row.iter_mut().zip(&tb) {
                    *o += x * y;
                }
            }
        }
    }
}

/// Kronecker product `a ⊗ b` (a is the more significant factor).
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    let (da, db) = (a.dim(), b.dim());
    let dim = da.checked_mul(db).ok_or(Error::DimensionLimit { dim: usize::MAX, limit: MAX_DIM })?;
    check_dim(dim)?;
    let mut data = vec![ZERO; dim * dim];
    for i in 0..da {
        for j in 0..da {
            let x = a.get(i, j);
            if x == ZERO {
                continue;
            }
            for k in 0..db {
                let row = (i * db + k) * dim + j * db;
                for (o, y) in data[row..row + db].iter_mut().zip(b.row(k)) {
                    *o = x * y;
                }
            }
        }
    }
    ComplexMatrix::from_vec(dim, data)
}

/// Traces out the qubits in `traced`; the remaining qubits keep their
/// relative order.
pub fn partial_trace(rho: &ComplexMatrix, traced: &QubitIndexSet) -> Result<ComplexMatrix> {
    let n = rho
        .n_qubits()
        .ok_or_else(|| Error::Shape(format!("dimension {} is not a qubit register", rho.dim())))?;
    if let Some(&q) = traced.as_slice().iter().find(|&&q| q >= n) {
        return Err(Error::Index(format!("qubit {q} on a {n}-qubit register")));
    }
    if traced.len() == n {
        return ComplexMatrix::from_vec(1, vec![rho.trace()]);
    }
    let kept = traced.complement(n);
    Ok(Embedding::new(&kept, n)?.reduce(rho))
}

/// `exp(i·ε·k)` for Hermitian `k`, through its eigendecomposition.
pub fn expm_hermitian_generator(k: &ComplexMatrix, epsilon: f64) -> Result<ComplexMatrix> {
    let err = k.hermiticity_error();
    if err > 1e-10 {
        return Err(Error::NotHermitian(err));
    }
    if epsilon == 0.0 {
        return Ok(ComplexMatrix::identity(k.dim()));
    }
    let (values, v) = k.hermitian_eigen();
    let n = k.dim();
    let phases: Vec<C64> = values.iter().map(|&l| C64::from_polar(1.0, epsilon * l)).collect();
    // V · diag(phases) · V†
    Ok(ComplexMatrix::from_fn(n, |i, j| {
        let mut acc = ZERO;
        for (m, p) in phases.iter().enumerate() {
            acc += v.get(i, m) * p * v.get(j, m).conj();
        }
        acc
    }))
}

/// Lifts `u` to a `total_qubits` register, acting on `acting_on` (in that
/// factor order) and as the identity elsewhere.
pub fn embed_unitary(
    u: &ComplexMatrix,
    acting_on: &QubitIndexSet,
    total_qubits: usize,
) -> Result<ComplexMatrix> {
    if u.dim() != 1usize << acting_on.len() {
        return Err(Error::Shape(format!(
            "{}-dimensional operator on {} qubits",
            u.dim(),
            acting_on.len()
        )));
    }
    let emb = Embedding::new(acting_on, total_qubits)?;
    let dim = emb.total_dim();
    let mut out = ComplexMatrix::zeros(dim);
    for &base in &emb.rest {
        for (s1, &o1) in emb.sub.iter().enumerate() {
            for (s2, &o2) in emb.sub.iter().enumerate() {
                out.set(base + o1, base + o2, u.get(s1, s2));
            }
        }
    }
    Ok(out)
}

/// Gram–Schmidt (two passes) on the columns, in place. Columns of a
/// Ginibre matrix orthonormalized this way are Haar distributed, since the
/// implied R factor has a positive real diagonal.
pub fn orthonormalize_columns(m: &mut ComplexMatrix) -> Result<()> {
    let n = m.dim();
    let mut cols: Vec<Vec<C64>> = (0..n).map(|j| (0..n).map(|i| m.get(i, j)).collect()).collect();
    for j in 0..n {
        for _ in 0..2 {
            for k in 0..j {
                let proj = inner(&cols[k], &cols[j]);
                let (head, tail) = cols.split_at_mut(j);
                for (x, y) in tail[0].iter_mut().zip(&head[k]) {
                    *x -= proj * y;
                }
            }
        }
        let norm = l2_norm(&cols[j]);
        if norm < 1e-12 {
            return Err(Error::NumericDrift(norm));
        }
        cols[j].iter_mut().for_each(|x| *x /= norm);
    }
    for (j, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            m.set(i, j, x);
        }
    }
    Ok(())
}

/// Haar-random unitary of dimension `dim`.
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> ComplexMatrix {
    loop {
        let mut g = ComplexMatrix::from_fn(dim, |_, _| {
            C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        // A singular Ginibre draw has probability zero; redraw if it happens.
        if orthonormalize_columns(&mut g).is_ok() {
            return g;
        }
    }
}

pub fn pauli_x() -> ComplexMatrix {
    ComplexMatrix::from_vec(2, vec![ZERO, ONE, ONE, ZERO]).unwrap()
}

pub fn pauli_y() -> ComplexMatrix {
    ComplexMatrix::from_vec(2, vec![ZERO, C64::new(0.0, -1.0), C64::new(0.0, 1.0), ZERO]).unwrap()
}

pub fn pauli_z() -> ComplexMatrix {
    ComplexMatrix::from_vec(2, vec![ONE, ZERO, ZERO, -ONE]).unwrap()
}

/// `|0…0⟩⟨0…0|` on `n_qubits`.
pub fn ground_projector(n_qubits: usize) -> Result<ComplexMatrix> {
    let dim = 1usize << n_qubits;
    check_dim(dim)?;
    let mut m = ComplexMatrix::zeros(dim);
    m.set(0, 0, ONE);
    Ok(m)
}

const CMAT_MAGIC: &[u8; 4] = b"CMAT";
const CMAT_VERSION: u16 = 1;

/// Writes `m` as a 16-byte header (`CMAT`, version u16, dim u32, 6 reserved
/// bytes) followed by row-major little-endian `(re, im)` f64 pairs.
pub fn write_cmat<W: Write>(out: &mut W, m: &ComplexMatrix) -> Result<()> {
    let mut header = [0u8; 16];
    header[..4].copy_from_slice(CMAT_MAGIC);
    header[4..6].copy_from_slice(&CMAT_VERSION.to_le_bytes());
    header[6..10].copy_from_slice(&(m.dim() as u32).to_le_bytes());
    out.write_all(&header)?;
    let mut buf = Vec::with_capacity(m.as_slice().len() * 16);
    for z in m.as_slice() {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_cmat<R: Read>(input: &mut R) -> Result<ComplexMatrix> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    if &header[..4] != CMAT_MAGIC {
        return Err(Error::Format("missing CMAT magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != CMAT_VERSION {
        return Err(Error::Format(format!("unsupported CMAT version {version}")));
    }
    let dim = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(Error::Format("zero-dimensional matrix".into()));
    }
    check_dim(dim)?;
    let mut buf = vec![0u8; dim * dim * 16];
    input.read_exact(&mut buf)?;
    let data = buf
        .chunks_exact(16)
        .map(|c| {
            C64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    ComplexMatrix::from_vec(dim, data)
}
