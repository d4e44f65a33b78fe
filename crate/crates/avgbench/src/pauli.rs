//! Dense operators on one and two qubits, vectorization, and the three channel
//! views (superoperator, Pauli transfer matrix, Choi matrix).
//!
//! Vectorization maps `|m><n|` to `|m> ⊗ |n>`, so `vec(A ρ B†) = (A ⊗ B*) vec(ρ)`
//! and a channel with Kraus operators `K` acts as `Σ K ⊗ K*`. Qubit 1 is the
//! left tensor factor everywhere.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_traits::{One, Zero};

use crate::error::{input, Result};
use crate::scalar::{c, cr, Real, C};

pub type Mat<R> = DMatrix<C<R>>;
pub type Vector<R> = DVector<C<R>>;

/// Index into `{1, X, Y, Z}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PauliIndex(u8);

impl PauliIndex {
    pub const I: Self = Self(0);
    pub const X: Self = Self(1);
    pub const Y: Self = Self(2);
    pub const Z: Self = Self(3);
    pub const ALL: [Self; 4] = [Self::I, Self::X, Self::Y, Self::Z];

    pub fn new(value: u8) -> Result<Self> {
        if value < 4 {
            Ok(Self(value))
        } else {
            input(format!("Pauli index {value} outside 0..=3"))
        }
    }

    pub fn value(self) -> usize {
        self.0 as usize
    }

    pub fn is_identity(self) -> bool {
        self.0 == 0
    }

    /// `true` when the two Paulis commute.
    pub fn commutes(self, other: Self) -> bool {
        self.0 == 0 || other.0 == 0 || self.0 == other.0
    }

    /// `+1` when the two Paulis commute, `-1` otherwise.
    pub fn character(self, other: Self) -> i32 {
        if self.commutes(other) {
            1
        } else {
            -1
        }
    }
}

impl fmt::Display for PauliIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(["I", "X", "Y", "Z"][self.value()])
    }
}

pub fn pauli<R: Real>(p: PauliIndex) -> Mat<R> {
    let (o, z) = (C::<R>::one(), C::<R>::zero());
    let i = c::<R>(0.0, 1.0);
    let entries = match p.0 {
        0 => [o, z, z, o],
        1 => [z, o, o, z],
        2 => [z, -i, i, z],
        _ => [o, z, z, -o],
    };
    DMatrix::from_row_slice(2, 2, &entries)
}

/// Tensor product of single-qubit Paulis, first entry on qubit 1.
pub fn pauli_string<R: Real>(ps: &[PauliIndex]) -> Mat<R> {
    ps.iter().fold(DMatrix::identity(1, 1), |acc, &p| acc.kronecker(&pauli::<R>(p)))
}

/// Pauli string with `index = Σ a_k 4^(n-1-k)`.
pub fn pauli_string_from_index<R: Real>(index: usize, n_qubits: usize) -> Mat<R> {
    pauli_string(&pauli_digits(index, n_qubits))
}

pub fn pauli_digits(index: usize, n_qubits: usize) -> Vec<PauliIndex> {
    (0..n_qubits)
        .map(|k| PauliIndex(((index >> (2 * (n_qubits - 1 - k))) & 3) as u8))
        .collect()
}

pub fn kron<R: Real>(a: &Mat<R>, b: &Mat<R>) -> Mat<R> {
    a.kronecker(b)
}

pub(crate) fn frob<R: Real>(m: &Mat<R>) -> R {
    m.iter().fold(R::zero(), |acc, z| acc + z.norm_sqr()).sqrt()
}

fn qubits_of_dim(dim: usize) -> Option<usize> {
    (dim.is_power_of_two() && dim >= 2).then(|| dim.trailing_zeros() as usize)
}

/// Flattens `ρ` so that `|m><n|` becomes `|m> ⊗ |n>`, i.e. entry `m·d + n`.
pub fn vectorize<R: Real>(rho: &Mat<R>) -> Result<Vector<R>> {
    let d = rho.nrows();
    if d != rho.ncols() || qubits_of_dim(d).is_none() {
        return input(format!("expected a square 2^n matrix, got {}x{}", d, rho.ncols()));
    }
    Ok(DVector::from_fn(d * d, |k, _| rho[(k / d, k % d)]))
}

pub fn unvectorize<R: Real>(v: &Vector<R>) -> Result<Mat<R>> {
    let d = (v.len() as f64).sqrt().round() as usize;
    if d * d != v.len() || qubits_of_dim(d).is_none() {
        return input(format!("vector length {} is not 4^n", v.len()));
    }
    Ok(DMatrix::from_fn(d, d, |m, n| v[m * d + n]))
}

/// Permutation taking the standard vectorized index `(m_1..m_n, n_1..n_n)` to the
/// site-grouped index `(m_1 n_1, m_2 n_2, ...)` used by folded contractions.
pub fn fold_permutation(n_qubits: usize) -> Vec<usize> {
    let d = 1usize << n_qubits;
    (0..d * d)
        .map(|k| {
            let (m, n) = (k / d, k % d);
            (0..n_qubits).fold(0, |acc, q| {
                let shift = n_qubits - 1 - q;
                let local = (((m >> shift) & 1) << 1) | ((n >> shift) & 1);
                (acc << 2) | local
            })
        })
        .collect()
}

/// Site-grouped vectorization: each site carries a local index `2m + n` of size 4.
pub fn vectorize_folded<R: Real>(op: &Mat<R>) -> Result<Vector<R>> {
    let v = vectorize(op)?;
    let n = qubits_of_dim(op.nrows()).unwrap_or(0);
    let perm = fold_permutation(n);
    let mut out = DVector::zeros(v.len());
    for (k, &f) in perm.iter().enumerate() {
        out[f] = v[k];
    }
    Ok(out)
}

pub fn unvectorize_folded<R: Real>(v: &Vector<R>) -> Result<Mat<R>> {
    let n = (v.len().trailing_zeros() / 2) as usize;
    if v.len() != 1 << (2 * n) || n == 0 {
        return input(format!("vector length {} is not 4^n", v.len()));
    }
    let perm = fold_permutation(n);
    let std = DVector::from_fn(v.len(), |k, _| v[perm[k]]);
    unvectorize(&std)
}

/// Normalized Bell vector `|∘> = vec(1/√2)` on one folded site.
pub fn bell_vector<R: Real>() -> Vector<R> {
    let h = R::FRAC_1_SQRT_2();
    DVector::from_vec(vec![cr(h), C::zero(), C::zero(), cr(h)])
}

fn unitarity_residual<R: Real>(u: &Mat<R>) -> R {
    let h = u.adjoint() * u - Mat::<R>::identity(u.nrows(), u.ncols());
    let eig = h.symmetric_eigen();
    eig.eigenvalues.iter().fold(R::zero(), |m, e| m.max(e.abs()))
}

pub fn is_unitary<R: Real>(u: &Mat<R>, tol: R) -> bool {
    u.is_square() && unitarity_residual(u) <= tol
}

/// A two-qubit unitary, qubit 1 on the left tensor factor.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoQubitGate<R: Real> {
    matrix: Mat<R>,
}

impl<R: Real> TwoQubitGate<R> {
    /// Checks shape and unitarity (operator-norm residual ≤ `R::ROUND_TOL`).
    pub fn new(matrix: Mat<R>) -> Result<Self> {
        if matrix.shape() != (4, 4) {
            return input(format!("two-qubit gate must be 4x4, got {:?}", matrix.shape()));
        }
        let res = unitarity_residual(&matrix);
        if !(res <= R::lit(R::ROUND_TOL)) {
            return input(format!("gate is not unitary (residual {res})"));
        }
        Ok(Self { matrix })
    }

    pub(crate) fn new_unchecked(matrix: Mat<R>) -> Self {
        debug_assert_eq!(matrix.shape(), (4, 4));
        Self { matrix }
    }

    pub fn identity() -> Self {
        Self::new_unchecked(Mat::identity(4, 4))
    }

    /// `a ⊗ b` with `a` on qubit 1.
    pub fn local(a: &Mat<R>, b: &Mat<R>) -> Result<Self> {
        if a.shape() != (2, 2) || b.shape() != (2, 2) {
            return input("local factors must be 2x2");
        }
        Self::new(a.kronecker(b))
    }

    /// Control on qubit 1, target on qubit 2.
    pub fn cnot12() -> Self {
        Self::permutation(&[0, 1, 3, 2])
    }

    /// Control on qubit 2, target on qubit 1.
    pub fn cnot21() -> Self {
        Self::permutation(&[0, 3, 2, 1])
    }

    pub fn swap() -> Self {
        Self::permutation(&[0, 2, 1, 3])
    }

    fn permutation(images: &[usize; 4]) -> Self {
        let mut m = Mat::zeros(4, 4);
        for (col, &row) in images.iter().enumerate() {
            m[(row, col)] = C::one();
        }
        Self::new_unchecked(m)
    }

    pub fn matrix(&self) -> &Mat<R> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Mat<R> {
        self.matrix
    }

    pub fn adjoint(&self) -> Self {
        Self::new_unchecked(self.matrix.adjoint())
    }

    /// `self · first`: apply `first`, then `self`.
    pub fn after(&self, first: &Self) -> Self {
        Self::new_unchecked(&self.matrix * &first.matrix)
    }

    /// `(σ_post1 ⊗ σ_post2) · U · (σ_pre1 ⊗ σ_pre2)`.
    pub fn dressed(&self, pre: [PauliIndex; 2], post: [PauliIndex; 2]) -> Self {
        let p = pauli_string::<R>(&pre);
        let q = pauli_string::<R>(&post);
        Self::new_unchecked(q * &self.matrix * p)
    }

    pub fn unitarity_residual(&self) -> R {
        unitarity_residual(&self.matrix)
    }

    /// Smallest `‖U − e^{iφ} V‖` over the global phase φ.
    pub fn phase_distance(&self, other: &Self) -> R {
        phase_distance(&self.matrix, &other.matrix)
    }
}

/// `min_φ ‖a − e^{iφ} b‖_F`.
pub fn phase_distance<R: Real>(a: &Mat<R>, b: &Mat<R>) -> R {
    let overlap = b.iter().zip(a.iter()).fold(C::<R>::zero(), |acc, (x, y)| acc + x.conj() * y);
    let n = crate::scalar::abs(overlap);
    let phase = if n > R::zero() { overlap / C::new(n, R::zero()) } else { C::one() };
    a.iter().zip(b.iter()).fold(R::zero(), |s, (x, y)| s + (*x - phase * y).norm_sqr()).sqrt()
}

/// Channel in the vectorized basis: `vec(E(ρ)) = matrix · vec(ρ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Superoperator<R: Real> {
    n_qubits: usize,
    matrix: Mat<R>,
}

impl<R: Real> Superoperator<R> {
    pub fn new(n_qubits: usize, matrix: Mat<R>) -> Result<Self> {
        if !(1..=2).contains(&n_qubits) {
            return input(format!("superoperators act on 1 or 2 qubits, got {n_qubits}"));
        }
        let dim = 1 << (2 * n_qubits);
        if matrix.shape() != (dim, dim) {
            return input(format!("expected {dim}x{dim} superoperator, got {:?}", matrix.shape()));
        }
        Ok(Self { n_qubits, matrix })
    }

    pub(crate) fn new_unchecked(n_qubits: usize, matrix: Mat<R>) -> Self {
        Self { n_qubits, matrix }
    }

    pub fn identity(n_qubits: usize) -> Self {
        let dim = 1 << (2 * n_qubits);
        Self { n_qubits, matrix: Mat::identity(dim, dim) }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn matrix(&self) -> &Mat<R> {
        &self.matrix
    }

    /// `self ∘ first`.
    pub fn after(&self, first: &Self) -> Self {
        assert_eq!(self.n_qubits, first.n_qubits, "composing channels of different sizes");
        Self { n_qubits: self.n_qubits, matrix: &self.matrix * &first.matrix }
    }

    /// `a ⊗ b` on two qubits from single-qubit channels.
    pub fn tensor(a: &Self, b: &Self) -> Self {
        assert!(a.n_qubits == 1 && b.n_qubits == 1);
        let perm = fold_permutation(2);
        let folded = a.matrix.kronecker(&b.matrix);
        let mut m = Mat::zeros(16, 16);
        for i in 0..16 {
            for j in 0..16 {
                m[(i, j)] = folded[(perm[i], perm[j])];
            }
        }
        Self { n_qubits: 2, matrix: m }
    }

    /// Probability-weighted sum of channels.
    pub fn mixture<'a, I>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (R, &'a Self)>,
    {
        let mut acc: Option<Self> = None;
        for (p, s) in terms {
            match acc.as_mut() {
                None => acc = Some(Self { n_qubits: s.n_qubits, matrix: s.matrix.map(|z| z * p) }),
                Some(a) => {
                    if a.n_qubits != s.n_qubits {
                        return input("mixture of channels with different qubit counts");
                    }
                    a.matrix += s.matrix.map(|z| z * p);
                }
            }
        }
        acc.ok_or_else(|| crate::Error::Input("empty mixture".into()))
    }

    pub fn apply(&self, rho: &Mat<R>) -> Result<Mat<R>> {
        let v = vectorize(rho)?;
        if v.len() != self.matrix.ncols() {
            return input("state dimension does not match channel");
        }
        unvectorize(&(&self.matrix * v))
    }

    /// Matrix in the site-grouped basis `(m_1 n_1, m_2 n_2)`; row = outputs, column = inputs.
    pub fn folded(&self) -> Mat<R> {
        let perm = fold_permutation(self.n_qubits);
        let dim = perm.len();
        let mut f = Mat::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                f[(perm[i], perm[j])] = self.matrix[(i, j)];
            }
        }
        f
    }

    pub fn from_folded(n_qubits: usize, folded: &Mat<R>) -> Result<Self> {
        let perm = fold_permutation(n_qubits);
        let dim = perm.len();
        if folded.shape() != (dim, dim) {
            return input("folded matrix has wrong shape");
        }
        let m = Mat::from_fn(dim, dim, |i, j| folded[(perm[i], perm[j])]);
        Self::new(n_qubits, m)
    }
}

/// `U ⊗ U*` for a two-qubit gate.
pub fn unitary_superop<R: Real>(u: &TwoQubitGate<R>) -> Superoperator<R> {
    Superoperator::new_unchecked(2, u.matrix().kronecker(&u.matrix().conjugate()))
}

/// `U ⊗ U*` for a one- or two-qubit unitary given as a matrix.
pub fn unitary_superop_of<R: Real>(u: &Mat<R>) -> Result<Superoperator<R>> {
    let n = qubits_of_dim(u.nrows()).filter(|_| u.is_square());
    match n {
        Some(n) if n <= 2 && is_unitary(u, R::lit(R::ROUND_TOL)) => {
            Ok(Superoperator::new_unchecked(n, u.kronecker(&u.conjugate())))
        }
        _ => input("expected a one- or two-qubit unitary"),
    }
}

/// `Σ K ⊗ K*`.
pub fn kraus_superop<R: Real>(kraus: &[Mat<R>]) -> Result<Superoperator<R>> {
    let first = kraus.first().ok_or_else(|| crate::Error::Input("empty Kraus list".into()))?;
    let d = first.nrows();
    let n = match qubits_of_dim(d) {
        Some(n) if n <= 2 => n,
        _ => return input("Kraus operators must be 2x2 or 4x4"),
    };
    let mut m = Mat::zeros(d * d, d * d);
    for k in kraus {
        if k.shape() != (d, d) {
            return input("Kraus operators have inconsistent shapes");
        }
        m += k.kronecker(&k.conjugate());
    }
    Superoperator::new(n, m)
}

/// Columns are `vec(P_a)` for every Pauli string `a`.
fn pauli_basis<R: Real>(n_qubits: usize) -> Mat<R> {
    let dim = 1 << (2 * n_qubits);
    let mut q = Mat::zeros(dim, dim);
    for a in 0..dim {
        let v = vectorize(&pauli_string_from_index::<R>(a, n_qubits)).expect("square");
        q.set_column(a, &v);
    }
    q
}

/// Real Pauli transfer matrix `R_{b,a} = 2^{-n} Tr[P_b E(P_a)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliTransferMatrix<R: Real> {
    n_qubits: usize,
    entries: DMatrix<R>,
}

impl<R: Real> PauliTransferMatrix<R> {
    pub fn new(n_qubits: usize, entries: DMatrix<R>) -> Result<Self> {
        let dim = 1 << (2 * n_qubits);
        if !(1..=2).contains(&n_qubits) || entries.shape() != (dim, dim) {
            return input("PTM shape does not match qubit count");
        }
        Ok(Self { n_qubits, entries })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn entries(&self) -> &DMatrix<R> {
        &self.entries
    }

    /// Entry for output string `out` and input string `inp`.
    pub fn get(&self, out: &[PauliIndex], inp: &[PauliIndex]) -> R {
        let idx = |ps: &[PauliIndex]| ps.iter().fold(0, |a, p| a * 4 + p.value());
        self.entries[(idx(out), idx(inp))]
    }

    /// Elementwise product with a mask indexed like the entries.
    pub fn hadamard(&self, mask: &DMatrix<R>) -> Self {
        Self { n_qubits: self.n_qubits, entries: self.entries.component_mul(mask) }
    }
}

pub fn superop_to_ptm<R: Real>(e: &Superoperator<R>) -> PauliTransferMatrix<R> {
    let q = pauli_basis::<R>(e.n_qubits);
    let scale = R::one() / R::lit((1u32 << e.n_qubits) as f64);
    let full = q.adjoint() * e.matrix() * q;
    PauliTransferMatrix { n_qubits: e.n_qubits, entries: full.map(|z| z.re * scale) }
}

pub fn ptm_to_superop<R: Real>(p: &PauliTransferMatrix<R>) -> Superoperator<R> {
    let q = pauli_basis::<R>(p.n_qubits);
    let scale = R::one() / R::lit((1u32 << p.n_qubits) as f64);
    let m = &q * p.entries.map(cr) * q.adjoint();
    Superoperator::new_unchecked(p.n_qubits, m.map(|z| z * scale))
}

/// Unnormalized Choi matrix `Σ_{ij} |i><j| ⊗ E(|i><j|)`, trace `2^n` for TP maps.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiMatrix<R: Real> {
    pub matrix: Mat<R>,
}

impl<R: Real> ChoiMatrix<R> {
    pub fn eigenvalues(&self) -> Vec<R> {
        let herm = (&self.matrix + self.matrix.adjoint()).map(|z| z * R::lit(0.5));
        let mut ev: Vec<R> = herm.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        ev
    }

    pub fn hermiticity_residual(&self) -> R {
        frob(&(&self.matrix - self.matrix.adjoint()))
    }
}

pub fn choi_of<R: Real>(e: &Superoperator<R>) -> ChoiMatrix<R> {
    let d = 1 << e.n_qubits;
    let s = e.matrix();
    // C_{(i,m),(j,n)} = E(|i><j|)_{mn} = S_{(m,n),(i,j)}
    let m = Mat::from_fn(d * d, d * d, |r, col| {
        let (i, mm) = (r / d, r % d);
        let (j, nn) = (col / d, col % d);
        s[(mm * d + nn, i * d + j)]
    });
    ChoiMatrix { matrix: m }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CptpReport<R> {
    pub cp: bool,
    pub tp: bool,
    pub unital: bool,
    pub min_choi_eigenvalue: R,
    pub tp_residual: R,
    pub unital_residual: R,
}

/// Trace-preservation residual `‖<vec 1| S − <vec 1|‖`.
pub fn tp_residual<R: Real>(e: &Superoperator<R>) -> R {
    let d = 1 << e.n_qubits;
    let s = e.matrix();
    let mut acc = R::zero();
    for col in 0..d * d {
        let mut sum = C::<R>::zero();
        for m in 0..d {
            sum += s[(m * d + m, col)];
        }
        let target = if col / d == col % d { C::one() } else { C::zero() };
        acc += (sum - target).norm_sqr();
    }
    acc.sqrt()
}

/// Unitality residual `‖S |vec 1> − |vec 1>‖`.
pub fn unital_residual<R: Real>(e: &Superoperator<R>) -> R {
    let d = 1 << e.n_qubits;
    let s = e.matrix();
    let mut acc = R::zero();
    for row in 0..d * d {
        let mut sum = C::<R>::zero();
        for i in 0..d {
            sum += s[(row, i * d + i)];
        }
        let target = if row / d == row % d { C::one() } else { C::zero() };
        acc += (sum - target).norm_sqr();
    }
    acc.sqrt()
}

pub fn check_cptp<R: Real>(e: &Superoperator<R>, tol: R) -> CptpReport<R> {
    let min_eig = choi_of(e).eigenvalues()[0];
    let tp_res = tp_residual(e);
    let un_res = unital_residual(e);
    CptpReport {
        cp: min_eig >= -tol,
        tp: tp_res <= tol,
        unital: un_res <= tol,
        min_choi_eigenvalue: min_eig,
        tp_residual: tp_res,
        unital_residual: un_res,
    }
}

/// Single-qubit Pauli channel `ρ ↦ (1−Σp)ρ + Σ p_α σ_α ρ σ_α`.
pub fn pauli_channel<R: Real>(px: R, py: R, pz: R) -> Superoperator<R> {
    let p0 = R::one() - px - py - pz;
    let terms = [p0, px, py, pz];
    let mut m = Mat::zeros(4, 4);
    for (k, p) in PauliIndex::ALL.iter().zip(terms) {
        let s = pauli::<R>(*k);
        m += s.kronecker(&s.conjugate()).map(|z| z * p);
    }
    Superoperator::new_unchecked(1, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::haar_unitary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type M = Mat<f64>;

    fn random_matrix(d: usize, rng: &mut ChaCha8Rng) -> M {
        use rand_distr::{Distribution, StandardNormal};
        M::from_fn(d, d, |_, _| {
            C::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
        })
    }

    #[test]
    fn paulis_are_hermitian_involutions() {
        for p in PauliIndex::ALL {
            let s = pauli::<f64>(p);
            assert!(frob(&(&s - s.adjoint())) < 1e-15);
            assert!(frob(&(&s * &s - M::identity(2, 2))) < 1e-15);
            if !p.is_identity() {
                assert!(s.trace().norm() < 1e-15);
            }
        }
        assert!(PauliIndex::new(4).is_err());
    }

    #[test]
    fn vectorize_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v = vectorize(&M::identity(2, 2).map(|z| z * h)).unwrap();
        assert!((&v - bell_vector::<f64>()).norm() < 1e-15);
        let mut p0 = M::zeros(2, 2);
        p0[(0, 0)] = C::one();
        assert_eq!(vectorize(&p0).unwrap().as_slice(), &[C::one(), C::zero(), C::zero(), C::zero()]);
        let x = vectorize(&pauli::<f64>(PauliIndex::X)).unwrap();
        assert_eq!(x.as_slice(), &[C::zero(), C::one(), C::one(), C::zero()]);
        assert!(vectorize(&M::zeros(2, 3)).is_err());
        assert!(vectorize(&M::zeros(3, 3)).is_err());
    }

    #[test]
    fn sandwich_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [2, 4] {
            let (a, b, rho) = (random_matrix(d, &mut rng), random_matrix(d, &mut rng), random_matrix(d, &mut rng));
            let lhs = vectorize(&(&a * &rho * b.adjoint())).unwrap();
            let rhs = a.kronecker(&b.conjugate()) * vectorize(&rho).unwrap();
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn folded_vectorization_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rho = random_matrix(4, &mut rng);
        let f = vectorize_folded(&rho).unwrap();
        assert!(frob(&(unvectorize_folded(&f).unwrap() - &rho)) < 1e-15);
        let a = random_matrix(2, &mut rng);
        let b = random_matrix(2, &mut rng);
        let ab = vectorize_folded(&a.kronecker(&b)).unwrap();
        let expect = vectorize(&a).unwrap().kronecker(&vectorize(&b).unwrap());
        assert!((ab - expect).norm() < 1e-14);
    }

    #[test]
    fn unitary_superop_examples() {
        let id = unitary_superop(&TwoQubitGate::<f64>::identity());
        assert!(frob(&(id.matrix() - M::identity(16, 16))) < 1e-15);

        let x1 = TwoQubitGate::local(&pauli(PauliIndex::X), &M::identity(2, 2)).unwrap();
        let sx = unitary_superop(&x1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rho = random_matrix(4, &mut rng);
        let direct = x1.matrix() * &rho * x1.matrix().adjoint();
        assert!(frob(&(sx.apply(&rho).unwrap() - direct)) < 1e-13);

        let u = TwoQubitGate::new(haar_unitary::<f64, _>(4, &mut rng)).unwrap();
        let s = unitary_superop(&u);
        let ev = choi_of(&s).eigenvalues();
        assert!((ev[15] - 4.0).abs() < 1e-10);
        assert!(ev[..15].iter().all(|e| e.abs() < 1e-10));
        let rep = check_cptp(&s, 1e-10);
        assert!(rep.cp && rep.tp && rep.unital);
        assert!(s.matrix().clone().try_inverse().is_some());
    }

    #[test]
    fn gate_constructor_rejects_bad_input() {
        assert!(TwoQubitGate::<f64>::new(M::identity(2, 2)).is_err());
        assert!(TwoQubitGate::<f64>::new(M::identity(4, 4).map(|z| z * 2.0)).is_err());
        assert!(unitary_superop_of(&M::identity(2, 2).map(|z| z * 0.5)).is_err());
    }

    #[test]
    fn kraus_examples() {
        let id = kraus_superop(&[M::identity(2, 2)]).unwrap();
        assert!(frob(&(id.matrix() - M::identity(4, 4))) < 1e-15);

        let h = 0.5f64.sqrt();
        let deph = kraus_superop(&[
            M::identity(2, 2).map(|z| z * h),
            pauli::<f64>(PauliIndex::Z).map(|z| z * h),
        ])
        .unwrap();
        let ptm = superop_to_ptm(&deph);
        let expect = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0]));
        assert!((ptm.entries() - expect).norm() < 1e-14);

        let depol: Vec<M> = PauliIndex::ALL.iter().map(|&p| pauli::<f64>(p).map(|z| z * 0.5)).collect();
        let ptm = superop_to_ptm(&kraus_superop(&depol).unwrap());
        let mut expect = DMatrix::zeros(4, 4);
        expect[(0, 0)] = 1.0;
        assert!((ptm.entries() - expect).norm() < 1e-14);

        assert!(kraus_superop::<f64>(&[]).is_err());
    }

    #[test]
    fn ptm_round_trip_and_clifford() {
        let cnot = unitary_superop(&TwoQubitGate::<f64>::cnot12());
        let ptm = superop_to_ptm(&cnot);
        for v in ptm.entries().iter() {
            let nearest = v.round();
            assert!((v - nearest).abs() < 1e-14 && nearest.abs() <= 1.0);
        }
        // each row and column of a Clifford PTM has exactly one nonzero
        for r in 0..16 {
            assert_eq!(ptm.entries().row(r).iter().filter(|v| v.abs() > 0.5).count(), 1);
        }
        let back = ptm_to_superop(&ptm);
        assert!(frob(&(back.matrix() - cnot.matrix())) < 1e-12);

        let id = superop_to_ptm(&Superoperator::<f64>::identity(2));
        assert!((id.entries() - DMatrix::identity(16, 16)).norm() < 1e-14);
    }

    #[test]
    fn cptp_examples() {
        let double = Superoperator::<f64>::new(1, M::identity(4, 4).map(|z| z * 2.0)).unwrap();
        assert!(!check_cptp(&double, 1e-10).tp);

        let mut k0 = M::zeros(2, 2);
        k0[(0, 0)] = C::one();
        let mut k1 = M::zeros(2, 2);
        k1[(0, 1)] = C::one();
        let amp = kraus_superop(&[k0, k1]).unwrap();
        let rep = check_cptp(&amp, 1e-10);
        assert!(rep.cp && rep.tp && !rep.unital);
        assert!(choi_of(&amp).hermiticity_residual() < 1e-12);
    }

    #[test]
    fn composition_matches_kraus_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ka: Vec<M> = (0..3).map(|_| random_matrix(4, &mut rng)).collect();
        let kb: Vec<M> = (0..2).map(|_| random_matrix(4, &mut rng)).collect();
        let a = kraus_superop(&ka).unwrap();
        let b = kraus_superop(&kb).unwrap();
        let mut kab = Vec::new();
        for x in &kb {
            for y in &ka {
                kab.push(x * y);
            }
        }
        let direct = kraus_superop(&kab).unwrap();
        assert!(frob(&(b.after(&a).matrix() - direct.matrix())) < 1e-10);
    }

    #[test]
    fn tensor_of_single_qubit_channels() {
        let a = pauli_channel(0.1, 0.2, 0.05);
        let b = pauli_channel(0.0, 0.3, 0.1);
        let ab = Superoperator::tensor(&a, &b);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_matrix(2, &mut rng);
        let y = random_matrix(2, &mut rng);
        let lhs = ab.apply(&x.kronecker(&y)).unwrap();
        let rhs = a.apply(&x).unwrap().kronecker(&b.apply(&y).unwrap());
        assert!(frob(&(lhs - rhs)) < 1e-13);
    }

    #[test]
    fn mixture_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let us: Vec<_> = (0..3)
            .map(|_| unitary_superop(&TwoQubitGate::new(haar_unitary::<f64, _>(4, &mut rng)).unwrap()))
            .collect();
        let ps = [0.2, 0.5, 0.3];
        let mix = Superoperator::mixture(ps.iter().copied().zip(us.iter())).unwrap();
        let rho = random_matrix(4, &mut rng);
        let mut direct = M::zeros(4, 4);
        for (p, u) in ps.iter().zip(&us) {
            direct += u.apply(&rho).unwrap().map(|z| z * *p);
        }
        assert!(frob(&(mix.apply(&rho).unwrap() - direct)) < 1e-13);
    }

    #[test]
    fn phase_distance_ignores_global_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let u = haar_unitary::<f64, _>(4, &mut rng);
        let v = u.map(|z| z * C::from_polar(1.0, 0.7));
        assert!(phase_distance(&u, &v) < 1e-12);
    }
}
