//! Space-time unitality of folded two-qubit channels and the transfer objects
//! derived from them.
//!
//! Folded channels are indexed `F[(o1, o2), (i1, i2)]` with a local index
//! `2m + n` per site. All single-site maps below act on ordinary vectorized
//! density matrices, so they compose with [`Superoperator`] directly.

use std::fmt;

use nalgebra::DMatrix;
use num_traits::Zero;

use crate::pauli::{bell_vector, Mat, Superoperator};
use crate::scalar::{cr, Real, C};

/// Which spatial condition(s) a channel satisfies on top of TP and unitality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpaceTimeLabel {
    General,
    ThreeWayLeft,
    ThreeWayRight,
    FourWay,
}

impl fmt::Display for SpaceTimeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::General => "general",
            Self::ThreeWayLeft => "3-way-left",
            Self::ThreeWayRight => "3-way-right",
            Self::FourWay => "4-way",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpaceTimeClass<R> {
    pub tp: bool,
    pub unital: bool,
    pub left_space_unital: bool,
    pub right_space_unital: bool,
    /// Frobenius residuals in the order tp, unital, left, right.
    pub residuals: [R; 4],
}

impl<R: Real> SpaceTimeClass<R> {
    pub fn label(&self) -> SpaceTimeLabel {
        match (self.tp && self.unital, self.left_space_unital, self.right_space_unital) {
            (true, true, true) => SpaceTimeLabel::FourWay,
            (true, false, true) => SpaceTimeLabel::ThreeWayRight,
            (true, true, false) => SpaceTimeLabel::ThreeWayLeft,
            _ => SpaceTimeLabel::General,
        }
    }

    pub fn max_residual(&self) -> R {
        self.residuals.iter().copied().fold(R::zero(), |a, b| a.max(b))
    }

    pub fn is_four_way(&self) -> bool {
        self.label() == SpaceTimeLabel::FourWay
    }

    /// TP, unital and right-space-unital (4-way channels included).
    pub fn is_right_three_way(&self) -> bool {
        self.tp && self.unital && self.right_space_unital
    }

    /// TP, unital and left-space-unital (4-way channels included).
    pub fn is_left_three_way(&self) -> bool {
        self.tp && self.unital && self.left_space_unital
    }
}

fn circ<R: Real>() -> [R; 4] {
    let h = R::FRAC_1_SQRT_2();
    [h, R::zero(), R::zero(), h]
}

/// Trace covector on one site: `Tr ρ = Σ trace[k]·vec(ρ)[k]`.
pub(crate) fn trace_covector<R: Real>() -> [R; 4] {
    [R::one(), R::zero(), R::zero(), R::one()]
}

/// `vec(1/2)`.
pub(crate) fn mixed_vector<R: Real>() -> [R; 4] {
    let h = R::lit(0.5);
    [h, R::zero(), R::zero(), h]
}

fn folded_two_qubit<R: Real>(e: &Superoperator<R>) -> Mat<R> {
    assert_eq!(e.n_qubits(), 2, "expected a two-qubit channel");
    e.folded()
}

#[inline]
fn idx(a: usize, b: usize) -> usize {
    4 * a + b
}

/// Contracts a pair of legs of the folded channel with the Bell vector.
/// `cap_out` is 0 or 1 (which output site), same for `cap_in`.
fn cap<R: Real>(f: &Mat<R>, cap_out: usize, cap_in: usize) -> Mat<R> {
    let b = circ::<R>();
    Mat::from_fn(4, 4, |o, i| {
        let mut acc = C::<R>::zero();
        for x in 0..4 {
            if b[x].is_zero() {
                continue;
            }
            for y in 0..4 {
                if b[y].is_zero() {
                    continue;
                }
                let row = if cap_out == 0 { idx(x, o) } else { idx(o, x) };
                let col = if cap_in == 0 { idx(y, i) } else { idx(i, y) };
                acc += f[(row, col)] * cr(b[x] * b[y]);
            }
        }
        acc
    })
}

fn projector_residual<R: Real>(m: &Mat<R>) -> R {
    let b = circ::<R>();
    let target = Mat::from_fn(4, 4, |i, j| cr(b[i] * b[j]));
    (m - target).norm()
}

/// Tests the four Bell-leg identities with absolute tolerance `tol`.
pub fn classify<R: Real>(e: &Superoperator<R>, tol: R) -> SpaceTimeClass<R> {
    let f = folded_two_qubit(e);
    let b = circ::<R>();
    let bb: Vec<R> = (0..16).map(|k| b[k / 4] * b[k % 4]).collect();

    let mut tp = R::zero();
    let mut un = R::zero();
    for k in 0..16 {
        let mut row = C::<R>::zero();
        let mut col = C::<R>::zero();
        for j in 0..16 {
            row += f[(j, k)] * cr(bb[j]);
            col += f[(k, j)] * cr(bb[j]);
        }
        tp += (row - cr(bb[k])).norm_sqr();
        un += (col - cr(bb[k])).norm_sqr();
    }
    let (tp, un) = (tp.sqrt(), un.sqrt());
    let right = projector_residual(&cap(&f, 1, 1));
    let left = projector_residual(&cap(&f, 0, 0));
    SpaceTimeClass {
        tp: tp <= tol,
        unital: un <= tol,
        left_space_unital: left <= tol,
        right_space_unital: right <= tol,
        residuals: [tp, un, left, right],
    }
}

/// Direction of the light ray a transfer matrix propagates along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Input of the left qubit to output of the right qubit.
    Plus,
    /// Input of the right qubit to output of the left qubit.
    Minus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferMatrix<R: Real> {
    pub side: Side,
    pub map: Superoperator<R>,
}

impl<R: Real> TransferMatrix<R> {
    pub fn matrix(&self) -> &Mat<R> {
        self.map.matrix()
    }

    /// Eigenvalue moduli in decreasing order.
    pub fn spectrum_moduli(&self) -> Vec<R> {
        let mut ev = general_eigen_moduli(self.matrix());
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        ev
    }

    /// Second-largest eigenvalue modulus, the decay rate of correlations along the ray.
    pub fn subleading_modulus(&self) -> R {
        self.spectrum_moduli().get(1).copied().unwrap_or(R::zero())
    }
}

/// Eigenvalue moduli of a complex matrix via the real 2n×2n embedding.
fn general_eigen_moduli<R: Real>(m: &Mat<R>) -> Vec<R> {
    let n = m.nrows();
    let real = DMatrix::<R>::from_fn(2 * n, 2 * n, |i, j| {
        let z = m[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let mut ev: Vec<R> = real.complex_eigenvalues().iter().map(|z| (z.re * z.re + z.im * z.im).sqrt()).collect();
    // each eigenvalue of m appears in the embedding together with its conjugate
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    ev.into_iter().step_by(2).collect()
}

/// `M+` (left input to right output) or `M−` (right input to left output);
/// the other input is the maximally mixed state and the other output is traced.
pub fn transfer<R: Real>(e: &Superoperator<R>, side: Side) -> TransferMatrix<R> {
    let f = folded_two_qubit(e);
    let t = trace_covector::<R>();
    let m = mixed_vector::<R>();
    let mat = Mat::from_fn(4, 4, |o, i| {
        let mut acc = C::<R>::zero();
        for x in 0..4 {
            for y in 0..4 {
                let w = t[x] * m[y];
                if w.is_zero() {
                    continue;
                }
                let (row, col) = match side {
                    Side::Plus => (idx(x, o), idx(i, y)),
                    Side::Minus => (idx(o, x), idx(y, i)),
                };
                acc += f[(row, col)] * cr(w);
            }
        }
        acc
    });
    TransferMatrix { side, map: Superoperator::new_unchecked(1, mat) }
}

/// Maps attached to the ends of a three-site light-cone band.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryMaps<R: Real> {
    /// Right-input to right-output map with the left input maximally mixed and the left output traced.
    pub m_r: Superoperator<R>,
    /// `ρ ↦ E(ρ ⊗ 1/2)`, a 16×4 map from one site to the folded pair.
    pub e_l: Mat<R>,
}

pub fn m_r<R: Real>(e: &Superoperator<R>) -> Superoperator<R> {
    let f = folded_two_qubit(e);
    let t = trace_covector::<R>();
    let m = mixed_vector::<R>();
    let mat = Mat::from_fn(4, 4, |o, i| {
        let mut acc = C::<R>::zero();
        for x in 0..4 {
            for y in 0..4 {
                let w = t[x] * m[y];
                if !w.is_zero() {
                    acc += f[(idx(x, o), idx(y, i))] * cr(w);
                }
            }
        }
        acc
    });
    Superoperator::new_unchecked(1, mat)
}

pub fn e_l<R: Real>(e: &Superoperator<R>) -> Mat<R> {
    let f = folded_two_qubit(e);
    let m = mixed_vector::<R>();
    Mat::from_fn(16, 4, |o, i| (0..4).fold(C::<R>::zero(), |acc, y| acc + f[(o, idx(i, y))] * cr(m[y])))
}

/// `M_R` from the first-layer channel and `E_L` from the last-layer channel.
pub fn boundary_maps<R: Real>(e_first: &Superoperator<R>, e_last: &Superoperator<R>) -> BoundaryMaps<R> {
    BoundaryMaps { m_r: m_r(e_first), e_l: e_l(e_last) }
}

/// Two-site step `M+²` of a three-site band: `E_right` acts on the band's right
/// site with a maximally mixed partner further right; then `E_left` acts on
/// the band's left site and the first output of `E_right`, and its left output
/// is traced. In and out indices are folded pairs `(left, right)`; the band
/// moves one site to the right.
pub fn two_site_transfer<R: Real>(e_left: &Superoperator<R>, e_right: &Superoperator<R>) -> Mat<R> {
    let fl = folded_two_qubit(e_left);
    let el = e_l(e_right);
    let t = trace_covector::<R>();
    // E_left with its first output traced: [a, (u, x)]
    let lt = Mat::<R>::from_fn(4, 16, |a, col| {
        (0..4).fold(C::<R>::zero(), |acc, o1| if t[o1].is_zero() { acc } else { acc + fl[(idx(o1, a), col)] * cr(t[o1]) })
    });
    Mat::from_fn(16, 16, |row, col| {
        let (a, w) = (row / 4, row % 4);
        let (u, v) = (col / 4, col % 4);
        (0..4).fold(C::<R>::zero(), |acc, x| acc + lt[(a, idx(u, x))] * el[(idx(x, w), v)])
    })
}

/// Completely depolarizing channel on `n` qubits.
pub fn depolarizing<R: Real>(n_qubits: usize) -> Superoperator<R> {
    let d = 1usize << n_qubits;
    let mut m = Mat::<R>::zeros(d * d, d * d);
    let inv = R::one() / R::lit(d as f64);
    for a in 0..d {
        for b in 0..d {
            m[(a * d + a, b * d + b)] = cr(inv);
        }
    }
    Superoperator::new_unchecked(n_qubits, m)
}

/// `|∘⟩⟨∘|` as a 4×4 matrix, handy for tests and diagnostics.
pub fn bell_projector<R: Real>() -> Mat<R> {
    let b = bell_vector::<R>();
    &b * b.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kak::{kak_compose, KakForm};
    use crate::pauli::{pauli, superop_to_ptm, unitary_superop, PauliIndex, TwoQubitGate};
    use crate::random::{haar_gate, stream_rng};
    use std::f64::consts::FRAC_PI_4;

    const TOL: f64 = 1e-10;

    fn interaction(t: [f64; 3]) -> Superoperator<f64> {
        unitary_superop(&kak_compose(&KakForm::interaction(t)))
    }

    #[test]
    fn dual_unitary_is_four_way() {
        for tz in [0.0, 0.3, -0.7] {
            let c = classify(&interaction([FRAC_PI_4, FRAC_PI_4, tz]), TOL);
            assert_eq!(c.label(), SpaceTimeLabel::FourWay, "{c:?}");
        }
    }

    #[test]
    fn generic_unitary_is_only_tp_unital() {
        let c = classify(&interaction([0.3, 0.1, 0.05]), TOL);
        assert!(c.tp && c.unital && !c.left_space_unital && !c.right_space_unital);
        assert_eq!(c.label(), SpaceTimeLabel::General);
    }

    #[test]
    fn depolarizing_transfer_is_depolarizing() {
        let d = depolarizing::<f64>(2);
        assert_eq!(classify(&d, TOL).label(), SpaceTimeLabel::FourWay);
        for side in [Side::Plus, Side::Minus] {
            let m = transfer(&d, side);
            let ptm = superop_to_ptm(&m.map);
            let mut expect = DMatrix::<f64>::zeros(4, 4);
            expect[(0, 0)] = 1.0;
            assert!((ptm.entries() - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn swap_transports_light_rays() {
        let s = unitary_superop(&TwoQubitGate::<f64>::swap());
        for side in [Side::Plus, Side::Minus] {
            assert!((transfer(&s, side).matrix() - Mat::<f64>::identity(4, 4)).norm() < 1e-14);
        }
    }

    #[test]
    fn transfer_matches_physical_definition() {
        // M+(ρ) = Tr_1 E(ρ ⊗ 1/2)
        let mut rng = stream_rng(31, 0);
        let g: TwoQubitGate<f64> = haar_gate(&mut rng);
        let e = unitary_superop(&g);
        let rho = pauli::<f64>(PauliIndex::X).map(|z| z * 0.3) + Mat::identity(2, 2).map(|z| z * 0.5);
        let joint = e.apply(&rho.kronecker(&Mat::identity(2, 2).map(|z| z * 0.5))).unwrap();
        let tr1 = Mat::from_fn(2, 2, |a, b| joint[(a, b)] + joint[(2 + a, 2 + b)]);
        let got = transfer(&e, Side::Plus).map.apply(&rho).unwrap();
        assert!((got - tr1).norm() < 1e-13);
        // M−(ρ) = Tr_2 E(1/2 ⊗ ρ)
        let joint = e.apply(&Mat::identity(2, 2).map(|z| z * 0.5).kronecker(&rho)).unwrap();
        let tr2 = Mat::from_fn(2, 2, |a, b| joint[(2 * a, 2 * b)] + joint[(2 * a + 1, 2 * b + 1)]);
        let got = transfer(&e, Side::Minus).map.apply(&rho).unwrap();
        assert!((got - tr2).norm() < 1e-13);
    }

    #[test]
    fn transfer_of_four_way_channel_is_unital_cptp_with_unit_eigenvalue() {
        let e = interaction([FRAC_PI_4, FRAC_PI_4, 0.4]);
        for side in [Side::Plus, Side::Minus] {
            let t = transfer(&e, side);
            let rep = crate::pauli::check_cptp(&t.map, 1e-10);
            assert!(rep.cp && rep.tp && rep.unital);
            let sp = t.spectrum_moduli();
            assert!((sp[0] - 1.0).abs() < 1e-10);
            assert!(sp.iter().all(|&x| x <= 1.0 + 1e-10));
        }
    }

    #[test]
    fn boundary_maps_of_identity() {
        let id = Superoperator::<f64>::identity(2);
        let b = boundary_maps(&id, &id);
        assert!((b.m_r.matrix() - Mat::identity(4, 4)).norm() < 1e-15);
        // E_L(ρ) = ρ ⊗ 1/2 in folded order
        let rho = pauli::<f64>(PauliIndex::Z);
        let v = crate::pauli::vectorize(&rho).unwrap();
        let out = &b.e_l * v;
        let expect = crate::pauli::vectorize_folded(&rho.kronecker(&Mat::identity(2, 2).map(|z| z * 0.5))).unwrap();
        assert!((out - expect).norm() < 1e-15);
    }

    #[test]
    fn two_site_transfer_of_identities_shifts_band() {
        // identity channels: the left site is traced away and the band becomes (old right, fresh mixed)
        let id = Superoperator::<f64>::identity(2);
        let m = two_site_transfer(&id, &id);
        let t = trace_covector::<f64>();
        let mx = mixed_vector::<f64>();
        for row in 0..16 {
            for col in 0..16 {
                let (a, w) = (row / 4, row % 4);
                let (u, v) = (col / 4, col % 4);
                let expect = t[u] * if a == v { 1.0 } else { 0.0 } * mx[w];
                assert!((m[(row, col)] - C::new(expect, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn subleading_modulus_of_swap_is_one() {
        let s = unitary_superop(&TwoQubitGate::<f64>::swap());
        assert!((transfer(&s, Side::Plus).subleading_modulus() - 1.0).abs() < 1e-12);
        let d = depolarizing::<f64>(2);
        assert!(transfer(&d, Side::Plus).subleading_modulus() < 1e-12);
    }

    #[test]
    fn bell_projector_is_rank_one() {
        let p = bell_projector::<f64>();
        assert!((&p * &p - &p).norm() < 1e-15);
    }
}
