//! Random unitaries and per-round seed derivation.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::pauli::{Mat, TwoQubitGate};
use crate::scalar::{abs, arg, cis, Real, C};

/// Haar-distributed `d×d` unitary (QR of a complex Ginibre matrix with the
/// phases of `R`'s diagonal divided out).
pub fn haar_unitary<R: Real, G: Rng + ?Sized>(d: usize, rng: &mut G) -> Mat<R> {
    let g: DMatrix<C<R>> = DMatrix::from_fn(d, d, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C::new(R::lit(re), R::lit(im))
    });
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        let rjj = r[(j, j)];
        let n = abs(rjj);
        let phase = if n == R::zero() { C::new(R::one(), R::zero()) } else { rjj / C::new(n, R::zero()) };
        for i in 0..d {
            q[(i, j)] *= phase;
        }
    }
    q
}

pub fn haar_gate<R: Real, G: Rng + ?Sized>(rng: &mut G) -> TwoQubitGate<R> {
    TwoQubitGate::new_unchecked(haar_unitary(4, rng))
}

/// Haar gate rescaled to unit determinant.
pub fn haar_su4<R: Real, G: Rng + ?Sized>(rng: &mut G) -> TwoQubitGate<R> {
    let u = haar_unitary::<R, G>(4, rng);
    let det = u.determinant();
    let phase = cis(-arg(det) / R::lit(4.0));
    TwoQubitGate::new_unchecked(u.map(|z| z * phase))
}

/// Independent generator for `(seed, stream)`, stable across thread counts.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
