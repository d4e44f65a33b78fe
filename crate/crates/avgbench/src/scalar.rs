//! Scalar abstraction shared by every module.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_complex::Complex;
use num_traits::{FloatConst, FromPrimitive, ToPrimitive};

/// Real floating-point type the toolkit is generic over.
///
/// The associated tolerances are the defaults used by structural checks.
/// They scale with the precision of the type, so the same code path runs in
/// `f32` with looser thresholds.
pub trait Real:
    RealField + Copy + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Default tolerance for unitarity, CPTP and space-time flags.
    const STRUCT_TOL: f64;
    /// Tolerance for identities that should hold to rounding (round trips).
    const ROUND_TOL: f64;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    const STRUCT_TOL: f64 = 1e-10;
    const ROUND_TOL: f64 = 1e-12;
}

impl Real for f32 {
    const STRUCT_TOL: f64 = 1e-4;
    const ROUND_TOL: f64 = 1e-5;
}

/// Complex number over `R`.
pub type C<R> = Complex<R>;

pub(crate) fn c<R: Real>(re: f64, im: f64) -> C<R> {
    Complex::new(R::lit(re), R::lit(im))
}

pub(crate) fn cr<R: Real>(re: R) -> C<R> {
    Complex::new(re, R::zero())
}

/// `e^{iθ}`.
pub fn cis<R: Real>(theta: R) -> C<R> {
    Complex::new(theta.cos(), theta.sin())
}

pub(crate) fn arg<R: Real>(z: C<R>) -> R {
    z.im.atan2(z.re)
}

pub(crate) fn abs<R: Real>(z: C<R>) -> R {
    z.norm_sqr().sqrt()
}

pub(crate) fn csqrt<R: Real>(z: C<R>) -> C<R> {
    let r = abs(z).sqrt();
    let half = arg(z) / R::lit(2.0);
    Complex::new(r * half.cos(), r * half.sin())
}
