//! Floating-point scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar the line, device and solver math is written against: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Machine epsilon used for singularity checks.
    const EPS: Self;

    /// Converts an `f64` model constant into this scalar.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    const EPS: Self = f32::EPSILON;
}

impl Scalar for f64 {
    const EPS: Self = f64::EPSILON;
}

/// Complex phasor over a [`Scalar`].
pub type Cplx<T> = Complex<T>;

#[cfg(test)]
pub(crate) fn c<T: Scalar>(re: f64, im: f64) -> Cplx<T> {
    Complex::new(T::lit(re), T::lit(im))
}

pub(crate) fn czero<T: Scalar>() -> Cplx<T> {
    Complex::new(T::zero(), T::zero())
}

/// Unit phasor at `deg` degrees.
pub fn polar_deg<T: Scalar>(mag: T, deg: T) -> Cplx<T> {
    Complex::from_polar(mag, deg.to_radians())
}
