//! Scalar abstractions shared by every solver component.
//!
//! [`Real`] is the floating-point type the discretization and the tableau are
//! computed in (`f32` or `f64`). [`Field`] is what the Krylov solver works
//! over: either a [`Real`] itself or a [`Complex`] number built on one.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, Zero};

/// Floating point: f32 or f64.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + Field<Real = Self>
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal not representable")
    }

    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize not representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Scalar field a Krylov method can run over.
pub trait Field: Copy + NumAssign + std::ops::Neg<Output = Self> + Debug + Send + Sync + 'static {
    type Real: Real;

    fn conj(self) -> Self;
    fn modulus(self) -> Self::Real;
    fn from_real(r: Self::Real) -> Self;
    fn re(self) -> Self::Real;
    fn im(self) -> Self::Real;
    fn finite(self) -> bool;

    #[inline]
    fn scale(self, r: Self::Real) -> Self {
        self * Self::from_real(r)
    }
}

macro_rules! real_field {
    ($t:ty) => {
        impl Field for $t {
            type Real = $t;
            #[inline]
            fn conj(self) -> Self {
                self
            }
            #[inline]
            fn modulus(self) -> $t {
                self.abs()
            }
            #[inline]
            fn from_real(r: $t) -> Self {
                r
            }
            #[inline]
            fn re(self) -> $t {
                self
            }
            #[inline]
            fn im(self) -> $t {
                0.0
            }
            #[inline]
            fn finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

real_field!(f32);
real_field!(f64);

impl<R: Real> Field for Complex<R> {
    type Real = R;
    #[inline]
    fn conj(self) -> Self {
        Complex::conj(&self)
    }
    #[inline]
    fn modulus(self) -> R {
        self.norm()
    }
    #[inline]
    fn from_real(r: R) -> Self {
        Complex::new(r, R::zero())
    }
    #[inline]
    fn re(self) -> R {
        self.re
    }
    #[inline]
    fn im(self) -> R {
        self.im
    }
    #[inline]
    fn finite(self) -> bool {
        Float::is_finite(self.re) && Float::is_finite(self.im)
    }
}

/// Hermitian inner product `sum conj(a_i) * b_i`, accumulated left to right.
pub fn dot<T: Field>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s += x.conj() * *y;
    }
    s
}

pub fn norm2<T: Field>(a: &[T]) -> T::Real {
    let mut s = T::Real::zero();
    for x in a {
        let m = x.modulus();
        s += m * m;
    }
    s.sqrt()
}

pub fn norm_inf<T: Field>(a: &[T]) -> T::Real {
    a.iter().fold(T::Real::zero(), |m, x| m.max(x.modulus()))
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Field>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// Relative difference in the infinity norm, `|a - b|_inf / max(|b|_inf, tiny)`.
pub fn rel_diff_inf<T: Field>(a: &[T], b: &[T]) -> T::Real {
    let mut d = T::Real::zero();
    for (x, y) in a.iter().zip(b) {
        d = d.max((*x - *y).modulus());
    }
    d / norm_inf(b).max(T::Real::min_positive_value())
}
