use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Scalar arithmetic shared by `f64`, forward duals and tape variables.
///
/// Every constitutive and network routine that needs derivatives is written
/// once against this trait and instantiated with whichever number type the
/// caller needs. Kinks (`abs`, `max_c`) use subgradient 0 at the kink.
pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    /// A constant (zero derivative) of this type.
    fn cst(v: f64) -> Self;
    /// Primal value.
    fn value(&self) -> f64;

    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn powf(self, p: f64) -> Self;
    /// `max(self, c)`; derivative 1 strictly above `c`, else 0.
    fn max_c(self, c: f64) -> Self;
    /// Absolute value with subgradient 0 at the origin.
    fn abs(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
    fn one() -> Self {
        Self::cst(1.0)
    }
    fn powi2(self) -> Self {
        self * self
    }
    fn recip(self) -> Self {
        Self::one() / self
    }
    fn sigmoid(self) -> Self {
        // 0.5 (1 + tanh(x/2)) is overflow free for large |x|.
        ((self * 0.5).tanh() + 1.0) * 0.5
    }
    fn is_finite(&self) -> bool {
        self.value().is_finite()
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    #[inline]
    fn max_c(self, c: f64) -> Self {
        if self > c {
            self
        } else {
            c
        }
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
}

/// Derivative of `max(x, c)` with respect to `x`.
#[inline]
pub(crate) fn max_c_slope(x: f64, c: f64) -> f64 {
    if x > c {
        1.0
    } else {
        0.0
    }
}

/// Derivative of `|x|`, 0 at the kink.
#[inline]
pub(crate) fn abs_slope(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
