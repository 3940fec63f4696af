use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use super::real::{abs_slope, max_c_slope, Real};

/// Forward-mode dual number with `N` tangent directions over any [`Real`].
///
/// Nesting (`Dual<Dual<f64, N>, N>`) yields second derivatives; nesting over
/// a tape variable gives forward-over-reverse products.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T: Real, const N: usize> {
    pub re: T,
    pub eps: [T; N],
}

/// Second-order spatial jet: value, gradient and Hessian in `N` directions.
pub type HyperDual<T, const N: usize> = Dual<Dual<T, N>, N>;

impl<T: Real, const N: usize> Dual<T, N> {
    #[inline]
    pub fn constant(re: T) -> Self {
        Dual {
            re,
            eps: [T::zero(); N],
        }
    }

    /// A variable seeded along direction `dir`.
    #[inline]
    pub fn variable(re: T, dir: usize) -> Self {
        let mut eps = [T::zero(); N];
        eps[dir] = T::one();
        Dual { re, eps }
    }

    /// A value moving along an arbitrary tangent.
    #[inline]
    pub fn with_tangent(re: T, eps: [T; N]) -> Self {
        Dual { re, eps }
    }

    /// Apply a scalar function given its value and slope at `re`.
    #[inline]
    fn chain(self, value: T, slope: T) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = *e * slope;
        }
        Dual { re: value, eps }
    }
}

impl<T: Real, const N: usize> Add for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut eps = self.eps;
        for (e, oe) in eps.iter_mut().zip(o.eps.iter()) {
            *e = *e + *oe;
        }
        Dual {
            re: self.re + o.re,
            eps,
        }
    }
}

impl<T: Real, const N: usize> Sub for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut eps = self.eps;
        for (e, oe) in eps.iter_mut().zip(o.eps.iter()) {
            *e = *e - *oe;
        }
        Dual {
            re: self.re - o.re,
            eps,
        }
    }
}

impl<T: Real, const N: usize> Mul for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut eps = [T::zero(); N];
        for i in 0..N {
            eps[i] = self.eps[i] * o.re + self.re * o.eps[i];
        }
        Dual {
            re: self.re * o.re,
            eps,
        }
    }
}

impl<T: Real, const N: usize> Div for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = o.re.recip();
        let q = self.re * inv;
        let mut eps = [T::zero(); N];
        for i in 0..N {
            eps[i] = (self.eps[i] - q * o.eps[i]) * inv;
        }
        Dual { re: q, eps }
    }
}

impl<T: Real, const N: usize> Neg for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = -*e;
        }
        Dual { re: -self.re, eps }
    }
}

impl<T: Real, const N: usize> Add<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn add(self, c: f64) -> Self {
        Dual {
            re: self.re + c,
            eps: self.eps,
        }
    }
}

impl<T: Real, const N: usize> Sub<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn sub(self, c: f64) -> Self {
        Dual {
            re: self.re - c,
            eps: self.eps,
        }
    }
}

impl<T: Real, const N: usize> Mul<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn mul(self, c: f64) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = *e * c;
        }
        Dual {
            re: self.re * c,
            eps,
        }
    }
}

impl<T: Real, const N: usize> Div<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn div(self, c: f64) -> Self {
        self * (1.0 / c)
    }
}

impl<T: Real, const N: usize> AddAssign for Dual<T, N> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real, const N: usize> SubAssign for Dual<T, N> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real, const N: usize> MulAssign for Dual<T, N> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<T: Real, const N: usize> Real for Dual<T, N> {
    #[inline]
    fn cst(v: f64) -> Self {
        Dual::constant(T::cst(v))
    }
    #[inline]
    fn value(&self) -> f64 {
        self.re.value()
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, -(t * t) + 1.0)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), self.re.recip())
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, s.recip() * 0.5)
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn powf(self, p: f64) -> Self {
        self.chain(self.re.powf(p), self.re.powf(p - 1.0) * p)
    }
    fn max_c(self, c: f64) -> Self {
        let slope = max_c_slope(self.re.value(), c);
        if slope > 0.0 {
            self
        } else {
            Dual::constant(T::cst(c))
        }
    }
    fn abs(self) -> Self {
        let s = abs_slope(self.re.value());
        self.chain(self.re.abs(), T::cst(s))
    }
}
