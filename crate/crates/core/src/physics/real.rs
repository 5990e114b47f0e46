//! Scalar abstraction shared by the plain `f64` propagation path and the
//! forward-mode dual numbers used for the twin's analytic Jacobian.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub};

/// Minimal real-number interface needed by the propagation chain.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + MulAssign
{
    fn constant(v: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;

    fn scale(self, k: f64) -> Self {
        self * Self::constant(k)
    }

    /// Decibel to linear ratio.
    fn db_to_lin(self) -> Self {
        self.scale(std::f64::consts::LN_10 / 10.0).exp()
    }

    /// Linear ratio to decibel.
    fn lin_to_db(self) -> Self {
        self.ln().scale(10.0 / std::f64::consts::LN_10)
    }
}

impl Real for f64 {
    #[inline]
    fn constant(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
}

/// Forward-mode dual number carrying `N` directional derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub re: f64,
    pub eps: [f64; N],
}

impl<const N: usize> Dual<N> {
    /// The `index`-th independent variable with value `re`.
    pub fn variable(re: f64, index: usize) -> Self {
        let mut eps = [0.0; N];
        eps[index] = 1.0;
        Self { re, eps }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        self.re += rhs.re;
        for (a, b) in self.eps.iter_mut().zip(rhs.eps) {
            *a += b;
        }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self.re -= rhs.re;
        for (a, b) in self.eps.iter_mut().zip(rhs.eps) {
            *a -= b;
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut eps = [0.0; N];
        for (k, e) in eps.iter_mut().enumerate() {
            *e = self.eps[k] * rhs.re + self.re * rhs.eps[k];
        }
        Self { re: self.re * rhs.re, eps }
    }
}

impl<const N: usize> MulAssign for Dual<N> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.re;
        let re = self.re * inv;
        let mut eps = [0.0; N];
        for (k, e) in eps.iter_mut().enumerate() {
            *e = (self.eps[k] - re * rhs.eps[k]) * inv;
        }
        Self { re, eps }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            re: -self.re,
            eps: self.eps.map(|e| -e),
        }
    }
}

impl<const N: usize> Real for Dual<N> {
    #[inline]
    fn constant(v: f64) -> Self {
        Self { re: v, eps: [0.0; N] }
    }
    #[inline]
    fn value(self) -> f64 {
        self.re
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        Self {
            re: e,
            eps: self.eps.map(|d| d * e),
        }
    }
    #[inline]
    fn ln(self) -> Self {
        let inv = 1.0 / self.re;
        Self {
            re: self.re.ln(),
            eps: self.eps.map(|d| d * inv),
        }
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        Self {
            re: self.re * k,
            eps: self.eps.map(|d| d * k),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_chain_rule_matches_closed_form() {
        // d/dx [ ln(x^2 + 1) / exp(x) ] at x = 0.7
        let x = Dual::<1>::variable(0.7, 0);
        let y = (x * x + Dual::constant(1.0)).ln() / x.exp();
        let xv: f64 = 0.7;
        let expected = (2.0 * xv / (xv * xv + 1.0) - (xv * xv + 1.0).ln()) / xv.exp();
        assert!((y.eps[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn db_round_trip() {
        let v: f64 = 13.7;
        assert!((v.db_to_lin().lin_to_db() - v).abs() < 1e-12);
    }
}
