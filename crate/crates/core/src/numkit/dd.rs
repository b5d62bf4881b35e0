//! Double-double arithmetic (~106-bit significand), the kernel's widest
//! precision. Used to evaluate central differences whose roundoff must stay
//! far below the gradients being verified.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Real;

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Clone, Copy, Default, PartialEq)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

const LN2: DoubleDouble = DoubleDouble { hi: std::f64::consts::LN_2, lo: 2.319_046_813_846_299_6e-17 };

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleDouble {
    pub const fn new(hi: f64, lo: f64) -> Self {
        Self { hi, lo }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        if !hi.is_finite() {
            return Self { hi, lo: 0.0 };
        }
        let (h, l) = quick_two_sum(hi, lo);
        Self { hi: h, lo: l }
    }

    fn scale_pow2(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Self { hi: self.hi * f, lo: self.lo * f }
    }

    fn recip(self) -> Self {
        Self::from(1.0) / self
    }
}

impl From<f64> for DoubleDouble {
    fn from(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }
}

impl fmt::Debug for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "dd({:e} + {:e})", self.hi, self.lo)
    }
}

impl fmt::Display for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&(self.hi + self.lo), f)
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            o => Some(o),
        }
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        Self { hi: -self.hi, lo: -self.lo }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let (s, e) = two_sum(self.hi, o.hi);
        if !s.is_finite() {
            return Self::from(s);
        }
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Self::renorm(s, e + f)
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let (p, e) = two_prod(self.hi, o.hi);
        if !p.is_finite() {
            return Self::from(p);
        }
        Self::renorm(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q1 = self.hi / o.hi;
        if !q1.is_finite() {
            return Self::from(q1);
        }
        let r = self - o * Self::from(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Self::from(q2);
        let q3 = r.hi / o.hi;
        let (q1, q2) = quick_two_sum(q1, q2);
        Self { hi: q1, lo: q2 } + Self::from(q3)
    }
}

impl Sum for DoubleDouble {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

impl Real for DoubleDouble {
    const PRECISION: &'static str = "double-double";

    fn from_f64c(v: f64) -> Self {
        Self::from(v)
    }

    fn to_f64c(self) -> f64 {
        self.hi + self.lo
    }

    fn is_finite(self) -> bool {
        self.hi.is_finite()
    }

    /// Relative error about 1e-29; the ten squarings amplify rounding.
    fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Self::from(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Self::from(0.0);
        }
        if self.hi == 0.0 && self.lo == 0.0 {
            return Self::from(1.0);
        }
        // exp(x) = 2^k * exp(r)^1024 with r = (x - k ln2) / 1024
        let k = (self.hi / std::f64::consts::LN_2).round();
        let r = (self - LN2 * Self::from(k)).scale_pow2(-10);
        let mut term = Self::from(1.0);
        let mut sum = Self::from(1.0);
        for n in 1..=30 {
            term = term * r / Self::from(n as f64);
            sum = sum + term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum.scale_pow2(k as i32)
    }

    fn ln(self) -> Self {
        if self.hi <= 0.0 {
            return Self::from(if self.hi == 0.0 { f64::NEG_INFINITY } else { f64::NAN });
        }
        // Newton on exp(y) = x
        let mut y = Self::from(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Self::from(1.0);
        }
        y
    }

    fn tanh(self) -> Self {
        if self.hi > 40.0 {
            return Self::from(1.0);
        }
        if self.hi < -40.0 {
            return Self::from(-1.0);
        }
        let e = self.exp();
        let inv = e.recip();
        (e - inv) / (e + inv)
    }

    fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Self::from(self.hi.sqrt());
        }
        let x = Self::from(self.hi.sqrt());
        x + (self - x * x) / (Self::from(2.0) * x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type Dd = DoubleDouble;

    fn close(a: Dd, b: Dd, tol: f64) -> bool {
        (a - b).to_f64c().abs() <= tol * b.to_f64c().abs().max(1e-300)
    }

    #[test]
    fn arithmetic_keeps_low_bits() {
        let tiny = Dd::from(1e-20);
        let x = Dd::from(1.0) + tiny;
        assert_eq!((x - Dd::from(1.0)).to_f64c(), 1e-20);
        let third = Dd::from(1.0) / Dd::from(3.0);
        assert!(close(third * Dd::from(3.0), Dd::from(1.0), 1e-31));
    }

    #[test]
    fn exp_and_ln_are_inverse() {
        for v in [-30.0, -2.5, -1e-3, 0.0, 1e-7, 0.7, 3.0, 50.0] {
            let x = Dd::from(v);
            // exp carries ~1e-29 relative error, which ln turns into absolute error
            assert!((x.exp().ln() - x).to_f64c().abs() <= 1e-28 * v.abs().max(1.0), "{v}");
            assert!(((x.exp().to_f64c() - v.exp()) / v.exp()).abs() < 1e-15);
        }
        // e to within the ~1e-29 relative accuracy of exp
        let e = Dd::from(1.0).exp();
        assert_eq!(e.hi(), std::f64::consts::E);
        assert!((e.lo() - 1.445_646_891_729_250_2e-16).abs() < 1e-28);
    }

    #[test]
    fn tanh_and_sqrt_agree_with_f64() {
        for v in [-5.0, -0.3, 1e-6, 0.5, 2.0, 45.0] {
            assert!((Dd::from(v).tanh().to_f64c() - v.tanh()).abs() < 1e-15);
        }
        let two = Dd::from(2.0).sqrt();
        assert!(close(two * two, Dd::from(2.0), 1e-31));
    }

    #[test]
    fn ordering_uses_both_words() {
        let a = Dd::from(1.0);
        let b = a + Dd::from(1e-25);
        assert!(b > a);
        assert_eq!(a.max(b), b);
    }
}
