//! Harmonic functions of the perimeter walk, evaluated in log space.

use crate::special::{ln_central_binomial, ln_central_ratio};
use serde::{Deserialize, Serialize};

/// Which harmonic function drives a Doob transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Harmonic {
    /// `h↓(ℓ) = 2^{-2ℓ} C(2ℓ, ℓ)`; walk conditioned to die by a jump to 0.
    Down,
    /// `h↑(ℓ) = 2ℓ h↓(ℓ)`; walk conditioned to stay positive forever.
    Up,
    /// `h↓_p`; walk conditioned to die by a jump to `-p`.
    DownP(u64),
}

impl Harmonic {
    /// Absorbing point reached by the terminal jump, if any.
    pub fn absorbing(self) -> Option<i64> {
        match self {
            Harmonic::Down => Some(0),
            Harmonic::DownP(p) => Some(-(p as i64)),
            Harmonic::Up => None,
        }
    }

    /// Natural logarithm of `h(ℓ)`; `-∞` where `h` vanishes.
    #[inline]
    pub fn ln(self, l: i64) -> f64 {
        match self {
            Harmonic::Down => ln_h_down(l),
            Harmonic::Up => ln_h_up(l),
            Harmonic::DownP(p) => ln_h_down_p(p, l),
        }
    }

    /// `h(ℓ)` as a plain float.
    #[inline]
    pub fn eval(self, l: i64) -> f64 {
        self.ln(l).exp()
    }

    /// `ln h` extended to real arguments `x > 0` (used for tail integrals).
    pub fn ln_real(self, x: f64) -> f64 {
        match self {
            Harmonic::Down => ln_central_ratio(x),
            Harmonic::Up => (2.0 * x).ln() + ln_central_ratio(x),
            Harmonic::DownP(0) => ln_central_ratio(x),
            Harmonic::DownP(p) => {
                let pf = p as f64;
                ln_central_ratio(x) + ln_central_binomial(p) + (x / (x + pf)).ln()
            }
        }
    }

    /// `h(m+k)/h(m)`.
    #[inline]
    pub fn ratio(self, m: i64, k: i64) -> f64 {
        (self.ln(m + k) - self.ln(m)).exp()
    }
}

/// `ln h↓(ℓ)`.
#[inline]
pub fn ln_h_down(l: i64) -> f64 {
    if l < 0 {
        f64::NEG_INFINITY
    } else {
        ln_central_binomial(l as u64)
    }
}

/// `ln h↑(ℓ)`.
#[inline]
pub fn ln_h_up(l: i64) -> f64 {
    if l <= 0 {
        f64::NEG_INFINITY
    } else {
        (2.0 * l as f64).ln() + ln_central_binomial(l as u64)
    }
}

/// `ln h↓_p(ℓ)` with the convention `h↓_p(-p) = 1`.
#[inline]
pub fn ln_h_down_p(p: u64, l: i64) -> f64 {
    if p == 0 {
        return ln_h_down(l);
    }
    if l == -(p as i64) {
        return 0.0;
    }
    if l <= 0 {
        return f64::NEG_INFINITY;
    }
    let lf = l as f64;
    ln_central_binomial(l as u64) + ln_central_binomial(p) + (lf / (lf + p as f64)).ln()
}

/// Plain-float `h↓`.
pub fn h_down(l: i64) -> f64 {
    ln_h_down(l).exp()
}

/// Plain-float `h↑`.
pub fn h_up(l: i64) -> f64 {
    ln_h_up(l).exp()
}

/// Plain-float `h↓_p`.
pub fn h_down_p(p: u64, l: i64) -> f64 {
    ln_h_down_p(p, l).exp()
}

/// Cached log-values of a harmonic function on `[-bound, bound]`.
#[derive(Clone, Debug)]
pub struct HarmonicWeights {
    pub kind: Harmonic,
    bound: i64,
    cache: Vec<f64>,
}

impl HarmonicWeights {
    pub fn new(kind: Harmonic, bound: u64) -> Self {
        let bound = bound as i64;
        let cache = (-bound..=bound).map(|l| kind.ln(l)).collect();
        Self { kind, bound, cache }
    }

    #[inline]
    pub fn ln(&self, l: i64) -> f64 {
        if l.abs() <= self.bound {
            self.cache[(l + self.bound) as usize]
        } else {
            self.kind.ln(l)
        }
    }

    pub fn eval(&self, l: i64) -> f64 {
        self.ln(l).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        assert_eq!(h_down(0), 1.0);
        assert_eq!(h_down(-3), 0.0);
        assert!((h_down(2) - 0.375).abs() < 1e-16);
        assert!((h_down_p(1, 1) - 0.125).abs() < 1e-16);
        assert_eq!(h_down_p(3, -3), 1.0);
        assert!((h_up(1) - 1.0).abs() < 1e-16);
        assert_eq!(Harmonic::DownP(0).eval(4), h_down(4));
    }

    #[test]
    fn large_arguments_are_finite() {
        let l = 1_000_000_000i64;
        let v = ln_h_down(l);
        let approx = -0.5 * (std::f64::consts::PI * l as f64).ln();
        assert!((v - approx).abs() < 1e-9);
    }

    #[test]
    fn cached_weights_agree() {
        let w = HarmonicWeights::new(Harmonic::DownP(4), 100);
        for l in -100..=100 {
            let a = w.ln(l);
            let b = Harmonic::DownP(4).ln(l);
            assert!(a == b || (a - b).abs() < 1e-15);
        }
        assert_eq!(w.eval(-4), 1.0);
    }
}
