//! Mergeable moment accumulators and distribution-free tests.

use serde::{Deserialize, Serialize};

/// Running mean and variance with an exact pairwise merge.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Welford {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn from_value(x: f64) -> Self {
        let mut w = Self::default();
        w.push(x);
        w
    }

    pub fn merge(self, other: Self) -> Self {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let mean = self.mean + d * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + d * d * self.n as f64 * other.n as f64 / n as f64;
        Self { n, mean, m2 }
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn sem(&self) -> f64 {
        if self.n == 0 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Accumulator for paired samples `(x, y)` with their covariance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Paired {
    pub x: Welford,
    pub y: Welford,
    pub cxy: f64,
}

impl Paired {
    pub fn from_pair(x: f64, y: f64) -> Self {
        Self {
            x: Welford::from_value(x),
            y: Welford::from_value(y),
            cxy: 0.0,
        }
    }

    pub fn merge(self, o: Self) -> Self {
        let n1 = self.x.n as f64;
        let n2 = o.x.n as f64;
        if self.x.n == 0 {
            return o;
        }
        if o.x.n == 0 {
            return self;
        }
        let dx = o.x.mean - self.x.mean;
        let dy = o.y.mean - self.y.mean;
        Self {
            x: self.x.merge(o.x),
            y: self.y.merge(o.y),
            cxy: self.cxy + o.cxy + dx * dy * n1 * n2 / (n1 + n2),
        }
    }

    /// Standard error of `mean(x) - mean(y)`.
    pub fn diff_sem(&self) -> f64 {
        let n = self.x.n as f64;
        if n < 2.0 {
            return f64::INFINITY;
        }
        let cov = self.cxy / (n - 1.0);
        ((self.x.variance() + self.y.variance() - 2.0 * cov).max(0.0) / n).sqrt()
    }
}

/// `sup |F_n - F|` for a continuous reference CDF.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max(((i + 1) as f64 / n - f).abs()).max((f - i as f64 / n).abs());
    }
    d
}

/// Two-sample Kolmogorov–Smirnov distance, ties handled exactly.
pub fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => break,
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Half-width of the Dvoretzky–Kiefer–Wolfowitz band at level `1 - alpha`.
pub fn dkw_epsilon(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

/// Least-squares line `y = a + b x` with its `R²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LineFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    LineFit {
        intercept: my - slope * mx,
        slope,
        r2,
    }
}

/// Pearson statistic and degrees of freedom over cells with expected count ≥ `min_expected`.
pub fn chi_square(observed: &[u64], expected: &[f64], min_expected: f64) -> (f64, usize) {
    let mut stat = 0.0;
    let mut cells = 0usize;
    let (mut o_rest, mut e_rest) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        if e >= min_expected {
            stat += (o as f64 - e).powi(2) / e;
            cells += 1;
        } else {
            o_rest += o as f64;
            e_rest += e;
        }
    }
    if e_rest > 0.0 {
        stat += (o_rest - e_rest).powi(2) / e_rest;
        cells += 1;
    }
    (stat, cells.saturating_sub(1))
}

/// Upper `alpha` quantile of χ² with `df` degrees of freedom (Wilson–Hilferty).
pub fn chi_square_quantile(df: usize, alpha: f64) -> f64 {
    let k = df.max(1) as f64;
    let z = crate::special::normal_quantile(1.0 - alpha);
    let t = 1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt();
    k * t * t * t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_merge_matches_direct() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut all = Welford::default();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = Welford::default();
        let mut b = Welford::default();
        xs[..40].iter().for_each(|&x| a.push(x));
        xs[40..].iter().for_each(|&x| b.push(x));
        let m = a.merge(b);
        assert!((m.mean - all.mean).abs() < 1e-14);
        assert!((m.variance() - all.variance()).abs() < 1e-14);
    }

    #[test]
    fn ks_of_uniform_grid() {
        let mut xs: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let d = ks_statistic(&mut xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.005).abs() < 1e-12);
        let mut a = vec![1.0, 2.0, 3.0];
        let mut b = vec![1.0, 2.0, 3.0];
        assert_eq!(ks_two_sample(&mut a, &mut b), 0.0);
    }

    #[test]
    fn line_fit_exact() {
        let xs = [1.0, 2.0, 3.0];
        let ys = [3.0, 5.0, 7.0];
        let f = linear_fit(&xs, &ys);
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_quantile_reasonable() {
        assert!((chi_square_quantile(10, 0.05) - 18.307).abs() < 0.1);
    }
}
