//! Special functions and summation helpers shared by the numeric tables.

use std::sync::OnceLock;

pub const LN_PI: f64 = 1.144_729_885_849_400_2;
const SERIES_START: f64 = 30.0;
const SMALL_TABLE: usize = 4096;

fn ln_ratio_series(x: f64) -> f64 {
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let poly = inv
        * (-1.0 / 8.0 + inv2 * (1.0 / 192.0 + inv2 * (-1.0 / 640.0 + inv2 * (17.0 / 14336.0))));
    -0.5 * LN_PI - 0.5 * x.ln() + poly
}

/// `ln(Γ(x+1/2) / (√π Γ(x+1)))` for real `x > -1/2`.
pub fn ln_central_ratio(x: f64) -> f64 {
    if x >= SERIES_START {
        return ln_ratio_series(x);
    }
    let mut acc = 0.0;
    let mut y = x;
    while y < SERIES_START {
        acc += (0.5 / (y + 0.5)).ln_1p();
        y += 1.0;
    }
    ln_ratio_series(y) + acc
}

fn small_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(SMALL_TABLE);
        let mut acc = 0.0f64;
        t.push(0.0);
        for j in 1..SMALL_TABLE {
            if (j as f64) < SERIES_START {
                acc += ((2 * j - 1) as f64 / (2 * j) as f64).ln();
                t.push(acc);
            } else {
                t.push(ln_ratio_series(j as f64));
            }
        }
        t
    })
}

/// `ln(C(2j, j) / 4^j)` for integer `j ≥ 0`.
#[inline]
pub fn ln_central_binomial(j: u64) -> f64 {
    if (j as usize) < SMALL_TABLE {
        small_table()[j as usize]
    } else {
        ln_ratio_series(j as f64)
    }
}

/// Shifted Hurwitz zeta `Σ_{i≥0} (x0 + i)^{-s}` for `s > 1`, `x0 > 0`.
pub fn hurwitz_tail(s: f64, x0: f64) -> f64 {
    let mut direct = 0.0;
    let mut x = x0;
    let mut terms = Vec::new();
    while x < 32.0 {
        terms.push(x.powf(-s));
        x += 1.0;
    }
    for t in terms.iter().rev() {
        direct += t;
    }
    let xs = x.powf(-s);
    let em = x * xs / (s - 1.0) + 0.5 * xs + s * xs / (12.0 * x)
        - s * (s + 1.0) * (s + 2.0) * xs / (720.0 * x * x * x)
        + s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * xs / (30240.0 * x.powi(5));
    em + direct
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = 0.5 * (1.0 - z);
        weights[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (nodes, weights)
}

fn gl_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(24))
}

/// `Σ_{k≥n} f(k)` for a smooth, integrable `f` decaying at least like `x^{-1-δ}`.
///
/// Euler–Maclaurin with the integral evaluated after `x = n/t²`.
pub fn smooth_tail_sum<F: Fn(f64) -> f64>(f: F, n: f64) -> f64 {
    let (nodes, weights) = gl_rule();
    let panels = 8;
    let mut integral = 0.0;
    for p in 0..panels {
        let a = p as f64 / panels as f64;
        let w = 1.0 / panels as f64;
        for (t0, wt) in nodes.iter().zip(weights) {
            let t = a + w * t0;
            if t <= 0.0 {
                continue;
            }
            let x = n / (t * t);
            integral += w * wt * f(x) * 2.0 * n / (t * t * t);
        }
    }
    let h = (1e-3 * n).max(1e-3);
    let deriv = (f(n + h) - f(n - h)) / (2.0 * h);
    integral + 0.5 * f(n) - deriv / 12.0
}

/// Standard normal quantile (Acklam rational approximation).
pub fn normal_quantile(p: f64) -> f64 {
    let a = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383_577_518_672_69e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    let b = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    let c = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    let d = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    let pl = 0.02425;
    if p < pl {
        let q = (-2.0 * p.ln()).sqrt();
        (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    } else if p <= 1.0 - pl {
        let q = p - 0.5;
        let r = q * q;
        (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln_gamma_ref(x: f64) -> f64 {
        // Lanczos (g=7, n=9) reference, independent of the series above.
        let g = 7.0;
        let coef = [
            0.999_999_999_999_809_9,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_1,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        let x = x - 1.0;
        let mut a = coef[0];
        let t = x + g + 0.5;
        for (i, c) in coef.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }

    #[test]
    fn central_ratio_matches_lanczos() {
        for &x in &[0.0, 0.5, 1.0, 2.0, 7.5, 29.0, 30.0, 31.5, 100.0] {
            let reference = ln_gamma_ref(x + 0.5) - ln_gamma_ref(x + 1.0) - 0.5 * LN_PI;
            assert!((ln_central_ratio(x) - reference).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn central_binomial_small_values() {
        assert!((ln_central_binomial(2).exp() - 0.375).abs() < 1e-16);
        assert!((ln_central_binomial(1).exp() - 0.5).abs() < 1e-16);
        assert_eq!(ln_central_binomial(0), 0.0);
        let j = 5000u64;
        assert!((ln_central_binomial(j) - ln_central_ratio(j as f64)).abs() < 1e-13);
    }

    #[test]
    fn hurwitz_matches_zeta_two() {
        let z2 = std::f64::consts::PI.powi(2) / 6.0;
        assert!((hurwitz_tail(2.0, 1.0) - z2).abs() < 1e-13);
        let partial: f64 = (1..100).map(|j| (j as f64).powi(-2)).sum();
        assert!((hurwitz_tail(2.0, 100.0) - (z2 - partial)).abs() < 1e-15);
    }

    #[test]
    fn tail_sum_power_law() {
        let n = 500.0;
        let exact = hurwitz_tail(2.5, 500.0);
        let got = smooth_tail_sum(|x| x.powf(-2.5), n);
        assert!(((got - exact) / exact).abs() < 1e-11);
    }

    #[test]
    fn normal_quantile_values() {
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-8);
        assert!(normal_quantile(0.5).abs() < 1e-12);
    }
}
