//! Step laws of the perimeter walk, weight sequences and model constants.

use crate::harmonic::Harmonic;
use crate::special::{hurwitz_tail, ln_central_binomial, ln_central_ratio, smooth_tail_sum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use thiserror::Error;

/// Default table cutoff of the built-in kernels.
pub const DEFAULT_K_TABLE: u64 = 4096;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("invalid law: {0}")]
    Invalid(String),
    #[error("mass error: total mass {mass} outside tolerance")]
    Mass { mass: f64 },
    #[error("harmonicity defect {defect:e} for {kind:?} at l={l} exceeds {tol:e}")]
    Harmonicity {
        kind: Harmonic,
        l: u64,
        defect: f64,
        tol: f64,
    },
    #[error("inversion error: {0}")]
    Inversion(String),
    #[error("solver did not reach tolerance: max residual {residual:e} at l={at}; {detail}")]
    Solve {
        residual: f64,
        at: u64,
        detail: String,
    },
    #[error("tail error: {0}")]
    Tail(String),
    #[error("weight sequence is not critical: {0}")]
    NotCritical(String),
    #[error("checksum mismatch: file says {stored}, content hashes to {computed}")]
    Checksum { stored: String, computed: String },
    #[error("unknown kernel spec {0}")]
    UnknownSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Analytic description of one side of a law beyond the dense table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SideTail {
    None,
    /// `p / (j² - 1/4)`.
    Cauchy { p: f64 },
    /// `coef · (j + shift)^{-exponent}`.
    Power {
        coef: f64,
        exponent: f64,
        shift: f64,
    },
    /// `p / (j² - 1/4) · h↓(j) (2j+1)/(j+1)`.
    CauchyBiased { p: f64 },
}

impl SideTail {
    /// Value at a real argument `x ≥ 1`.
    pub fn pmf(&self, x: f64) -> f64 {
        match *self {
            SideTail::None => 0.0,
            SideTail::Cauchy { p } => p / (x * x - 0.25),
            SideTail::Power {
                coef,
                exponent,
                shift,
            } => coef * (x + shift).powf(-exponent),
            SideTail::CauchyBiased { p } => {
                p / (x * x - 0.25) * ln_central_ratio(x).exp() * (2.0 * x + 1.0) / (x + 1.0)
            }
        }
    }

    /// `Σ_{j≥k} pmf(j)` for `k ≥ 1`.
    pub fn mass_from(&self, k: u64) -> f64 {
        let kf = k as f64;
        match *self {
            SideTail::None => 0.0,
            SideTail::Cauchy { p } => p / (kf - 0.5),
            SideTail::Power {
                coef,
                exponent,
                shift,
            } => coef * hurwitz_tail(exponent, kf + shift),
            SideTail::CauchyBiased { .. } => {
                let mut direct = 0.0;
                for j in (k..k + 16).rev() {
                    direct += self.pmf(j as f64);
                }
                direct + smooth_tail_sum(|x| self.pmf(x), kf + 16.0)
            }
        }
    }

    /// `Σ_{a≤j≤b} pmf(j)`; `b = u64::MAX` means no upper limit.
    pub fn mass_between(&self, a: u64, b: u64) -> f64 {
        if a > b {
            return 0.0;
        }
        if b == u64::MAX {
            return self.mass_from(a);
        }
        match *self {
            SideTail::None => 0.0,
            SideTail::Cauchy { p } => {
                let (af, bf) = (a as f64, b as f64);
                p * (bf - af + 1.0) / ((af - 0.5) * (bf + 0.5))
            }
            _ => {
                if b - a <= 64 {
                    (a..=b).rev().map(|j| self.pmf(j as f64)).sum()
                } else {
                    self.mass_from(a) - self.mass_from(b + 1)
                }
            }
        }
    }

    /// `Σ_{j≥k} j·pmf(j)`, infinite when the first moment diverges.
    pub fn first_moment_from(&self, k: u64) -> f64 {
        match *self {
            SideTail::None => 0.0,
            SideTail::Cauchy { .. } => f64::INFINITY,
            SideTail::Power { exponent, .. } if exponent <= 2.0 => f64::INFINITY,
            _ => {
                let mut direct = 0.0;
                for j in (k..k + 16).rev() {
                    direct += j as f64 * self.pmf(j as f64);
                }
                direct + smooth_tail_sum(|x| x * self.pmf(x), k as f64 + 16.0)
            }
        }
    }

    /// `sup_{j≥k} pmf(j)`.
    pub fn sup_from(&self, k: u64) -> f64 {
        self.pmf(k as f64)
    }

    /// `sup_{j≥k} j²·pmf(j)`.
    pub fn sup_sq_from(&self, k: u64) -> f64 {
        let kf = k as f64;
        match *self {
            SideTail::None => 0.0,
            SideTail::Cauchy { p } => p * kf * kf / (kf * kf - 0.25),
            SideTail::Power {
                coef,
                exponent,
                shift,
            } => {
                if exponent < 2.0 {
                    f64::INFINITY
                } else if exponent == 2.0 {
                    if shift >= 0.0 {
                        coef
                    } else {
                        coef * kf * kf / ((kf + shift) * (kf + shift))
                    }
                } else {
                    let peak = (2.0 * shift / (exponent - 2.0)).max(kf);
                    coef * peak * peak * (peak + shift).powf(-exponent)
                }
            }
            SideTail::CauchyBiased { p } => {
                kf * kf * p / (kf * kf - 0.25) * ln_central_ratio(kf).exp() * (2.0 * kf + 1.0)
                    / (kf + 1.0)
            }
        }
    }

    /// Smallest `j ∈ [a, b]` with `mass_between(a, j) > t`.
    pub fn invert(&self, a: u64, b: u64, t: f64) -> u64 {
        match *self {
            SideTail::None => a,
            SideTail::Cauchy { p } => {
                let r = self.mass_from(a) - t;
                let mut j = if r <= 0.0 {
                    b
                } else {
                    let guess = (p / r - 0.5).floor() + 1.0;
                    if guess >= b as f64 {
                        b
                    } else {
                        (guess.max(a as f64)) as u64
                    }
                };
                while j > a && self.mass_between(a, j - 1) > t {
                    j -= 1;
                }
                while j < b && self.mass_between(a, j) <= t {
                    j += 1;
                }
                j
            }
            _ => {
                let mut lo = a;
                let mut hi = if b == u64::MAX { a.saturating_mul(2).max(a + 1) } else { b };
                if b == u64::MAX {
                    while self.mass_between(a, hi) <= t && hi < u64::MAX / 4 {
                        hi = hi.saturating_mul(2);
                    }
                }
                while lo < hi {
                    let mid = lo + (hi - lo) / 2;
                    if self.mass_between(a, mid) > t {
                        hi = mid;
                    } else {
                        lo = mid + 1;
                    }
                }
                lo
            }
        }
    }

    fn validate(&self) -> Result<(), KernelError> {
        let ok = match *self {
            SideTail::None => true,
            SideTail::Cauchy { p } | SideTail::CauchyBiased { p } => p.is_finite() && p >= 0.0,
            SideTail::Power {
                coef,
                exponent,
                shift,
            } => coef.is_finite() && coef >= 0.0 && exponent > 1.0 && shift > -1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(KernelError::Invalid(format!("bad tail parameters {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Neg,
    Pos,
}

/// A probability law on ℤ: dense on `[-K, K]`, analytic tails beyond.
#[derive(Clone, Debug)]
pub struct DisplacementLaw {
    k_table: u64,
    dense: Vec<f64>,
    neg_tail: SideTail,
    pos_tail: SideTail,
    pos_cum: Vec<f64>,
    neg_cum: Vec<f64>,
    pos_sq_suffix: Vec<f64>,
    neg_sparse: Vec<Vec<f64>>,
    /// Type exponent `a`.
    pub a: f64,
    /// Estimate of `p_q`, the constant in `ν(-k) ~ p_q k^{-2}`.
    pub tail_constant: f64,
    checksum: String,
}

impl DisplacementLaw {
    /// Assemble a law from its dense table `ν(-K..=K)` and tails.
    pub fn new(
        k_table: u64,
        dense: Vec<f64>,
        neg_tail: SideTail,
        pos_tail: SideTail,
        a: f64,
    ) -> Result<Self, KernelError> {
        let kk = k_table as usize;
        if k_table == 0 || dense.len() != 2 * kk + 1 {
            return Err(KernelError::Invalid(format!(
                "dense table has {} entries, expected {}",
                dense.len(),
                2 * kk + 1
            )));
        }
        if let Some(bad) = dense.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(KernelError::Invalid(format!("negative or non-finite entry {bad}")));
        }
        neg_tail.validate()?;
        pos_tail.validate()?;
        let mut pos_cum = vec![0.0; kk + 2];
        pos_cum[kk + 1] = pos_tail.mass_from(k_table + 1);
        for k in (0..=kk).rev() {
            pos_cum[k] = pos_cum[k + 1] + dense[kk + k];
        }
        let mut neg_cum = vec![0.0; kk + 2];
        neg_cum[kk + 1] = neg_tail.mass_from(k_table + 1);
        for k in (1..=kk).rev() {
            neg_cum[k] = neg_cum[k + 1] + dense[kk - k];
        }
        neg_cum[0] = neg_cum[1];
        let mut pos_sq_suffix = vec![0.0; kk + 2];
        pos_sq_suffix[kk + 1] = pos_tail.sup_sq_from(k_table + 1);
        for k in (1..=kk).rev() {
            let kf = k as f64;
            pos_sq_suffix[k] = pos_sq_suffix[k + 1].max(kf * kf * dense[kk + k]);
        }
        let base: Vec<f64> = (0..=kk).map(|j| if j == 0 { 0.0 } else { dense[kk - j] }).collect();
        let mut neg_sparse = vec![base];
        let mut width = 1usize;
        while 2 * width <= kk + 1 {
            let prev = neg_sparse.last().expect("non-empty");
            let next: Vec<f64> = (0..=kk + 1 - 2 * width)
                .map(|i| prev[i].max(prev[i + width]))
                .collect();
            neg_sparse.push(next);
            width *= 2;
        }
        let tail_constant = match neg_tail {
            SideTail::Cauchy { p } => p,
            SideTail::Power {
                coef, exponent, ..
            } if exponent == 2.0 => coef,
            _ => {
                let lo = (k_table / 2).max(1);
                let n = (k_table - lo + 1) as f64;
                (lo..=k_table)
                    .map(|k| (k as f64).powi(2) * dense[kk - k as usize])
                    .sum::<f64>()
                    / n
            }
        };
        let checksum = content_checksum(k_table, &dense, &neg_tail, &pos_tail);
        let law = Self {
            k_table,
            dense,
            neg_tail,
            pos_tail,
            pos_cum,
            neg_cum,
            pos_sq_suffix,
            neg_sparse,
            a,
            tail_constant,
            checksum,
        };
        let mass = law.total_mass();
        if !(mass <= 1.0 + 1e-9) {
            return Err(KernelError::Mass { mass });
        }
        Ok(law)
    }

    /// Closed-form type-2 law `ν(k) = p/(k²-1/4)`, `ν(0) = q1`, with `p = (1-q1)/4`.
    pub fn cauchy_closed_form(q1: f64, k_table: u64) -> Result<Self, KernelError> {
        if !(0.0..1.0).contains(&q1) {
            return Err(KernelError::Invalid(format!("q1={q1} outside [0,1)")));
        }
        let p = (1.0 - q1) / 4.0;
        let kk = k_table as i64;
        let dense = (-kk..=kk)
            .map(|k| {
                if k == 0 {
                    q1
                } else {
                    let kf = k as f64;
                    p / (kf * kf - 0.25)
                }
            })
            .collect();
        Self::new(
            k_table,
            dense,
            SideTail::Cauchy { p },
            SideTail::Cauchy { p },
            2.0,
        )
    }

    /// The quadrangulation law: `q₂ = 1/12`, `c = 8`.
    pub fn quadrangulation(k_table: u64) -> Result<Self, KernelError> {
        let kk = k_table as usize;
        let mut dense = vec![0.0; 2 * kk + 1];
        dense[kk + 1] = 2.0 / 3.0;
        // ν(-j) = (2/3)·(-1)^{j+1}·C(3/2, j+1)
        let mut a_n = 1.0f64;
        for n in 1..=kk + 1 {
            a_n *= (n as f64 - 2.5) / n as f64;
            if n >= 2 {
                let j = n - 1;
                dense[kk - j] = (2.0 / 3.0) * a_n.abs();
            }
        }
        let coef = 1.0 / (2.0 * std::f64::consts::PI.sqrt());
        Self::new(
            k_table,
            dense,
            SideTail::Power {
                coef,
                exponent: 2.5,
                shift: 0.25,
            },
            SideTail::None,
            2.5,
        )
    }

    pub fn k_table(&self) -> u64 {
        self.k_table
    }

    pub fn neg_tail(&self) -> &SideTail {
        &self.neg_tail
    }

    pub fn pos_tail(&self) -> &SideTail {
        &self.pos_tail
    }

    /// Hex SHA-256 of the law's content.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// `ν(0)`, the weight `q₁` in the type-2 normalisation.
    pub fn q1(&self) -> f64 {
        self.pmf(0)
    }

    #[inline]
    pub fn pmf(&self, k: i64) -> f64 {
        let kk = self.k_table as i64;
        if k.abs() <= kk {
            self.dense[(k + kk) as usize]
        } else if k > 0 {
            self.pos_tail.pmf(k as f64)
        } else {
            self.neg_tail.pmf(-k as f64)
        }
    }

    /// `ν([k, ∞))` for `k ≥ 0`.
    pub fn upper(&self, k: u64) -> f64 {
        if k == 0 {
            self.pos_cum[0]
        } else {
            self.side_mass(Side::Pos, k, u64::MAX)
        }
    }

    /// `ν((-∞, -k])` for `k ≥ 1`.
    pub fn lower(&self, k: u64) -> f64 {
        self.side_mass(Side::Neg, k.max(1), u64::MAX)
    }

    pub fn total_mass(&self) -> f64 {
        self.neg_cum[1] + self.pos_cum[0]
    }

    fn side_mass(&self, side: Side, a: u64, b: u64) -> f64 {
        if a > b {
            return 0.0;
        }
        let (cum, tail) = match side {
            Side::Neg => (&self.neg_cum, &self.neg_tail),
            Side::Pos => (&self.pos_cum, &self.pos_tail),
        };
        let kk = self.k_table;
        if a > kk {
            tail.mass_between(a, b)
        } else if b <= kk {
            cum[a as usize] - cum[b as usize + 1]
        } else {
            (cum[a as usize] - cum[kk as usize + 1]) + tail.mass_between(kk + 1, b)
        }
    }

    fn sample_side(&self, side: Side, a: u64, b: u64, t: f64) -> u64 {
        let (cum, tail) = match side {
            Side::Neg => (&self.neg_cum, &self.neg_tail),
            Side::Pos => (&self.pos_cum, &self.pos_tail),
        };
        let kk = self.k_table;
        if a <= kk {
            let top = b.min(kk);
            let target = cum[a as usize] - t;
            if cum[top as usize + 1] < target {
                let mut lo = a as usize + 1;
                let mut hi = top as usize + 1;
                while lo < hi {
                    let mid = (lo + hi) / 2;
                    if cum[mid] < target {
                        hi = mid;
                    } else {
                        lo = mid + 1;
                    }
                }
                return lo as u64 - 1;
            }
            if b <= kk || matches!(tail, SideTail::None) {
                return top;
            }
            let rest = (t - (cum[a as usize] - cum[kk as usize + 1])).max(0.0);
            return tail.invert(kk + 1, b, rest);
        }
        tail.invert(a, b, t)
    }

    /// `ν([lo, hi])`; `hi = i64::MAX` means no upper limit.
    pub fn mass_between(&self, lo: i64, hi: i64) -> f64 {
        if lo > hi {
            return 0.0;
        }
        let mut s = 0.0;
        if lo <= -1 {
            let a = if hi >= -1 { 1 } else { (-hi) as u64 };
            s += self.side_mass(Side::Neg, a, lo.unsigned_abs());
        }
        if lo <= 0 && hi >= 0 {
            s += self.pmf(0);
        }
        if hi >= 1 {
            let a = lo.max(1) as u64;
            let b = if hi == i64::MAX { u64::MAX } else { hi as u64 };
            s += self.side_mass(Side::Pos, a, b);
        }
        s
    }

    /// Inverse-CDF sample of `ν` restricted to `[lo, hi]`, driven by `u ∈ [0, 1)`.
    pub fn sample_between(&self, lo: i64, hi: i64, u: f64) -> i64 {
        let neg = if lo <= -1 {
            let a = if hi >= -1 { 1 } else { (-hi) as u64 };
            Some((a, lo.unsigned_abs(), self.side_mass(Side::Neg, a, lo.unsigned_abs())))
        } else {
            None
        };
        let zero = if lo <= 0 && hi >= 0 { self.pmf(0) } else { 0.0 };
        let pos = if hi >= 1 {
            let a = lo.max(1) as u64;
            let b = if hi == i64::MAX { u64::MAX } else { hi as u64 };
            Some((a, b, self.side_mass(Side::Pos, a, b)))
        } else {
            None
        };
        let total = neg.map_or(0.0, |x| x.2) + zero + pos.map_or(0.0, |x| x.2);
        let mut t = u * total;
        if let Some((a, b, m)) = neg {
            if t < m || (zero == 0.0 && pos.is_none_or(|x| x.2 == 0.0)) {
                return -(self.sample_side(Side::Neg, a, b, (m - t).clamp(0.0, m)) as i64);
            }
            t -= m;
        }
        if zero > 0.0 && (t < zero || pos.is_none_or(|x| x.2 == 0.0)) {
            return 0;
        }
        t -= zero;
        match pos {
            Some((a, b, m)) => self.sample_side(Side::Pos, a, b, t.clamp(0.0, m)) as i64,
            None => 0,
        }
    }

    /// `sup_{j≥k} j² ν(j)`, `k ≥ 1`.
    pub fn pos_sq_sup(&self, k: u64) -> f64 {
        if k <= self.k_table {
            self.pos_sq_suffix[k.max(1) as usize]
        } else {
            self.pos_tail.sup_sq_from(k)
        }
    }

    /// `max_{a≤j≤b} ν(-j)`; `b = u64::MAX` means no upper limit.
    pub fn neg_max(&self, a: u64, b: u64) -> f64 {
        let a = a.max(1);
        if a > b {
            return 0.0;
        }
        let kk = self.k_table;
        let mut best = 0.0f64;
        if a <= kk {
            let hi = b.min(kk) as usize;
            let lo = a as usize;
            let len = hi - lo + 1;
            let level = (usize::BITS - 1 - len.leading_zeros()) as usize;
            let row = &self.neg_sparse[level];
            best = row[lo].max(row[hi + 1 - (1 << level)]);
        }
        if b > kk {
            best = best.max(self.neg_tail.sup_from(a.max(kk + 1)));
        }
        best
    }

    /// `Σ_k ν(k) h(l+k) - h(l)`, with the positive tail summed analytically.
    pub fn harmonic_defect(&self, h: Harmonic, l: u64) -> f64 {
        self.harmonic_defect_by(h, l, |j| h.eval(j))
    }

    /// [`DisplacementLaw::harmonic_defect`] with `h` on the integers supplied by `eval`.
    pub fn harmonic_defect_by(&self, h: Harmonic, l: u64, eval: impl Fn(i64) -> f64) -> f64 {
        let li = l as i64;
        let lowest = match h {
            Harmonic::Down => -li,
            Harmonic::Up => 1 - li,
            Harmonic::DownP(p) => -li - p as i64,
        };
        let kk = self.k_table as i64;
        let mut s = 0.0;
        for k in lowest..=kk {
            let w = self.pmf(k);
            if w > 0.0 {
                s += w * eval(li + k);
            }
        }
        if !matches!(self.pos_tail, SideTail::None) {
            let lf = l as f64;
            s += smooth_tail_sum(
                |x| self.pos_tail.pmf(x) * h.ln_real(lf + x).exp(),
                (kk + 1) as f64,
            );
        }
        s - eval(li)
    }

    /// Harmonicity, mass and tail diagnostics.
    pub fn validate(&self, l_check: u64, tol: f64) -> ValidationReport {
        let mut report = ValidationReport {
            l_check,
            tol,
            max_defect_down: 0.0,
            worst_l_down: 0,
            max_defect_up: 0.0,
            worst_l_up: 0,
            mass_defect: (self.total_mass() - 1.0).abs(),
            passed: false,
        };
        for l in 1..=l_check {
            let dd = self.harmonic_defect(Harmonic::Down, l).abs();
            if dd > report.max_defect_down {
                report.max_defect_down = dd;
                report.worst_l_down = l;
            }
            let du = self.harmonic_defect(Harmonic::Up, l).abs();
            if du > report.max_defect_up {
                report.max_defect_up = du;
                report.worst_l_up = l;
            }
        }
        report.passed = report.max_defect_down < tol && report.max_defect_up < tol;
        report
    }

    pub fn to_file(&self, c_q: f64, p_q: Option<f64>) -> KernelFile {
        let kk = self.k_table as i64;
        let probs = (-kk..=kk)
            .filter_map(|k| {
                let v = self.pmf(k);
                (v > 0.0).then_some((k, v))
            })
            .collect();
        let q = (0..=kk)
            .filter_map(|k| {
                let v = self.pmf(k);
                if v <= 0.0 {
                    return None;
                }
                let q = (v.ln() - k as f64 * c_q.ln()).exp();
                (q > 0.0).then_some(((k + 1) as u64, q))
            })
            .collect();
        KernelFile {
            a: self.a,
            k_table: self.k_table,
            probs,
            neg_tail: self.neg_tail.clone(),
            pos_tail: self.pos_tail.clone(),
            p_q,
            c_q,
            q,
            checksum: self.checksum.clone(),
        }
    }

    pub fn from_file(file: &KernelFile) -> Result<Self, KernelError> {
        let kk = file.k_table as i64;
        let mut dense = vec![0.0; 2 * file.k_table as usize + 1];
        for &(k, v) in &file.probs {
            if k.abs() > kk {
                return Err(KernelError::Invalid(format!("entry {k} outside table")));
            }
            dense[(k + kk) as usize] = v;
        }
        let law = Self::new(
            file.k_table,
            dense,
            file.neg_tail.clone(),
            file.pos_tail.clone(),
            file.a,
        )?;
        if !file.checksum.is_empty() && law.checksum != file.checksum {
            return Err(KernelError::Checksum {
                stored: file.checksum.clone(),
                computed: law.checksum.clone(),
            });
        }
        Ok(law)
    }

    pub fn save_json(&self, path: &Path) -> Result<(), KernelError> {
        let c_q = 2.0 / self.pmf(-1);
        let file = self.to_file(c_q, Some(self.tail_constant));
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, KernelError> {
        let text = std::fs::read_to_string(path)?;
        let file: KernelFile = serde_json::from_str(&text)?;
        Self::from_file(&file)
    }
}

fn content_checksum(k_table: u64, dense: &[f64], neg: &SideTail, pos: &SideTail) -> String {
    let mut hasher = Sha256::new();
    hasher.update(k_table.to_le_bytes());
    for v in dense {
        hasher.update(v.to_bits().to_le_bytes());
    }
    hasher.update(serde_json::to_vec(neg).unwrap_or_default());
    hasher.update(serde_json::to_vec(pos).unwrap_or_default());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// On-disk kernel document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelFile {
    pub a: f64,
    #[serde(rename = "K_table")]
    pub k_table: u64,
    pub probs: Vec<(i64, f64)>,
    pub neg_tail: SideTail,
    pub pos_tail: SideTail,
    pub p_q: Option<f64>,
    pub c_q: f64,
    pub q: Vec<(u64, f64)>,
    pub checksum: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub l_check: u64,
    pub tol: f64,
    pub max_defect_down: f64,
    pub worst_l_down: u64,
    pub max_defect_up: f64,
    pub worst_l_up: u64,
    pub mass_defect: f64,
    pub passed: bool,
}

/// Shape of the positive side in the solver's ansatz.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PositiveShape {
    /// `1/(k² - 1/4)`
    ShiftedInverseSquare,
    /// `1/k²`
    InverseSquare,
}

impl PositiveShape {
    fn value(self, k: f64) -> f64 {
        match self {
            PositiveShape::ShiftedInverseSquare => 1.0 / (k * k - 0.25),
            PositiveShape::InverseSquare => 1.0 / (k * k),
        }
    }

    fn tail(self, scale: f64) -> SideTail {
        match self {
            PositiveShape::ShiftedInverseSquare => SideTail::Cauchy { p: scale },
            PositiveShape::InverseSquare => SideTail::Power {
                coef: scale,
                exponent: 2.0,
                shift: 0.0,
            },
        }
    }
}

/// Solver ansatz: `ν(0) = q1`, `ν(k) = p̂·shape(k)` for `k ≥ 1` and `ν(-k) = p̂·shape(k)`
/// for `k > K/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailAnsatz {
    pub q1: f64,
    pub shape: PositiveShape,
}

impl Default for TailAnsatz {
    fn default() -> Self {
        Self {
            q1: 0.0,
            shape: PositiveShape::ShiftedInverseSquare,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub k_table: u64,
    pub p_hat: f64,
    pub equations: usize,
    pub max_scaled_residual: f64,
    pub worst_equation: u64,
    pub min_probability: f64,
    pub validation: Option<ValidationReport>,
}

/// Least-squares solve of the truncated harmonicity system for a type-2 law.
pub fn solve_type2_kernel(
    k_table: u64,
    ansatz: TailAnsatz,
) -> Result<(DisplacementLaw, SolveReport), KernelError> {
    if k_table < 1000 {
        return Err(KernelError::Invalid(format!("K={k_table} below 1000")));
    }
    let kk = k_table as usize;
    let half = kk / 2;
    let shape = ansatz.shape;
    let q1 = ansatz.q1;
    let ln_down: Vec<f64> = (0..=kk + half + 1).map(|j| ln_central_binomial(j as u64)).collect();
    let hd = |j: usize| ln_down[j].exp();
    let hu = |j: usize| {
        if j == 0 {
            0.0
        } else {
            2.0 * j as f64 * ln_down[j].exp()
        }
    };
    let s: Vec<f64> = (0..=kk).map(|k| if k == 0 { 0.0 } else { shape.value(k as f64) }).collect();
    let mut a_down = vec![0.0; half + 1];
    let mut a_up = vec![0.0; half + 1];
    for l in 1..=half {
        let mut sd = 0.0;
        let mut su = 0.0;
        for k in (1..=kk).rev() {
            sd += s[k] * hd(l + k);
            su += s[k] * hu(l + k);
        }
        let lf = l as f64;
        sd += smooth_tail_sum(|x| shape.value(x) * ln_central_ratio(lf + x).exp(), (kk + 1) as f64);
        su += smooth_tail_sum(
            |x| shape.value(x) * 2.0 * (lf + x) * ln_central_ratio(lf + x).exp(),
            (kk + 1) as f64,
        );
        a_down[l] = sd;
        a_up[l] = su;
    }
    let mut alpha = vec![0.0; half + 1];
    let mut beta = vec![0.0; half + 1];
    for l in 1..=half {
        let mut sa = 0.0;
        let mut sb = 0.0;
        for j in 1..l {
            let w = hd(l - j);
            sa += alpha[j] * w;
            sb += beta[j] * w;
        }
        alpha[l] = (1.0 - q1) * hd(l) - sa;
        beta[l] = -a_down[l] - sb;
    }
    let mut rows: Vec<(u64, f64, f64)> = Vec::with_capacity(half + 1);
    for l in 1..=half {
        let mut sa = 0.0;
        let mut sb = 0.0;
        for j in 1..l {
            let w = hu(l - j);
            sa += alpha[j] * w;
            sb += beta[j] * w;
        }
        let scale = hu(l);
        rows.push((l as u64, (sa + (q1 - 1.0) * scale) / scale, (sb + a_up[l]) / scale));
    }
    let tail_mass = |from: usize| -> f64 {
        let mut m: f64 = (from..=kk).rev().map(|k| s[k]).sum();
        m += match shape {
            PositiveShape::ShiftedInverseSquare => 1.0 / (kk as f64 + 0.5),
            PositiveShape::InverseSquare => hurwitz_tail(2.0, (kk + 1) as f64),
        };
        m
    };
    let mass_a = alpha[1..].iter().sum::<f64>() + q1 - 1.0;
    let mass_b = beta[1..].iter().sum::<f64>() + tail_mass(half + 1) + tail_mass(1);
    rows.push((0, mass_a, mass_b));
    let num: f64 = rows.iter().map(|r| r.1 * r.2).sum();
    let den: f64 = rows.iter().map(|r| r.2 * r.2).sum();
    let p_hat = -num / den;
    let (worst_equation, max_res) = rows
        .iter()
        .map(|r| (r.0, (r.1 + r.2 * p_hat).abs()))
        .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    let mut dense = vec![0.0; 2 * kk + 1];
    dense[kk] = q1;
    let mut min_prob = f64::INFINITY;
    for k in 1..=kk {
        dense[kk + k] = p_hat * s[k];
        let neg = if k <= half {
            alpha[k] + beta[k] * p_hat
        } else {
            p_hat * s[k]
        };
        min_prob = min_prob.min(neg);
        dense[kk - k] = neg;
    }
    let mut report = SolveReport {
        k_table,
        p_hat,
        equations: rows.len(),
        max_scaled_residual: max_res,
        worst_equation,
        min_probability: min_prob,
        validation: None,
    };
    if !(p_hat > 0.0) || min_prob < -1e-13 || max_res > 1e-9 {
        return Err(KernelError::Solve {
            residual: max_res,
            at: worst_equation,
            detail: format!("p_hat={p_hat:e}, min probability {min_prob:e}"),
        });
    }
    for v in dense.iter_mut() {
        *v = v.max(0.0);
    }
    let law = DisplacementLaw::new(k_table, dense, shape.tail(p_hat), shape.tail(p_hat), 2.0)?;
    let validation = law.validate(k_table / 4, 1e-8);
    let passed = validation.passed;
    let worst = validation.max_defect_down.max(validation.max_defect_up);
    let at = if validation.max_defect_down > validation.max_defect_up {
        validation.worst_l_down
    } else {
        validation.worst_l_up
    };
    report.validation = Some(validation);
    if !passed {
        return Err(KernelError::Solve {
            residual: worst,
            at,
            detail: "harmonicity validation failed".into(),
        });
    }
    Ok((law, report))
}

/// Face weights `q_k`, stored as `ν(k-1) = q_k c^{k-1}` to avoid underflow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSequence {
    pub c_q: f64,
    scaled: Vec<f64>,
    tail: SideTail,
}

impl WeightSequence {
    /// Finite weight sequence from `(k, q_k)` pairs; `c_q` solved for criticality when absent.
    pub fn finite(q: &[(u64, f64)], c_q: Option<f64>) -> Result<Self, KernelError> {
        if q.iter().any(|&(k, v)| k == 0 || !v.is_finite() || v < 0.0) {
            return Err(KernelError::Invalid("weights must be finite, ≥ 0, indexed from 1".into()));
        }
        if q.iter().all(|&(_, v)| v == 0.0) {
            return Err(KernelError::Invalid("weight sequence is identically zero".into()));
        }
        let c = match c_q {
            Some(c) => c,
            None => critical_c(q)?,
        };
        let kmax = q.iter().map(|x| x.0).max().unwrap_or(1) as usize;
        let mut scaled = vec![0.0; kmax];
        for &(k, v) in q {
            scaled[k as usize - 1] = v * c.powi(k as i32 - 1);
        }
        Ok(Self {
            c_q: c,
            scaled,
            tail: SideTail::None,
        })
    }

    /// The quadrangulation fixture `q₂ = 1/12`.
    pub fn quadrangulation() -> Self {
        Self::finite(&[(2, 1.0 / 12.0)], Some(8.0)).expect("valid fixture")
    }

    /// `q_k`.
    pub fn q(&self, k: u64) -> f64 {
        let v = self.scaled_at(k - 1);
        if v == 0.0 {
            0.0
        } else {
            (v.ln() - (k - 1) as f64 * self.c_q.ln()).exp()
        }
    }

    /// `q_{j+1} c^j`, which is `ν(j)` for `j ≥ 0`.
    pub fn scaled_at(&self, j: u64) -> f64 {
        if (j as usize) < self.scaled.len() {
            self.scaled[j as usize]
        } else if j == 0 {
            0.0
        } else {
            self.tail.pmf(j as f64)
        }
    }

    pub fn dense_len(&self) -> usize {
        self.scaled.len()
    }

    pub fn tail(&self) -> &SideTail {
        &self.tail
    }
}

/// μ-probability terms `μ(j)` for `j ≥ 0` of a finite sequence at growth constant `c`.
fn mu_terms(q: &[(u64, f64)], c: f64) -> Vec<(u64, f64)> {
    q.iter()
        .map(|&(k, v)| {
            let j = k - 1;
            let factor = (ln_central_binomial(j) + j as f64 * c.ln()).exp() * (2 * j + 1) as f64
                / (j + 1) as f64;
            (j, v * factor)
        })
        .collect()
}

/// `c_q` for a finite critical sequence: the double root of the μ-mass equation.
pub fn critical_c(q: &[(u64, f64)]) -> Result<f64, KernelError> {
    let mean_term = |c: f64| -> f64 {
        -4.0 / c + mu_terms(q, c).iter().map(|&(j, m)| j as f64 * m).sum::<f64>()
    };
    let (mut lo, mut hi) = (1e-6f64, 1.0f64);
    while mean_term(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(KernelError::NotCritical("no positive mean-zero point".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_term(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = 0.5 * (lo + hi);
    let mass = 4.0 / c + mu_terms(q, c).iter().map(|x| x.1).sum::<f64>();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(KernelError::NotCritical(format!(
            "μ-mass at the mean-zero point is {mass}, not 1"
        )));
    }
    Ok(c)
}

/// Dense `ν` from weights and a table of `ln W^(k)`, `k < K`.
pub fn nu_from_weights(w: &WeightSequence, ln_w: &[f64]) -> Result<DisplacementLaw, KernelError> {
    nu_from_weights_with_tail(w, ln_w, SideTail::None)
}

/// As [`nu_from_weights`], with an analytic negative tail beyond the table.
pub fn nu_from_weights_with_tail(
    w: &WeightSequence,
    ln_w: &[f64],
    neg_tail: SideTail,
) -> Result<DisplacementLaw, KernelError> {
    let kk = ln_w.len().max(w.dense_len());
    if kk == 0 {
        return Err(KernelError::Invalid("empty partition table".into()));
    }
    let lc = w.c_q.ln();
    let mut dense = vec![0.0; 2 * kk + 1];
    for j in 0..=kk {
        dense[kk + j] = w.scaled_at(j as u64);
    }
    for (k, &lw) in ln_w.iter().enumerate() {
        dense[kk - k - 1] = (lw + std::f64::consts::LN_2 - (k + 1) as f64 * lc).exp();
    }
    let a = if matches!(neg_tail, SideTail::Cauchy { .. }) { 2.0 } else { 2.5 };
    let law = DisplacementLaw::new(kk as u64, dense, neg_tail, w.tail.clone(), a)?;
    let l_check = (ln_w.len() as u64 / 2).clamp(1, 200);
    for l in 1..=l_check {
        for h in [Harmonic::Down, Harmonic::Up] {
            let d = law.harmonic_defect(h, l).abs();
            if d > 1e-8 {
                return Err(KernelError::Harmonicity {
                    kind: h,
                    l,
                    defect: d,
                    tol: 1e-8,
                });
            }
        }
    }
    Ok(law)
}

/// Invert `ν` into weights and `ln W^(k)` for `k < K`.
pub fn weights_from_nu(law: &DisplacementLaw) -> Result<(WeightSequence, Vec<f64>), KernelError> {
    let nu_m1 = law.pmf(-1);
    if nu_m1 <= 0.0 {
        return Err(KernelError::Inversion("ν(-1) = 0".into()));
    }
    let c = 2.0 / nu_m1;
    let kk = law.k_table();
    let scaled: Vec<f64> = (0..=kk).map(|j| law.pmf(j as i64)).collect();
    let ln_w = (0..kk)
        .map(|k| {
            let v = law.pmf(-(k as i64) - 1);
            v.ln() + (k + 1) as f64 * c.ln() - std::f64::consts::LN_2
        })
        .collect();
    Ok((
        WeightSequence {
            c_q: c,
            scaled,
            tail: law.pos_tail().clone(),
        },
        ln_w,
    ))
}

/// The law `μ` on `ℤ_{≥-1}` attached to a weight sequence.
pub fn mu_law(w: &WeightSequence) -> Result<DisplacementLaw, KernelError> {
    let tail = match w.tail {
        SideTail::None => SideTail::None,
        SideTail::Cauchy { p } => SideTail::CauchyBiased { p },
        ref other => {
            return Err(KernelError::Invalid(format!("no μ tail for weight tail {other:?}")))
        }
    };
    let kk = w.dense_len().saturating_sub(1).max(1);
    let mut dense = vec![0.0; 2 * kk + 1];
    dense[kk - 1] = 4.0 / w.c_q;
    for j in 0..=kk {
        let v = w.scaled_at(j as u64);
        if v > 0.0 {
            let f = (ln_central_binomial(j as u64)).exp() * (2 * j + 1) as f64 / (j + 1) as f64;
            dense[kk + j] = v * f;
        }
    }
    let law = DisplacementLaw::new(kk as u64, dense, SideTail::None, tail, 2.5)?;
    let (mass, mean) = mu_mass_mean(&law);
    if (mass - 1.0).abs() > 1e-10 || mean.abs() > 1e-8 {
        return Err(KernelError::NotCritical(format!("μ mass {mass}, mean {mean}")));
    }
    Ok(law)
}

/// Mass and mean of a law on `ℤ_{≥-1}` with a summable first moment.
pub fn mu_mass_mean(mu: &DisplacementLaw) -> (f64, f64) {
    let kk = mu.k_table();
    let mut mass = mu.pmf(-1);
    let mut mean = -mu.pmf(-1);
    let mut pos_mass = 0.0;
    let mut pos_mean = 0.0;
    for j in (0..=kk).rev() {
        let v = mu.pmf(j as i64);
        pos_mass += v;
        pos_mean += j as f64 * v;
    }
    pos_mass += mu.pos_tail().mass_from(kk + 1);
    pos_mean += mu.pos_tail().first_moment_from(kk + 1);
    mass += pos_mass;
    mean += pos_mean;
    (mass, mean)
}

/// Constants of a type-2 law.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConstants {
    pub p_q: f64,
    pub p_fit: f64,
    pub a_fit: f64,
    pub tail_spread: f64,
    pub b_q: f64,
    pub c_q: f64,
    pub q1: f64,
    pub gamma_q: f64,
    pub gamma_argmin: u64,
    pub gamma_tail_bound: f64,
    pub k0: Vec<(f64, u64)>,
}

/// `b_q = 1/(2 p √π)`.
pub fn volume_constant(p_q: f64) -> f64 {
    1.0 / (2.0 * p_q * std::f64::consts::PI.sqrt())
}

/// `k·(ν((-∞,-k]) - sup_{l≥1} ν(-k-l))`.
pub fn gamma_term(law: &DisplacementLaw, k: u64) -> f64 {
    k as f64 * (law.lower(k) - law.neg_max(k + 1, u64::MAX))
}

/// Tail constant, `b_q`, `γ(q)` and `k₀(ε)` for the requested `ε`.
pub fn model_constants(law: &DisplacementLaw, eps: &[f64]) -> Result<ModelConstants, KernelError> {
    let kk = law.k_table();
    let lo = (kk / 2).max(1);
    let pts: Vec<(f64, f64)> = (lo..=kk)
        .map(|k| ((k as f64).ln(), law.pmf(-(k as i64))))
        .collect();
    if pts.iter().any(|p| p.1 <= 0.0) {
        return Err(KernelError::Tail("zero entries in the fit window".into()));
    }
    let vals: Vec<f64> = (lo..=kk).map(|k| (k as f64).powi(2) * law.pmf(-(k as i64))).collect();
    let p_fit = vals.iter().sum::<f64>() / vals.len() as f64;
    let tail_spread = vals.iter().map(|v| (v / p_fit - 1.0).abs()).fold(0.0, f64::max);
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1.ln() - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let a_fit = -sxy / sxx;
    if tail_spread > 0.05 || (a_fit - 2.0).abs() > 0.02 {
        return Err(KernelError::Tail(format!(
            "k²ν(-k) spread {tail_spread:.3e}, fitted exponent {a_fit:.4}: not a type-2 tail"
        )));
    }
    let p_q = match law.neg_tail() {
        SideTail::Cauchy { p } => *p,
        _ => p_fit,
    };
    let gamma_tail_bound = match law.neg_tail() {
        SideTail::Cauchy { p } => p * (1.0 - 1.0 / (kk as f64 + 2.0)),
        SideTail::Power {
            coef,
            exponent,
            shift,
        } if *exponent == 2.0 && *shift >= 0.0 => {
            coef * (1.0 - 1.0 / (kk as f64 + 1.0)) - coef / (kk as f64 + 1.0)
        }
        other => {
            return Err(KernelError::Tail(format!("cannot certify γ beyond the table for {other:?}")))
        }
    };
    let mut gamma = f64::INFINITY;
    let mut gamma_argmin = 0;
    for k in 1..=kk {
        let g = gamma_term(law, k);
        if g < gamma {
            gamma = g;
            gamma_argmin = k;
        }
    }
    if gamma_tail_bound < gamma {
        return Err(KernelError::Tail(format!(
            "tail bound {gamma_tail_bound} below table minimum {gamma}; enlarge the table"
        )));
    }
    let mut k0 = Vec::new();
    for &e in eps {
        let x = p_q - e;
        let mut last_fail = 0u64;
        for k in 1..=kk {
            let lhs = (x / k as f64).exp();
            let rhs = 1.0 + law.lower(k) - law.neg_max(k + 1, u64::MAX);
            if lhs > rhs {
                last_fail = k;
            }
        }
        if x > 0.0 {
            let kf = (kk + 1) as f64;
            if e < x * x / kf + (p_q - gamma_tail_bound) + 1e-15 {
                return Err(KernelError::Tail(format!("k0 for eps={e} not certified beyond K={kk}")));
            }
        }
        k0.push((e, last_fail + 1));
    }
    let nu_m1 = law.pmf(-1);
    Ok(ModelConstants {
        p_q,
        p_fit,
        a_fit,
        tail_spread,
        b_q: volume_constant(p_q),
        c_q: if nu_m1 > 0.0 { 2.0 / nu_m1 } else { f64::INFINITY },
        q1: law.q1(),
        gamma_q: gamma,
        gamma_argmin,
        gamma_tail_bound,
        k0,
    })
}

/// Kernel selector accepted on the command line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum KernelSpec {
    /// Solver output with the Cauchy-form ansatz.
    Type2,
    /// Closed-form Cauchy law.
    Type2Closed,
    /// Quadrangulations.
    Quad,
    Path(PathBuf),
}

impl std::str::FromStr for KernelSpec {
    type Err = KernelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "builtin:type2" => KernelSpec::Type2,
            "builtin:type2-closed" => KernelSpec::Type2Closed,
            "builtin:quad" => KernelSpec::Quad,
            other if other.starts_with("builtin:") => {
                return Err(KernelError::UnknownSpec(other.to_string()))
            }
            path => KernelSpec::Path(PathBuf::from(path)),
        })
    }
}

impl std::fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelSpec::Type2 => write!(f, "builtin:type2"),
            KernelSpec::Type2Closed => write!(f, "builtin:type2-closed"),
            KernelSpec::Quad => write!(f, "builtin:quad"),
            KernelSpec::Path(p) => write!(f, "{}", p.display()),
        }
    }
}

/// Resolve a kernel spec; built-ins are constructed once per process.
pub fn load_kernel(spec: &KernelSpec) -> Result<Arc<DisplacementLaw>, KernelError> {
    static TYPE2: OnceLock<Arc<DisplacementLaw>> = OnceLock::new();
    static CLOSED: OnceLock<Arc<DisplacementLaw>> = OnceLock::new();
    static QUAD: OnceLock<Arc<DisplacementLaw>> = OnceLock::new();
    Ok(match spec {
        KernelSpec::Type2 => {
            if let Some(k) = TYPE2.get() {
                return Ok(k.clone());
            }
            let (law, _) = solve_type2_kernel(DEFAULT_K_TABLE, TailAnsatz::default())?;
            TYPE2.get_or_init(|| Arc::new(law)).clone()
        }
        KernelSpec::Type2Closed => {
            if let Some(k) = CLOSED.get() {
                return Ok(k.clone());
            }
            let law = DisplacementLaw::cauchy_closed_form(0.0, DEFAULT_K_TABLE)?;
            CLOSED.get_or_init(|| Arc::new(law)).clone()
        }
        KernelSpec::Quad => {
            if let Some(k) = QUAD.get() {
                return Ok(k.clone());
            }
            let law = DisplacementLaw::quadrangulation(DEFAULT_K_TABLE)?;
            QUAD.get_or_init(|| Arc::new(law)).clone()
        }
        KernelSpec::Path(p) => Arc::new(DisplacementLaw::load_json(p)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_entries() {
        let law = DisplacementLaw::quadrangulation(64).unwrap();
        assert!((law.pmf(1) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(law.pmf(0), 0.0);
        assert!((law.pmf(-1) - 0.25).abs() < 1e-15);
        assert!((law.pmf(-2) - 1.0 / 24.0).abs() < 1e-15);
        assert!((law.pmf(-3) - 1.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn fixture_tail_matches_table_edge() {
        let law = DisplacementLaw::quadrangulation(4096).unwrap();
        let j = 4096i64;
        let t = law.neg_tail().pmf(j as f64);
        assert!((t / law.pmf(-j) - 1.0).abs() < 1e-6);
        assert!((law.total_mass() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn closed_form_mass_and_tails() {
        let law = DisplacementLaw::cauchy_closed_form(0.0, 512).unwrap();
        assert!((law.total_mass() - 1.0).abs() < 1e-14);
        assert!((law.upper(3) - 0.25 / 2.5).abs() < 1e-15);
        assert!((law.lower(1000) - 0.25 / 999.5).abs() < 1e-15);
        assert!((law.mass_between(-2, 2) - (1.0 / 3.0 + 1.0 / 15.0) * 2.0).abs() < 1e-15);
    }

    #[test]
    fn sampling_inverts_cdf() {
        let law = DisplacementLaw::cauchy_closed_form(0.1, 64).unwrap();
        for &(lo, hi) in &[(-10i64, 10i64), (-200, -3), (5, i64::MAX), (-1000, 1000)] {
            let total = law.mass_between(lo, hi);
            for i in 0..200 {
                let u = (i as f64 + 0.5) / 200.0;
                let k = law.sample_between(lo, hi, u);
                assert!(k >= lo && k <= hi);
                let below = law.mass_between(lo, k - 1) / total;
                let upto = law.mass_between(lo, k) / total;
                assert!(below <= u + 1e-12 && u < upto + 1e-12, "u={u} k={k}");
            }
        }
    }

    #[test]
    fn neg_max_matches_scan() {
        let law = DisplacementLaw::quadrangulation(100).unwrap();
        for &(a, b) in &[(1u64, 1u64), (3, 17), (50, 100), (90, 300)] {
            let scan = (a..=b).map(|j| law.pmf(-(j as i64))).fold(0.0, f64::max);
            assert!((law.neg_max(a, b) - scan).abs() < 1e-18);
        }
    }

    #[test]
    fn closed_form_is_harmonic() {
        let law = DisplacementLaw::cauchy_closed_form(0.0, 4096).unwrap();
        for &l in &[1u64, 2, 10, 100, 1000] {
            assert!(law.harmonic_defect(Harmonic::Down, l).abs() < 1e-11, "down {l}");
            assert!(law.harmonic_defect(Harmonic::Up, l).abs() < 1e-10, "up {l}");
        }
    }

    #[test]
    fn fixture_weights_round_trip() {
        let w = WeightSequence::quadrangulation();
        let law = DisplacementLaw::quadrangulation(32).unwrap();
        let (w2, ln_w) = weights_from_nu(&law).unwrap();
        assert!((w2.c_q - 8.0).abs() < 1e-14);
        assert!((w2.q(2) - 1.0 / 12.0).abs() < 1e-15);
        assert!((ln_w[1].exp() - 4.0 / 3.0).abs() < 1e-13);
        assert!((ln_w[0].exp() - 1.0).abs() < 1e-14);
        let back = nu_from_weights(&w, &ln_w).unwrap();
        for k in -32..=32 {
            let (x, y) = (back.pmf(k), law.pmf(k));
            assert!((x - y).abs() <= 1e-12 * y.max(1e-300), "k={k}");
        }
    }

    #[test]
    fn critical_c_of_quadrangulations() {
        let c = critical_c(&[(2, 1.0 / 12.0)]).unwrap();
        assert!((c - 8.0).abs() < 1e-6);
        assert!(critical_c(&[(2, 1.0 / 10.0)]).is_err());
    }

    #[test]
    fn mu_of_fixture() {
        let mu = mu_law(&WeightSequence::quadrangulation()).unwrap();
        assert!((mu.pmf(-1) - 0.5).abs() < 1e-15);
        assert!((mu.pmf(1) - 0.5).abs() < 1e-15);
        let (mass, mean) = mu_mass_mean(&mu);
        assert_eq!(mass, 1.0);
        assert_eq!(mean, 0.0);
    }

    #[test]
    fn mu_of_closed_form_is_critical() {
        let law = DisplacementLaw::cauchy_closed_form(0.0, 4096).unwrap();
        let (w, _) = weights_from_nu(&law).unwrap();
        let mu = mu_law(&w).unwrap();
        let (mass, mean) = mu_mass_mean(&mu);
        assert!((mass - 1.0).abs() < 1e-12, "mass {mass}");
        assert!(mean.abs() < 1e-10, "mean {mean}");
    }

    #[test]
    fn volume_constant_closed_form() {
        assert!((volume_constant(1.0) - 0.282_094_791_773_878_1).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let law = DisplacementLaw::quadrangulation(16).unwrap();
        let file = law.to_file(8.0, None);
        let text = serde_json::to_string(&file).unwrap();
        let back = DisplacementLaw::from_file(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.checksum(), law.checksum());
        let closed = load_kernel(&KernelSpec::Type2Closed).unwrap();
        let text_closed = serde_json::to_string(&closed.to_file(6.0, Some(0.25))).unwrap();
        let back = DisplacementLaw::from_file(&serde_json::from_str(&text_closed).unwrap()).unwrap();
        assert_eq!(back.checksum(), closed.checksum());
        let mut bad: KernelFile = serde_json::from_str(&text).unwrap();
        bad.probs[0].1 *= 1.5;
        assert!(matches!(
            DisplacementLaw::from_file(&bad),
            Err(KernelError::Checksum { .. }) | Err(KernelError::Mass { .. })
        ));
    }

    #[test]
    fn solver_recovers_closed_form() {
        let (law, report) = solve_type2_kernel(4096, TailAnsatz::default()).unwrap();
        assert!((report.p_hat - 0.25).abs() < 1e-10, "p_hat {}", report.p_hat);
        let closed = DisplacementLaw::cauchy_closed_form(0.0, 4096).unwrap();
        for k in -4096i64..=4096 {
            assert!((law.pmf(k) - closed.pmf(k)).abs() < 1e-12, "k={k}");
        }
        let v = report.validation.unwrap();
        assert!(v.max_defect_down < 1e-8 && v.max_defect_up < 1e-8);
    }

    #[test]
    fn solver_rejects_plain_inverse_square() {
        let ansatz = TailAnsatz {
            q1: 0.0,
            shape: PositiveShape::InverseSquare,
        };
        assert!(matches!(
            solve_type2_kernel(2048, ansatz),
            Err(KernelError::Solve { .. })
        ));
    }

    #[test]
    fn solver_with_positive_q1() {
        let ansatz = TailAnsatz {
            q1: 0.2,
            shape: PositiveShape::ShiftedInverseSquare,
        };
        let (_, report) = solve_type2_kernel(2048, ansatz).unwrap();
        assert!((report.p_hat - 0.2).abs() < 1e-10);
    }
}
