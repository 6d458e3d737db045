//! Controlled-error ground truth: first-passage laws, partition functions and
//! dynamic-programming oracles for the conditioned walks.

use crate::harmonic::Harmonic;
use crate::kernel::{DisplacementLaw, KernelError, SideTail};
use crate::special::{ln_central_binomial, smooth_tail_sum};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Default horizon of first-passage tables.
pub const DEFAULT_HORIZON: u64 = 2048;
const TABLE_MAGIC: &[u8; 8] = b"CMAPFPT1";

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("horizon {n_max} leaves relative error {error:e} above budget {budget:e}")]
    Horizon { n_max: u64, error: f64, budget: f64 },
    #[error("escape mass {escape:e} above tolerance {tol:e} at truncation {m_max}")]
    Truncation { m_max: u64, escape: f64, tol: f64 },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("cache file is corrupt or from another version: {0}")]
    Cache(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Law of `τ_{-k}` for the μ-walk started at 0, up to a horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstPassageTable {
    pub k: u64,
    pub n_max: u64,
    /// `probs[n] = P(τ_{-k} = n)`, `probs[0] = 0`.
    pub probs: Vec<f64>,
    pub tail_mass: f64,
}

impl FirstPassageTable {
    pub fn prob(&self, n: u64) -> f64 {
        self.probs.get(n as usize).copied().unwrap_or(0.0)
    }

    pub fn save(&self, path: &Path, checksum: &str) -> Result<(), OracleError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(TABLE_MAGIC)?;
        let cs = checksum.as_bytes();
        f.write_all(&(cs.len() as u64).to_le_bytes())?;
        f.write_all(cs)?;
        f.write_all(&self.k.to_le_bytes())?;
        f.write_all(&self.n_max.to_le_bytes())?;
        f.write_all(&self.tail_mass.to_le_bytes())?;
        for p in &self.probs {
            f.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path, checksum: &str) -> Result<Self, OracleError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], OracleError> {
            let s = bytes
                .get(pos..pos + n)
                .ok_or_else(|| OracleError::Cache("truncated".into()))?;
            pos += n;
            Ok(s)
        };
        if take(8)? != TABLE_MAGIC {
            return Err(OracleError::Cache("bad header".into()));
        }
        let u64_of = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
        let cs_len = u64_of(take(8)?) as usize;
        if take(cs_len)? != checksum.as_bytes() {
            return Err(OracleError::Cache("kernel checksum differs".into()));
        }
        let k = u64_of(take(8)?);
        let n_max = u64_of(take(8)?);
        let tail_mass = f64::from_bits(u64_of(take(8)?));
        let mut probs = Vec::with_capacity(n_max as usize + 1);
        for _ in 0..=n_max {
            probs.push(f64::from_bits(u64_of(take(8)?)));
        }
        Ok(Self {
            k,
            n_max,
            probs,
            tail_mass,
        })
    }
}

fn mu_support(mu: &DisplacementLaw, up_to: u64) -> Vec<(i64, f64)> {
    (-1..=up_to as i64)
        .filter_map(|j| {
            let v = mu.pmf(j);
            (v > 0.0).then_some((j, v))
        })
        .collect()
}

/// `P(τ_{-k} = n)` for `n ≤ n_max` by convolution of `μ` along paths kept above `-k`.
pub fn first_passage_law(
    mu: &DisplacementLaw,
    k: u64,
    n_max: u64,
) -> Result<FirstPassageTable, OracleError> {
    if k == 0 {
        return Err(OracleError::Invalid("depth must be ≥ 1".into()));
    }
    if mu.pmf(-2) > 0.0 || mu.lower(2) > 0.0 {
        return Err(OracleError::Invalid("μ must be supported on [-1, ∞)".into()));
    }
    let mut probs = vec![0.0; n_max as usize + 1];
    if n_max < k {
        return Ok(FirstPassageTable {
            k,
            n_max,
            probs,
            tail_mass: 1.0,
        });
    }
    let support = mu_support(mu, n_max);
    let ki = k as i64;
    let offset = ki - 1;
    let width = (n_max as i64 - ki + 1).max(1) as usize + ki as usize;
    let mut cur = vec![0.0; width];
    let mut next = vec![0.0; width];
    cur[offset as usize] = 1.0;
    for t in 0..n_max as i64 {
        let hi_now = n_max as i64 - t - ki;
        let hi_next = hi_now - 1;
        next.iter_mut().for_each(|v| *v = 0.0);
        for y in (1 - ki)..=hi_now {
            let w = cur[(y + offset) as usize];
            if w == 0.0 {
                continue;
            }
            for &(j, p) in &support {
                let z = y + j;
                if z > hi_next {
                    break;
                }
                if z == -ki {
                    probs[(t + 1) as usize] += w * p;
                } else {
                    next[(z + offset) as usize] += w * p;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    let tail_mass = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    Ok(FirstPassageTable {
        k,
        n_max,
        probs,
        tail_mass,
    })
}

/// `P(τ_{-k} = n) = (k/n) P(Y_n = -k)` for `n ≤ n_max`, from the free walk.
pub fn first_passage_cycle_lemma(
    mu: &DisplacementLaw,
    k: u64,
    n_max: u64,
) -> Result<Vec<f64>, OracleError> {
    let support = mu_support(mu, n_max);
    let ki = k as i64;
    let lo = -(n_max as i64);
    let width = (n_max as i64 - ki - lo + 1).max(1) as usize;
    let mut cur = vec![0.0; width];
    let mut next = vec![0.0; width];
    cur[(-lo) as usize] = 1.0;
    let mut out = vec![0.0; n_max as usize + 1];
    for t in 0..n_max as i64 {
        let hi_next = -ki + n_max as i64 - (t + 1);
        next.iter_mut().for_each(|v| *v = 0.0);
        for y in -t..=(hi_next + 1) {
            let w = cur[(y - lo) as usize];
            if w == 0.0 {
                continue;
            }
            for &(j, p) in &support {
                let z = y + j;
                if z > hi_next {
                    break;
                }
                next[(z - lo) as usize] += w * p;
            }
        }
        std::mem::swap(&mut cur, &mut next);
        let n = (t + 1) as u64;
        out[n as usize] = k as f64 / n as f64 * cur[(-ki - lo) as usize];
    }
    Ok(out)
}

/// First-passage table, read from and written to `CAUCHY_MAP_CACHE` when set.
pub fn cached_first_passage(
    mu: &DisplacementLaw,
    k: u64,
    n_max: u64,
) -> Result<FirstPassageTable, OracleError> {
    let dir = std::env::var_os("CAUCHY_MAP_CACHE").map(PathBuf::from);
    let path = dir.as_ref().map(|d| {
        d.join(format!("fpt-{}-{k}-{n_max}.bin", &mu.checksum()[..16]))
    });
    if let Some(p) = &path {
        if let Ok(t) = FirstPassageTable::load(p, mu.checksum()) {
            return Ok(t);
        }
    }
    let table = first_passage_law(mu, k, n_max)?;
    if let (Some(d), Some(p)) = (&dir, &path) {
        std::fs::create_dir_all(d)?;
        table.save(p, mu.checksum())?;
    }
    Ok(table)
}

/// Sized partition functions `W_1^(ℓ)[n]` and `W^(ℓ)[n]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizedPartition {
    pub l: u64,
    pub n: u64,
    pub w1: f64,
    pub w: f64,
}

fn ln_w1_prefactor(l: u64, c_q: f64) -> f64 {
    let lf = l as f64;
    (lf / (lf + 1.0)).ln() + ln_central_binomial(l) + (lf + 1.0) * c_q.ln() - 4f64.ln()
}

/// `W_1^(ℓ)[n] = (ℓ/(ℓ+1)) C(2ℓ,ℓ) (c/4)^{ℓ+1} P(τ_{-ℓ-1} = n)`, `W^(ℓ)[n] = W_1^(ℓ)[n+1]/n`.
pub fn partition_sized(table: &FirstPassageTable, c_q: f64, l: u64, n: u64) -> SizedPartition {
    assert_eq!(table.k, l + 1, "table depth must be l+1");
    let pre = ln_w1_prefactor(l, c_q).exp();
    let w1 = pre * table.prob(n);
    let w = if n == 0 { 0.0 } else { pre * table.prob(n + 1) / n as f64 };
    SizedPartition { l, n, w1, w }
}

/// A positive value with a certified relative error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certified {
    pub ln_value: f64,
    pub rel_error: f64,
}

/// `W^(ℓ) = ½ h↓₁(ℓ) c^{ℓ+1} E[1/(τ_{-ℓ-1} - 1)]` with the horizon remainder bounded by `1/n_max`.
pub fn w_total(
    table: &FirstPassageTable,
    c_q: f64,
    l: u64,
    budget: f64,
) -> Result<Certified, OracleError> {
    assert_eq!(table.k, l + 1, "table depth must be l+1");
    if l == 0 {
        return Ok(Certified {
            ln_value: 0.0,
            rel_error: 0.0,
        });
    }
    let mut e = 0.0;
    for n in (2..=table.n_max).rev() {
        e += table.prob(n) / (n - 1) as f64;
    }
    let half_width = table.tail_mass / (2.0 * table.n_max as f64);
    let mid = e + half_width;
    let rel = half_width / mid;
    if rel > budget {
        return Err(OracleError::Horizon {
            n_max: table.n_max,
            error: rel,
            budget,
        });
    }
    let lf = l as f64;
    let ln_pre = -std::f64::consts::LN_2
        + ln_central_binomial(l)
        + (lf / (2.0 * (lf + 1.0))).ln()
        + (lf + 1.0) * c_q.ln();
    Ok(Certified {
        ln_value: ln_pre + mid.ln(),
        rel_error: rel,
    })
}

/// `ln W^(k) = ln ν(-k-1) + (k+1) ln c - ln 2` for `k < K`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartitionTable {
    pub c_q: f64,
    pub ln_w: Vec<f64>,
}

impl PartitionTable {
    pub fn from_law(law: &DisplacementLaw) -> Self {
        let c = 2.0 / law.pmf(-1);
        let ln_w = (0..law.k_table())
            .map(|k| law.pmf(-(k as i64) - 1).ln() + (k + 1) as f64 * c.ln() - std::f64::consts::LN_2)
            .collect();
        Self { c_q: c, ln_w }
    }

    pub fn w(&self, k: u64) -> f64 {
        self.ln_w[k as usize].exp()
    }
}

/// Row sum of the untargeted peeling kernel from a hole of half-perimeter `m`, minus one.
pub fn tutte_row_defect(law: &DisplacementLaw, m: u64) -> f64 {
    let denom = law.pmf(-(m as i64) - 1);
    let kk = law.k_table();
    let mut c_part = 0.0;
    for j in (0..=kk).rev() {
        let v = law.pmf(j as i64);
        if v > 0.0 {
            c_part += v * law.pmf(-(m as i64) - 1 - j as i64);
        }
    }
    if !matches!(law.pos_tail(), SideTail::None) {
        let mf = m as f64;
        c_part += smooth_tail_sum(
            |x| law.pos_tail().pmf(x) * law.neg_tail().pmf(mf + 1.0 + x),
            (kk + 1) as f64,
        );
    }
    let mut g_part = 0.0;
    for i in 0..m {
        g_part += law.pmf(-(i as i64) - 1) * law.pmf(-((m - 1 - i) as i64) - 1);
    }
    (c_part + 0.5 * g_part) / denom - 1.0
}

/// Which chain a DP oracle propagates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    /// The ν-walk killed on leaving `[1, ∞)`.
    Killed,
    /// A Doob transform.
    Doob(Harmonic),
}

/// Distribution of the chain after `n` steps, on states `1..=m_max`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WalkDistribution {
    pub transform: Transform,
    pub start: u64,
    pub n: u64,
    pub m_max: u64,
    /// `probs[m]` for `m ∈ 1..=m_max`; index 0 unused.
    pub probs: Vec<f64>,
    /// Mass absorbed (death or killing) by time `n`.
    pub absorbed: f64,
    /// Mass that left `[1, m_max]` upwards and was dropped.
    pub escaped: f64,
}

struct DpKernel<'a> {
    law: &'a DisplacementLaw,
    transform: Transform,
    m_max: u64,
    h: Vec<f64>,
}

impl<'a> DpKernel<'a> {
    fn new(law: &'a DisplacementLaw, transform: Transform, m_max: u64) -> Self {
        let h = (0..=m_max as i64)
            .map(|m| match transform {
                Transform::Killed => 1.0,
                Transform::Doob(kind) => kind.eval(m),
            })
            .collect();
        Self {
            law,
            transform,
            m_max,
            h,
        }
    }

    fn death(&self, m: u64) -> f64 {
        let mi = m as i64;
        match self.transform {
            Transform::Killed => self.law.lower(m),
            Transform::Doob(Harmonic::Up) => 0.0,
            Transform::Doob(Harmonic::Down) => self.law.pmf(-mi) / self.h[m as usize],
            Transform::Doob(Harmonic::DownP(p)) => {
                self.law.pmf(-mi - p as i64) / self.h[m as usize]
            }
        }
    }

    fn step(&self, cur: &[f64], next: &mut [f64]) -> (f64, f64) {
        next.iter_mut().for_each(|v| *v = 0.0);
        let mm = self.m_max as usize;
        let mut absorbed = 0.0;
        let mut escaped = 0.0;
        for m in 1..=mm {
            let w = cur[m];
            if w == 0.0 {
                continue;
            }
            let inv_h = 1.0 / self.h[m];
            let mut inside = 0.0;
            for j in 1..=mm {
                let p = self.law.pmf(j as i64 - m as i64) * self.h[j] * inv_h;
                inside += p;
                next[j] += w * p;
            }
            let d = self.death(m as u64);
            absorbed += w * d;
            let out = match self.transform {
                Transform::Killed => self.law.upper((mm - m + 1) as u64),
                Transform::Doob(_) => (1.0 - inside - d).max(0.0),
            };
            escaped += w * out;
        }
        (absorbed, escaped)
    }
}

/// Run the DP and return the distribution at every time `0..=n`.
pub fn dp_history(
    law: &DisplacementLaw,
    transform: Transform,
    start: u64,
    n: u64,
    m_max: u64,
) -> Vec<WalkDistribution> {
    let kernel = DpKernel::new(law, transform, m_max);
    let mut cur = vec![0.0; m_max as usize + 1];
    cur[start as usize] = 1.0;
    let mut next = cur.clone();
    let mut absorbed = 0.0;
    let mut escaped = 0.0;
    let snapshot = |probs: &[f64], t: u64, absorbed: f64, escaped: f64| WalkDistribution {
        transform,
        start,
        n: t,
        m_max,
        probs: probs.to_vec(),
        absorbed,
        escaped,
    };
    let mut out = vec![snapshot(&cur, 0, 0.0, 0.0)];
    for t in 1..=n {
        let (a, e) = kernel.step(&cur, &mut next);
        absorbed += a;
        escaped += e;
        std::mem::swap(&mut cur, &mut next);
        out.push(snapshot(&cur, t, absorbed, escaped));
    }
    out
}

/// Distribution of the chain at time `n`, doubling the truncation until the escape
/// mass drops below `tol` or `m_cap` is reached.
pub fn dp_walk_oracle(
    law: &DisplacementLaw,
    transform: Transform,
    start: u64,
    n: u64,
    tol: f64,
    m_cap: u64,
) -> Result<WalkDistribution, OracleError> {
    if start == 0 {
        return Err(OracleError::Invalid("start must be ≥ 1".into()));
    }
    let mut m_max = (4 * (start + n)).max(64).min(m_cap.max(start + 1));
    loop {
        let dist = dp_history(law, transform, start, n, m_max)
            .pop()
            .expect("non-empty history");
        if dist.escaped <= tol {
            return Ok(dist);
        }
        if m_max >= m_cap {
            return Err(OracleError::Truncation {
                m_max,
                escape: dist.escaped,
                tol,
            });
        }
        m_max = (2 * m_max).min(m_cap);
    }
}

/// Both sides of `P_ℓ(τ > n) = E_∞[(1+ℓ)/(P_∞(n)+ℓ)]` started from 1.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CouplingCheck {
    pub l: u64,
    pub n: u64,
    pub survival: f64,
    pub expectation: f64,
    /// Upper bound on the truncation error of the comparison.
    pub truncation_bound: f64,
}

impl CouplingCheck {
    pub fn defect(&self) -> f64 {
        (self.survival - self.expectation).abs()
    }
}

pub fn coupling_dp(law: &DisplacementLaw, l: u64, n: u64, m_max: u64) -> CouplingCheck {
    let dl = dp_history(law, Transform::Doob(Harmonic::DownP(l)), 1, n, m_max)
        .pop()
        .expect("history");
    let du = dp_history(law, Transform::Doob(Harmonic::Up), 1, n, m_max)
        .pop()
        .expect("history");
    let lf = l as f64;
    let expectation: f64 = (1..=m_max as usize)
        .map(|m| du.probs[m] * (1.0 + lf) / (m as f64 + lf))
        .sum();
    CouplingCheck {
        l,
        n,
        survival: 1.0 - dl.absorbed,
        expectation,
        truncation_bound: dl.escaped + du.escaped,
    }
}

/// One entry of the death decomposition `½(h↓(ℓ)/(ℓ+1)) P_ℓ(τ=n, P(n-1)=x) = P₁(S stays ≥1, S_{n-1}=x) ν(-ℓ-x)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DeathDecomposition {
    pub l: u64,
    pub n: u64,
    pub x: u64,
    pub lhs: f64,
    pub rhs: f64,
}

pub fn death_decomposition_dp(
    law: &DisplacementLaw,
    l: u64,
    n_max: u64,
    x_max: u64,
    m_max: u64,
) -> Vec<DeathDecomposition> {
    let hl = Harmonic::DownP(l);
    let cond = dp_history(law, Transform::Doob(hl), 1, n_max - 1, m_max);
    let free = dp_history(law, Transform::Killed, 1, n_max - 1, m_max);
    let pref = 0.5 * crate::harmonic::h_down(l as i64) / (l as f64 + 1.0);
    let mut out = Vec::new();
    for n in 1..=n_max {
        for x in 1..=x_max.min(m_max) {
            let jump = law.pmf(-(l as i64) - x as i64);
            let lhs = pref * cond[(n - 1) as usize].probs[x as usize] * jump / hl.eval(x as i64);
            let rhs = free[(n - 1) as usize].probs[x as usize] * jump;
            out.push(DeathDecomposition { l, n, x, lhs, rhs });
        }
    }
    out
}
