//! Exact samplers for the ν-walk under Doob transforms, the survival coupling and
//! lifetime statistics.

use crate::harmonic::{h_down, Harmonic};
use crate::kernel::{DisplacementLaw, KernelError};
use crate::stats::{dkw_epsilon, ks_statistic};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};
use thiserror::Error;

/// Row-sum tolerance for the per-state check.
pub const ROW_TOL: f64 = 1e-10;
/// States below this bound have their row sum verified on first use.
pub const ROW_CHECK_LIMIT: u64 = 1024;
const STATE_CAP: f64 = 4.611_686_018_427_388e18;
/// `ln h` is memoised on `[0, LN_CACHE)`.
const LN_CACHE: u64 = 1 << 20;
/// States below this bound keep their envelope constants after first use.
pub const STATE_CACHE: u64 = 1 << 18;

const CHUNK_BITS: u64 = 12;

/// A band `[lo, hi]` of landing states with a ν-proposal.
#[derive(Clone, Copy, Debug, Default)]
struct Band {
    lo: i64,
    hi: i64,
    /// `ln sup h(j)/h(m)` over the band.
    ln_r: f64,
    /// Acceptance probability that needs no evaluation of `h`.
    squeeze: f64,
    z: f64,
}

#[derive(Clone, Copy, Debug)]
struct Envelope {
    lnh_m: f64,
    death: f64,
    bands: [Band; 4],
    far_lo: i64,
    ln_env: f64,
    total: f64,
}

#[derive(Debug, Error)]
pub enum WalkError {
    #[error("row sum {sum} at state {m} differs from 1 by more than {tol:e}")]
    RowSum { m: u64, sum: f64, tol: f64 },
    #[error("start state must be ≥ 1")]
    InvalidStart,
    #[error("no finished paths to summarize")]
    EmptyInput,
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Outcome of one transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    /// Displacement `k`; the new state `m + k` is ≥ 1.
    Move(i64),
    /// Terminal jump to the absorbing point.
    Death,
}

/// Transition kernel `ν(k) h(m+k)/h(m)` of a Doob transform.
pub struct TiltedKernel {
    law: Arc<DisplacementLaw>,
    kind: Harmonic,
    ln_cache: Vec<OnceLock<Box<[f64]>>>,
    checked: Vec<AtomicU64>,
    ln_amp: f64,
    beta: f64,
    envelopes: Vec<OnceLock<Box<[OnceLock<Envelope>]>>>,
    /// `h(j)` for `0 ≤ j ≤ K + ROW_CHECK_LIMIT`.
    row_values: OnceLock<Vec<f64>>,
}

impl std::fmt::Debug for TiltedKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TiltedKernel").field("kind", &self.kind).finish()
    }
}

impl TiltedKernel {
    pub fn new(law: Arc<DisplacementLaw>, kind: Harmonic) -> Self {
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let (amp, beta) = match kind {
            Harmonic::Up => (2.0 / sqrt_pi, 0.5),
            Harmonic::Down => (1.0 / sqrt_pi, -0.5),
            Harmonic::DownP(p) => (h_down(p as i64) / sqrt_pi, -0.5),
        };
        let words = ROW_CHECK_LIMIT.div_ceil(64) as usize;
        Self {
            law,
            kind,
            ln_cache: (0..LN_CACHE >> CHUNK_BITS).map(|_| OnceLock::new()).collect(),
            checked: (0..words).map(|_| AtomicU64::new(0)).collect(),
            ln_amp: amp.ln(),
            beta,
            envelopes: (0..STATE_CACHE >> CHUNK_BITS).map(|_| OnceLock::new()).collect(),
            row_values: OnceLock::new(),
        }
    }

    pub fn kind(&self) -> Harmonic {
        self.kind
    }

    pub fn law(&self) -> &DisplacementLaw {
        &self.law
    }

    pub fn law_arc(&self) -> &Arc<DisplacementLaw> {
        &self.law
    }

    #[inline]
    pub fn ln_h(&self, l: i64) -> f64 {
        match self.ln_cache.get((l as u64 >> CHUNK_BITS) as usize) {
            Some(chunk) if l >= 0 => {
                let cells = chunk.get_or_init(|| {
                    let base = (l as u64 >> CHUNK_BITS) << CHUNK_BITS;
                    (base..base + (1 << CHUNK_BITS))
                        .map(|j| self.kind.ln(j as i64))
                        .collect()
                });
                cells[(l as u64 & ((1 << CHUNK_BITS) - 1)) as usize]
            }
            _ => self.kind.ln(l),
        }
    }

    /// Probability of moving from `m` to `m + k ≥ 1`.
    pub fn prob(&self, m: u64, k: i64) -> f64 {
        let j = m as i64 + k;
        if j < 1 {
            return 0.0;
        }
        let v = self.law.pmf(k);
        if v == 0.0 {
            return 0.0;
        }
        v * (self.ln_h(j) - self.ln_h(m as i64)).exp()
    }

    /// Probability of the terminal jump from `m`.
    pub fn death_prob(&self, m: u64) -> f64 {
        let mi = m as i64;
        match self.kind {
            Harmonic::Up => 0.0,
            Harmonic::Down => self.law.pmf(-mi) * (-self.ln_h(mi)).exp(),
            Harmonic::DownP(p) => self.law.pmf(-mi - p as i64) * (-self.ln_h(mi)).exp(),
        }
    }

    /// Total mass of the row at `m`, death included.
    pub fn row_sum(&self, m: u64) -> f64 {
        let kind = self.kind;
        let defect = if m < ROW_CHECK_LIMIT {
            let vals = self.row_values.get_or_init(|| {
                (0..=(self.law.k_table() + ROW_CHECK_LIMIT) as i64)
                    .map(|j| kind.eval(j))
                    .collect()
            });
            self.law.harmonic_defect_by(kind, m, |j| match vals.get(j as usize) {
                Some(&v) if j >= 0 => v,
                _ => kind.eval(j),
            })
        } else {
            self.law.harmonic_defect(kind, m)
        };
        1.0 + defect / self.ln_h(m as i64).exp()
    }

    /// Verify the row at `m` once per kernel (states below [`ROW_CHECK_LIMIT`]).
    pub fn check_row(&self, m: u64) -> Result<(), WalkError> {
        if m >= ROW_CHECK_LIMIT {
            return Ok(());
        }
        let (w, b) = ((m / 64) as usize, 1u64 << (m % 64));
        if self.checked[w].load(Ordering::Relaxed) & b != 0 {
            return Ok(());
        }
        let sum = self.row_sum(m);
        if (sum - 1.0).abs() > ROW_TOL {
            return Err(WalkError::RowSum {
                m,
                sum,
                tol: ROW_TOL,
            });
        }
        self.checked[w].fetch_or(b, Ordering::Relaxed);
        Ok(())
    }

    fn band(&self, m: i64, lnh_m: f64, lo: i64, hi: i64, ends: (f64, f64)) -> Band {
        if lo > hi {
            return Band {
                lo,
                hi,
                ..Band::default()
            };
        }
        let mut sup = ends.0.max(ends.1);
        if let Harmonic::DownP(p) = self.kind {
            let p = p as i64;
            for c in (p - 2).max(lo)..=(p + 2).min(hi) {
                sup = sup.max(self.ln_h(c));
            }
        }
        let ln_r = sup - lnh_m;
        let ln_inf = ends.0.min(ends.1) - lnh_m;
        Band {
            lo,
            hi,
            ln_r,
            squeeze: (ln_inf - ln_r).exp(),
            z: ln_r.exp() * self.law.mass_between(lo - m, hi - m),
        }
    }

    fn envelope(&self, m: u64) -> Envelope {
        let mi = m as i64;
        let lnh_m = self.ln_h(mi);
        let death = self.death_prob(m);
        let a = ((mi + 1) / 2).max(1);
        let c0 = mi - mi / 8;
        let c1 = mi + mi / 8;
        let far_lo = 4 * mi;
        let h = |j: i64| self.ln_h(j);
        let (ha, hc0, hc1) = (h(a), h(c0), h(c1));
        let bands = [
            self.band(mi, lnh_m, c0, c1, (hc0, hc1)),
            self.band(mi, lnh_m, a, c0 - 1, (ha, h(c0 - 1))),
            self.band(mi, lnh_m, c1 + 1, far_lo - 1, (h(c1 + 1), h(far_lo - 1))),
            self.band(mi, lnh_m, 1, a - 1, (h(1), h(a - 1))),
        ];
        let jf = far_lo as f64;
        let s = self.law.pos_sq_sup(3 * m);
        let ln_env = if s > 0.0 {
            (16.0 / 9.0 * s).ln() + self.ln_amp - lnh_m + 2.5 * (1.0 / jf).ln_1p()
        } else {
            f64::NEG_INFINITY
        };
        let z_far = (ln_env + (self.beta - 1.0) * jf.ln()).exp() / (1.0 - self.beta);
        let total = bands.iter().map(|b| b.z).sum::<f64>() + z_far;
        Envelope {
            lnh_m,
            death,
            bands,
            far_lo,
            ln_env,

            total,
        }
    }

    #[inline]
    fn envelope_cached(&self, m: u64) -> Envelope {
        match self.envelopes.get((m >> CHUNK_BITS) as usize) {
            Some(chunk) => {
                let cells = chunk.get_or_init(|| {
                    (0..1u64 << CHUNK_BITS).map(|_| OnceLock::new()).collect()
                });
                *cells[(m & ((1 << CHUNK_BITS) - 1)) as usize].get_or_init(|| self.envelope(m))
            }
            None => self.envelope(m),
        }
    }

    /// Sample one transition from `m ≥ 1`.
    pub fn sample<R: Rng + ?Sized>(&self, m: u64, rng: &mut R) -> Result<Step, WalkError> {
        self.check_row(m)?;
        let env = self.envelope_cached(m);
        if env.death > 0.0 && rng.gen::<f64>() < env.death {
            return Ok(Step::Death);
        }
        Ok(Step::Move(self.sample_with(m, &env, rng)))
    }

    /// Sample a displacement from `m` conditionally on no death.
    pub fn sample_move<R: Rng + ?Sized>(&self, m: u64, rng: &mut R) -> i64 {
        let env = self.envelope_cached(m);
        self.sample_with(m, &env, rng)
    }

    fn sample_with<R: Rng + ?Sized>(&self, m: u64, env: &Envelope, rng: &mut R) -> i64 {
        let mi = m as i64;
        let beta = self.beta;
        'attempt: loop {
            let mut u = rng.gen::<f64>() * env.total;
            for band in &env.bands {
                if u < band.z {
                    let k = self.law.sample_between(band.lo - mi, band.hi - mi, rng.gen());
                    let v: f64 = rng.gen();
                    if v <= band.squeeze {
                        return k;
                    }
                    let acc = self.ln_h(mi + k) - env.lnh_m - band.ln_r;
                    if v.ln() <= acc {
                        return k;
                    }
                    continue 'attempt;
                }
                u -= band.z;
            }
            let jf = env.far_lo as f64;
            let v: f64 = 1.0 - rng.gen::<f64>();
            let x = jf * v.powf(-1.0 / (1.0 - beta));
            if !(x < STATE_CAP) {
                continue;
            }
            let j = x.floor();
            let ji = j as i64;
            let w = self.law.pmf(ji - mi);
            if w == 0.0 {
                continue;
            }
            let ln_target = w.ln() + self.ln_h(ji) - env.lnh_m;
            let cell = -((beta - 1.0) * (1.0 / j).ln_1p()).exp_m1() / (1.0 - beta);
            let ln_prop = env.ln_env + (beta - 1.0) * j.ln() + cell.ln();
            if rng.gen::<f64>().ln() <= ln_target - ln_prop {
                return ji - mi;
            }
        }
    }
}

/// A sampled trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkPath {
    pub transform: Harmonic,
    pub start: u64,
    /// States visited, starting with `start`; the absorbing point is appended on death.
    pub steps: Vec<i64>,
    pub tau: Option<u64>,
    /// Last positive state before the terminal jump.
    pub final_jump_from: Option<u64>,
    /// False when the step budget ran out first.
    pub finished: bool,
}

impl WalkPath {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,state\n");
        for (i, x) in self.steps.iter().enumerate() {
            s.push_str(&format!("{i},{x}\n"));
        }
        s
    }
}

/// Summary of a path without its trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub tau: Option<u64>,
    pub final_jump_from: Option<u64>,
    pub last_state: u64,
    pub steps: u64,
}

/// Run the chain from `start` for at most `max_steps`, calling `visit(n, state)` for every
/// state before absorption (including the start).
pub fn run_walk<R: Rng + ?Sized>(
    kernel: &TiltedKernel,
    start: u64,
    max_steps: u64,
    rng: &mut R,
    mut visit: impl FnMut(u64, u64),
) -> Result<PathSummary, WalkError> {
    if start == 0 {
        return Err(WalkError::InvalidStart);
    }
    let mut m = start;
    for n in 0..max_steps {
        visit(n, m);
        match kernel.sample(m, rng)? {
            Step::Death => {
                return Ok(PathSummary {
                    tau: Some(n + 1),
                    final_jump_from: Some(m),
                    last_state: m,
                    steps: n + 1,
                })
            }
            Step::Move(k) => m = (m as i64 + k) as u64,
        }
    }
    Ok(PathSummary {
        tau: None,
        final_jump_from: None,
        last_state: m,
        steps: max_steps,
    })
}

/// Sample a recorded path.
pub fn sample_path<R: Rng + ?Sized>(
    kernel: &TiltedKernel,
    start: u64,
    max_steps: u64,
    rng: &mut R,
) -> Result<WalkPath, WalkError> {
    let mut steps = Vec::new();
    let s = run_walk(kernel, start, max_steps, rng, |_, m| steps.push(m as i64))?;
    if s.tau.is_some() {
        steps.push(kernel.kind().absorbing().unwrap_or(0));
    } else {
        steps.push(s.last_state as i64);
    }
    Ok(WalkPath {
        transform: kernel.kind(),
        start,
        steps,
        tau: s.tau,
        final_jump_from: s.final_jump_from,
        finished: s.tau.is_some() || kernel.kind() == Harmonic::Up,
    })
}

/// `P_∞` run to time `n` together with the survival indicator of the coupling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledPair {
    pub n: u64,
    pub l: u64,
    pub path_infty: WalkPath,
    pub survived: bool,
    /// `(1+ℓ)/(P_∞(n)+ℓ)`.
    pub survival_prob: f64,
}

impl CoupledPair {
    /// The conditioned path on `[0, n]`, defined only on survival.
    pub fn path_ell(&self) -> Option<&WalkPath> {
        self.survived.then_some(&self.path_infty)
    }
}

/// Sample the coupling from state 1; `up` must be the `h↑` kernel.
pub fn sample_coupled<R: Rng + ?Sized>(
    up: &TiltedKernel,
    n: u64,
    l: u64,
    rng: &mut R,
) -> Result<CoupledPair, WalkError> {
    assert_eq!(up.kind(), Harmonic::Up, "coupling runs under h↑");
    let path = sample_path(up, 1, n, rng)?;
    let last = *path.steps.last().expect("non-empty") as f64;
    let lf = l as f64;
    let survival_prob = (1.0 + lf) / (last + lf);
    let survived = rng.gen::<f64>() < survival_prob;
    Ok(CoupledPair {
        n,
        l,
        path_infty: path,
        survived,
        survival_prob,
    })
}

/// `F(u) = (2/π)(√u/(1+u) + arctan √u)`, limit law of `P_ℓ(τ-1)/ℓ` for type 2.
pub fn final_perimeter_cdf(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u.is_infinite() {
        return 1.0;
    }
    let r = u.sqrt();
    std::f64::consts::FRAC_2_PI * (r / (1.0 + u) + r.atan())
}

/// Density of [`final_perimeter_cdf`].
pub fn final_perimeter_density(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        std::f64::consts::FRAC_2_PI / (u.sqrt() * (1.0 + u).powi(2))
    }
}

/// Empirical law of `(τ/ℓ, P(τ-1)/ℓ)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LifetimeStats {
    pub l: u64,
    pub n: usize,
    pub tau_scaled: Vec<f64>,
    pub final_scaled: Vec<f64>,
    /// Joint histogram on `[0, tau_max) × [0, u_max)` with `bins × bins` cells.
    pub histogram: Vec<Vec<u64>>,
    pub tau_max: f64,
    pub u_max: f64,
    pub ks_final: f64,
    /// 95% DKW half-width.
    pub dkw: f64,
}

pub fn lifetime_statistics(l: u64, paths: &[PathSummary], bins: usize) -> Result<LifetimeStats, WalkError> {
    let done: Vec<&PathSummary> = paths.iter().filter(|p| p.tau.is_some()).collect();
    if done.is_empty() {
        return Err(WalkError::EmptyInput);
    }
    let lf = l as f64;
    let tau_scaled: Vec<f64> = done.iter().map(|p| p.tau.unwrap() as f64 / lf).collect();
    let final_scaled: Vec<f64> = done
        .iter()
        .map(|p| p.final_jump_from.unwrap() as f64 / lf)
        .collect();
    let (tau_max, u_max) = (10.0, 10.0);
    let mut histogram = vec![vec![0u64; bins]; bins];
    for (t, u) in tau_scaled.iter().zip(&final_scaled) {
        if *t < tau_max && *u < u_max {
            let i = (t / tau_max * bins as f64) as usize;
            let j = (u / u_max * bins as f64) as usize;
            histogram[i.min(bins - 1)][j.min(bins - 1)] += 1;
        }
    }
    let mut sorted = final_scaled.clone();
    let ks_final = ks_statistic(&mut sorted, final_perimeter_cdf);
    Ok(LifetimeStats {
        l,
        n: done.len(),
        tau_scaled,
        final_scaled,
        histogram,
        tau_max,
        u_max,
        ks_final,
        dkw: dkw_epsilon(done.len(), 0.05),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{dp_history, Transform};
    use crate::parallel::stream;

    fn quad() -> Arc<DisplacementLaw> {
        Arc::new(DisplacementLaw::quadrangulation(512).unwrap())
    }

    fn closed() -> Arc<DisplacementLaw> {
        Arc::new(DisplacementLaw::cauchy_closed_form(0.0, 4096).unwrap())
    }

    #[test]
    fn fixture_one_step() {
        let up = TiltedKernel::new(quad(), Harmonic::Up);
        assert!((up.prob(1, 1) - 1.0).abs() < 1e-14);
        let die = TiltedKernel::new(quad(), Harmonic::DownP(1));
        assert!((die.death_prob(1) - 1.0 / 3.0).abs() < 1e-14);
        let mut rng = stream(1, 1, 0);
        for _ in 0..100 {
            assert_eq!(up.sample(1, &mut rng).unwrap(), Step::Move(1));
        }
    }

    #[test]
    fn downp_mode_is_local() {
        for p in 1..150u64 {
            let k = TiltedKernel::new(quad(), Harmonic::DownP(p));
            let arg = (1..(10 * p as i64 + 20))
                .max_by(|a, b| k.ln_h(*a).total_cmp(&k.ln_h(*b)))
                .unwrap();
            assert!((arg - p as i64).abs() <= 2, "p={p} mode={arg}");
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let law = closed();
        for kind in [Harmonic::Up, Harmonic::Down, Harmonic::DownP(7)] {
            let k = TiltedKernel::new(law.clone(), kind);
            for m in [1u64, 2, 3, 10, 100, 1000, 5000] {
                assert!((k.row_sum(m) - 1.0).abs() < 1e-10, "{kind:?} m={m}");
            }
        }
    }

    fn empirical_vs_exact(kernel: &TiltedKernel, m: u64, draws: u64) {
        let mut counts = std::collections::BTreeMap::<i64, u64>::new();
        let mut deaths = 0u64;
        let mut rng = stream(11, m, 0);
        for _ in 0..draws {
            match kernel.sample(m, &mut rng).unwrap() {
                Step::Death => deaths += 1,
                Step::Move(k) => *counts.entry(k).or_default() += 1,
            }
        }
        let n = draws as f64;
        let check = |obs: u64, p: f64, what: &str| {
            let sd = (n * p * (1.0 - p)).sqrt().max(1.0);
            assert!((obs as f64 - n * p).abs() < 5.0 * sd, "{what}: obs {obs} exp {}", n * p);
        };
        check(deaths, kernel.death_prob(m), "death");
        let mi = m as i64;
        for k in (1 - mi)..=(4 * mi) {
            check(*counts.get(&k).unwrap_or(&0), kernel.prob(m, k), &format!("k={k}"));
        }
        let far: u64 = counts.range((4 * mi + 1)..).map(|x| x.1).sum();
        let far_p = 1.0 - kernel.death_prob(m) - ((1 - mi)..=(4 * mi)).map(|k| kernel.prob(m, k)).sum::<f64>();
        check(far, far_p.max(0.0), "far");
    }

    #[test]
    fn sampler_matches_kernel() {
        let law = closed();
        for kind in [Harmonic::Up, Harmonic::Down, Harmonic::DownP(5)] {
            let k = TiltedKernel::new(law.clone(), kind);
            for m in [1u64, 3, 12] {
                empirical_vs_exact(&k, m, 200_000);
            }
        }
    }

    #[test]
    fn kernel_propagation_matches_dp() {
        let law = quad();
        for l in 1..=5u64 {
            let kernel = TiltedKernel::new(law.clone(), Harmonic::DownP(l));
            let m_max = 64usize;
            let mut cur = vec![0.0; m_max + 1];
            cur[1] = 1.0;
            for _ in 0..10 {
                let mut next = vec![0.0; m_max + 1];
                for m in 1..=m_max {
                    if cur[m] == 0.0 {
                        continue;
                    }
                    for j in 1..=m_max {
                        next[j] += cur[m] * kernel.prob(m as u64, j as i64 - m as i64);
                    }
                }
                cur = next;
            }
            let dp = dp_history(&law, Transform::Doob(Harmonic::DownP(l)), 1, 10, m_max as u64);
            let last = dp.last().unwrap();
            for m in 1..=m_max {
                assert!((cur[m] - last.probs[m]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn coupling_fixture_example() {
        let up = TiltedKernel::new(quad(), Harmonic::Up);
        let mut rng = stream(3, 3, 3);
        let c = sample_coupled(&up, 1, 1, &mut rng).unwrap();
        assert_eq!(c.path_infty.steps, vec![1, 2]);
        assert!((c.survival_prob - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn final_cdf_values() {
        assert!((final_perimeter_cdf(1.0) - (0.5 + 0.25 * std::f64::consts::PI) * std::f64::consts::FRAC_2_PI).abs() < 1e-15);
        assert!((final_perimeter_cdf(1e12) - 1.0).abs() < 1e-5);
        // Trapezoid on u = s² integrates the density.
        let n = 200_000;
        let smax = 40.0;
        let mut acc = 0.0;
        for i in 0..n {
            let s = (i as f64 + 0.5) * smax / n as f64;
            acc += final_perimeter_density(s * s) * 2.0 * s * smax / n as f64;
        }
        assert!((acc - final_perimeter_cdf(smax * smax)).abs() < 1e-6);
    }
}
