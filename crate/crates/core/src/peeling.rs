//! Filled-in peeling explorations driven by the perimeter kernels: uniform peeling with
//! exponential clocks, peeling by layers with the `(P, D, H)` chain, and the martingales
//! of the perimeter process.

use crate::harmonic::Harmonic;
use crate::kernel::SideTail;
use crate::special::smooth_tail_sum;
use crate::walks::{Step, TiltedKernel, WalkError};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PeelError {
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error("parameter out of range: {0}")]
    Parameter(String),
    #[error("cannot build interpolation: {0}")]
    Construction(String),
    #[error("exploration is no longer alive")]
    Dead,
}

/// What the exploration is heading for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    /// A face of half-degree `p`.
    Face(u64),
    Vertex,
    Infinity,
}

impl Target {
    pub fn harmonic(self) -> Harmonic {
        match self {
            Target::Face(p) => Harmonic::DownP(p),
            Target::Vertex => Harmonic::Down,
            Target::Infinity => Harmonic::Up,
        }
    }

    pub fn from_harmonic(h: Harmonic) -> Self {
        match h {
            Harmonic::DownP(p) => Target::Face(p),
            Harmonic::Down => Target::Vertex,
            Harmonic::Up => Target::Infinity,
        }
    }
}

/// One peeling step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PeelEvent {
    /// New face of half-degree `k ≥ 1`; the perimeter grows by `k - 1`.
    C(u64),
    /// Peeled edge glued to the left; perimeter drops by `k`, a hole of half-perimeter `k - 1`
    /// is filled.
    GLeft(u64),
    /// Same on the right.
    GRight(u64),
    /// Target face discovered, or the last hole swallowed around the target vertex.
    Stop,
}

impl PeelEvent {
    /// Half-perimeter of the filled hole.
    pub fn hole(self) -> Option<u64> {
        match self {
            PeelEvent::GLeft(k) | PeelEvent::GRight(k) => Some(k - 1),
            _ => None,
        }
    }

    /// Perimeter displacement, `None` for a stop.
    pub fn step(self) -> Option<i64> {
        match self {
            PeelEvent::C(k) => Some(k as i64 - 1),
            PeelEvent::GLeft(k) | PeelEvent::GRight(k) => Some(-(k as i64)),
            PeelEvent::Stop => None,
        }
    }

    pub fn code(self) -> String {
        match self {
            PeelEvent::C(k) => format!("C{k}"),
            PeelEvent::GLeft(k) => format!("GL{k}"),
            PeelEvent::GRight(k) => format!("GR{k}"),
            PeelEvent::Stop => "STOP".into(),
        }
    }
}

/// Layer state after an event from `(p, d, h)` landing at half-perimeter `p_new`.
pub fn layers_update(p: u64, d: u64, h: u64, event: PeelEvent, p_new: u64) -> (u64, u64) {
    let (d, p) = (d as i64, p as i64);
    let tentative = match event {
        PeelEvent::C(_) => d - 1,
        PeelEvent::GRight(k) => d - 2 * k as i64,
        PeelEvent::GLeft(k) => (d - 1).min(2 * (p - k as i64)),
        PeelEvent::Stop => return (d as u64, h),
    };
    if tentative <= 0 {
        (2 * p_new, h + 1)
    } else {
        (tentative as u64, h)
    }
}

/// State of a filled-in exploration; uniform clocks and layers are tracked together.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationState {
    pub p: u64,
    pub target: Target,
    pub n: u64,
    /// Accumulated exponential clocks `Σ E_i/(2P(i))`.
    pub fpp_time: f64,
    /// `Σ 1/(2P(i))`.
    pub rb_mean: f64,
    /// `Σ 1/(2P(i))²`.
    pub rb_var: f64,
    /// Boundary edges at the lower height.
    pub d: u64,
    pub h: u64,
    pub alive: bool,
}

impl ExplorationState {
    /// Exploration from the root edge (half-perimeter 1, both edges at height 0).
    pub fn new(target: Target) -> Self {
        Self::with_perimeter(target, 1)
    }

    pub fn with_perimeter(target: Target, p: u64) -> Self {
        Self {
            p,
            target,
            n: 0,
            fpp_time: 0.0,
            rb_mean: 0.0,
            rb_var: 0.0,
            d: 2 * p,
            h: 0,
            alive: true,
        }
    }

    /// Height of the target for the layers algorithm once stopped.
    pub fn graph_distance(&self) -> Option<u64> {
        (!self.alive).then_some(self.h + 1)
    }
}

/// Sample one event and update the state. `clocks` draws the exponential clock.
pub fn peel_step<R: Rng + ?Sized>(
    state: &mut ExplorationState,
    kernel: &TiltedKernel,
    rng: &mut R,
    clocks: bool,
) -> Result<PeelEvent, PeelError> {
    if !state.alive {
        return Err(PeelError::Dead);
    }
    let p = state.p;
    let rate = 1.0 / (2.0 * p as f64);
    if clocks {
        let e: f64 = Exp1.sample(rng);
        state.fpp_time += e * rate;
    }
    state.rb_mean += rate;
    state.rb_var += rate * rate;
    state.n += 1;
    let event = match kernel.sample(p, rng)? {
        Step::Death => PeelEvent::Stop,
        Step::Move(k) if k >= 0 => PeelEvent::C(k as u64 + 1),
        Step::Move(k) => {
            if rng.gen::<bool>() {
                PeelEvent::GLeft(k.unsigned_abs())
            } else {
                PeelEvent::GRight(k.unsigned_abs())
            }
        }
    };
    match event.step() {
        None => state.alive = false,
        Some(s) => {
            let p_new = (p as i64 + s) as u64;
            let (d, h) = layers_update(p, state.d, state.h, event, p_new);
            state.p = p_new;
            state.d = d;
            state.h = h;
        }
    }
    Ok(event)
}

/// One row of an exploration trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub n: u64,
    /// Half-perimeter; the absorbing point after a stop.
    pub p: i64,
    pub d: u64,
    pub h: u64,
    pub t: f64,
    /// Event leading into this row.
    pub event: Option<PeelEvent>,
}

pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut s = String::from("n,P,D,H,T,event\n");
    for r in rows {
        let ev = r.event.map(PeelEvent::code).unwrap_or_default();
        s.push_str(&format!("{},{},{},{},{},{}\n", r.n, r.p, r.d, r.h, r.t, ev));
    }
    s
}

/// Result of a complete exploration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exploration {
    /// Number of steps up to and including the stop.
    pub tau: Option<u64>,
    pub steps: u64,
    pub d_fpp: f64,
    pub rb_mean: f64,
    pub rb_var: f64,
    /// `H(τ-1) + 1`.
    pub d_gr: Option<u64>,
    /// Last half-perimeter before the stop (or at the budget).
    pub last_p: u64,
    pub trajectory: Vec<TrajectoryRow>,
}

impl Exploration {
    pub fn finished(&self) -> bool {
        self.tau.is_some()
    }
}

/// Run until the stop or `max_steps`; `record` keeps the trajectory.
pub fn run_exploration<R: Rng + ?Sized>(
    kernel: &TiltedKernel,
    start: u64,
    max_steps: u64,
    rng: &mut R,
    record: bool,
    clocks: bool,
) -> Result<Exploration, PeelError> {
    let target = Target::from_harmonic(kernel.kind());
    let mut st = ExplorationState::with_perimeter(target, start);
    let mut rows = Vec::new();
    let push = |rows: &mut Vec<TrajectoryRow>, st: &ExplorationState, ev: Option<PeelEvent>, p: i64| {
        rows.push(TrajectoryRow {
            n: st.n,
            p,
            d: st.d,
            h: st.h,
            t: st.fpp_time,
            event: ev,
        })
    };
    if record {
        push(&mut rows, &st, None, st.p as i64);
    }
    let mut last_p = st.p;
    while st.n < max_steps {
        last_p = st.p;
        let ev = peel_step(&mut st, kernel, rng, clocks)?;
        if record {
            let p = if st.alive {
                st.p as i64
            } else {
                kernel.kind().absorbing().unwrap_or(0)
            };
            push(&mut rows, &st, Some(ev), p);
        }
        if !st.alive {
            break;
        }
    }
    if st.alive {
        last_p = st.p;
    }
    Ok(Exploration {
        tau: (!st.alive).then_some(st.n),
        steps: st.n,
        d_fpp: st.fpp_time,
        rb_mean: st.rb_mean,
        rb_var: st.rb_var,
        d_gr: st.graph_distance(),
        last_p,
        trajectory: rows,
    })
}

/// Default step budget `50 ℓ`.
pub fn default_budget(l: u64) -> u64 {
    50 * l.max(1)
}

fn check_target(kernel: &TiltedKernel, l: u64) -> Result<(), PeelError> {
    if kernel.kind() != Harmonic::DownP(l) {
        return Err(PeelError::Parameter(format!(
            "kernel drives {:?}, expected a face target of half-degree {l}",
            kernel.kind()
        )));
    }
    Ok(())
}

/// Uniform peeling towards an `ℓ`-gon from the root edge, with exponential clocks.
pub fn run_uniform_fpp<R: Rng + ?Sized>(
    kernel: &TiltedKernel,
    l: u64,
    max_steps: u64,
    rng: &mut R,
    record: bool,
) -> Result<Exploration, PeelError> {
    check_target(kernel, l)?;
    run_exploration(kernel, 1, max_steps, rng, record, true)
}

/// Peeling by layers towards an `ℓ`-gon from the root edge.
pub fn run_layers<R: Rng + ?Sized>(
    kernel: &TiltedKernel,
    l: u64,
    max_steps: u64,
    rng: &mut R,
    record: bool,
) -> Result<Exploration, PeelError> {
    check_target(kernel, l)?;
    run_exploration(kernel, 1, max_steps, rng, record, false)
}

/// `C²` nonincreasing `f` on `[0, 1]` with `f(0) = 1`, `f(1) = 0`, flat ends, `|f'| ≤ 1 + ε`.
///
/// `-f'` is a smoothstep ramp of width `a` up to the plateau `s = 1 + ε/2`, with `a = 1 - 1/s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interpolation {
    pub eps: f64,
    pub plateau: f64,
    pub shoulder: f64,
}

/// Slope bound of an [`Interpolation`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeCertificate {
    pub grid_points: usize,
    pub grid_max_slope: f64,
    /// Analytic bound on `sup |f'|`.
    pub bound: f64,
    pub limit: f64,
    pub holds: bool,
}

impl Interpolation {
    pub fn new(eps: f64) -> Result<Self, PeelError> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(PeelError::Construction(format!("ε = {eps} outside (0, 1)")));
        }
        let plateau = 1.0 + eps / 2.0;
        let shoulder = 1.0 - 1.0 / plateau;
        if shoulder > 0.5 {
            return Err(PeelError::Construction("shoulders overlap".into()));
        }
        Ok(Self {
            eps,
            plateau,
            shoulder,
        })
    }

    /// `∫_0^y s S(t/a) dt` for `y ≤ a`.
    fn ramp_integral(&self, y: f64) -> f64 {
        let t = y / self.shoulder;
        self.plateau * self.shoulder * (t * t * t - 0.5 * t * t * t * t)
    }

    /// `f`, extended by 1 on `(-∞, 0]` and 0 on `[1, ∞)`.
    pub fn eval(&self, x: f64) -> f64 {
        let (s, a) = (self.plateau, self.shoulder);
        if x <= 0.0 {
            1.0
        } else if x >= 1.0 {
            0.0
        } else if x <= a {
            1.0 - self.ramp_integral(x)
        } else if x < 1.0 - a {
            1.0 - (s * a / 2.0 + s * (x - a))
        } else {
            self.ramp_integral(1.0 - x)
        }
    }

    /// `f'`.
    pub fn derivative(&self, x: f64) -> f64 {
        let (s, a) = (self.plateau, self.shoulder);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        if x <= 0.0 || x >= 1.0 {
            0.0
        } else if x <= a {
            -s * smooth(x / a)
        } else if x < 1.0 - a {
            -s
        } else {
            -s * smooth((1.0 - x) / a)
        }
    }

    /// `f''`.
    pub fn second_derivative(&self, x: f64) -> f64 {
        let (s, a) = (self.plateau, self.shoulder);
        let ds = |t: f64| 6.0 * t * (1.0 - t);
        if x <= 0.0 || x >= 1.0 {
            0.0
        } else if x <= a {
            -s * ds(x / a) / a
        } else if x < 1.0 - a {
            0.0
        } else {
            s * ds((1.0 - x) / a) / a
        }
    }

    pub fn certificate(&self, grid_points: usize) -> SlopeCertificate {
        let n = grid_points.max(2);
        let grid_max_slope = (0..=n)
            .map(|i| -self.derivative(i as f64 / n as f64))
            .fold(0.0, f64::max);
        let limit = 1.0 + self.eps;
        SlopeCertificate {
            grid_points: n + 1,
            grid_max_slope,
            bound: self.plateau,
            limit,
            holds: self.plateau <= limit && grid_max_slope <= limit,
        }
    }
}

/// Largest `λ` with `e^{λx} ≤ 1 + λx + λ²x²` on `[-1, 1]`.
pub fn lambda_max() -> f64 {
    let g = |y: f64| 1.0 + y + y * y - y.exp();
    let (mut lo, mut hi) = (1.0, 3.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Martingales of the perimeter process towards an `ℓ`-gon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Variant {
    /// `1/h(P_n) · Π 1/(ν([1-P_j, ∞)) + ν(-P_j-ℓ))`.
    Exact,
    /// `1/h(P_n) · exp(λ Σ 1/P_j)`.
    Exponential { lambda: f64 },
    /// `1/h(P_n) · exp((p - ε) Σ_{P_j ≥ k₀} 1/P_j)`.
    Truncated { eps: f64, k0: u64 },
    /// `exp(λ H^f_n - λ Σ (A log P_j + C)/P_j)` under peeling by layers.
    Layered { eps: f64, lambda: f64, c: f64 },
}

/// Outcome of one step as seen by the one-step sums; `Up` carries a real displacement so the
/// positive tail can be integrated.
#[derive(Clone, Copy, Debug)]
enum Outcome {
    Up(f64),
    Left(u64),
    Right(u64),
    Stop,
}

/// Evaluator for the martingale family on a face-target kernel.
pub struct Martingales<'a> {
    kernel: &'a TiltedKernel,
    l: u64,
    p_q: f64,
    gamma_q: f64,
}

impl<'a> Martingales<'a> {
    pub fn new(kernel: &'a TiltedKernel, p_q: f64, gamma_q: f64) -> Result<Self, PeelError> {
        let l = match kernel.kind() {
            Harmonic::DownP(l) => l,
            other => {
                return Err(PeelError::Parameter(format!("martingales need a face target, got {other:?}")))
            }
        };
        Ok(Self {
            kernel,
            l,
            p_q,
            gamma_q,
        })
    }

    /// Coefficient `(1+3ε)³/(1-ε) · p/2` of `log P / P`.
    pub fn layered_coefficient(&self, eps: f64) -> f64 {
        (1.0 + 3.0 * eps).powi(3) / (1.0 - eps) * self.p_q / 2.0
    }

    pub fn validate(&self, v: Variant) -> Result<(), PeelError> {
        match v {
            Variant::Exact => Ok(()),
            Variant::Exponential { lambda } if lambda > 0.0 && lambda <= self.gamma_q + 1e-15 => Ok(()),
            Variant::Exponential { lambda } => Err(PeelError::Parameter(format!(
                "λ = {lambda} exceeds γ(q) = {}",
                self.gamma_q
            ))),
            Variant::Truncated { eps, k0 } if eps > 0.0 && k0 >= 1 => Ok(()),
            Variant::Truncated { .. } => Err(PeelError::Parameter("need ε > 0 and k₀ ≥ 1".into())),
            Variant::Layered { eps, lambda, .. } => {
                if !(eps > 0.0 && eps < 1.0) {
                    return Err(PeelError::Parameter(format!("ε = {eps} outside (0, 1)")));
                }
                if !(lambda > 0.0 && lambda < lambda_max()) {
                    return Err(PeelError::Parameter(format!(
                        "λ = {lambda} outside (0, {})",
                        lambda_max()
                    )));
                }
                Ok(())
            }
        }
    }

    fn normaliser(&self, p: u64) -> f64 {
        let law = self.kernel.law();
        law.mass_between(1 - p as i64, i64::MAX) + law.pmf(-(p as i64) - self.l as i64)
    }

    fn compensator(&self, v: Variant, p: u64) -> f64 {
        let pf = p as f64;
        match v {
            Variant::Exact => -self.normaliser(p).ln(),
            Variant::Exponential { lambda } => lambda / pf,
            Variant::Truncated { eps, k0 } => {
                if p >= k0 {
                    (self.p_q - eps) / pf
                } else {
                    0.0
                }
            }
            Variant::Layered { eps, lambda, c } => {
                -lambda * (self.layered_coefficient(eps) * pf.ln() + c) / pf
            }
        }
    }

    /// `ln M_n` along a recorded trajectory (rows from [`run_exploration`]).
    pub fn ln_trace(&self, rows: &[TrajectoryRow], v: Variant) -> Result<Vec<f64>, PeelError> {
        self.validate(v)?;
        let f = match v {
            Variant::Layered { eps, .. } => Some(Interpolation::new(eps)?),
            _ => None,
        };
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(rows.len());
        let mut frozen_hf = 0.0;
        for (i, r) in rows.iter().enumerate() {
            let value = match (v, &f) {
                (Variant::Layered { lambda, .. }, Some(f)) => {
                    if r.p > 0 {
                        frozen_hf = r.h as f64 + f.eval(r.d as f64 / (2.0 * r.p as f64));
                    }
                    lambda * frozen_hf + acc
                }
                _ => -self.kernel.ln_h(r.p) + acc,
            };
            out.push(value);
            if r.p > 0 && i + 1 < rows.len() {
                acc += self.compensator(v, r.p as u64);
            }
        }
        Ok(out)
    }

    /// `E[M_{n+1} | P_n = p, D_n = d] / M_n` by exact summation over events.
    pub fn one_step_ratio(&self, p: u64, d: u64, v: Variant) -> Result<f64, PeelError> {
        self.validate(v)?;
        let comp = self.compensator(v, p);
        let ln_hp = self.kernel.ln_h(p as i64);
        Ok(match v {
            Variant::Layered { eps, lambda, .. } => {
                let f = Interpolation::new(eps)?;
                let pf = p as f64;
                let y = d as f64 / (2.0 * pf);
                let fy = f.eval(y);
                let df = |o: Outcome| -> f64 {
                    let x = match o {
                        Outcome::Up(k) => (d as f64 - 1.0) / (2.0 * pf + 2.0 * k),
                        Outcome::Right(k) => (d as f64 - 2.0 * k as f64) / (2.0 * (pf - k as f64)),
                        Outcome::Left(k) => (d as f64 - 1.0) / (2.0 * (pf - k as f64)),
                        Outcome::Stop => return 0.0,
                    };
                    f.eval(x) - fy
                };
                self.expect(p, |o| lambda * df(o) + comp)
            }
            _ => {
                let stop = comp + ln_hp;
                self.expect(p, |o| match o {
                    Outcome::Stop => stop,
                    Outcome::Up(k) => comp + ln_hp - self.ln_h_real(p as f64 + k),
                    Outcome::Left(k) | Outcome::Right(k) => comp + ln_hp - self.kernel.ln_h((p - k) as i64),
                })
            }
        })
    }

    fn ln_h_real(&self, x: f64) -> f64 {
        if x.fract() == 0.0 {
            self.kernel.ln_h(x as i64)
        } else {
            self.kernel.kind().ln_real(x)
        }
    }

    /// `Σ_events P(event) exp(g(event))` from state `p`.
    fn expect(&self, p: u64, g: impl Fn(Outcome) -> f64) -> f64 {
        let law = self.kernel.law();
        let pi = p as i64;
        let mut s = self.kernel.death_prob(p) * g(Outcome::Stop).exp();
        for k in 1..p {
            let w = 0.5 * self.kernel.prob(p, -(k as i64));
            if w > 0.0 {
                s += w * (g(Outcome::Left(k)).exp() + g(Outcome::Right(k)).exp());
            }
        }
        let kk = law.k_table() as i64;
        for k in 0..=kk {
            let w = self.kernel.prob(p, k);
            if w > 0.0 {
                s += w * g(Outcome::Up(k as f64)).exp();
            }
        }
        if !matches!(law.pos_tail(), SideTail::None) {
            let ln_hp = self.kernel.ln_h(pi);
            let kind = self.kernel.kind();
            s += smooth_tail_sum(
                |x| {
                    law.pos_tail().pmf(x)
                        * (kind.ln_real(p as f64 + x) - ln_hp + g(Outcome::Up(x))).exp()
                },
                (kk + 1) as f64,
            );
        }
        s
    }

    /// `ln E[e^{λ ΔH^f}]` from `(p, d)` without compensator.
    pub fn layered_log_mgf(&self, p: u64, d: u64, eps: f64, lambda: f64) -> Result<f64, PeelError> {
        let ratio = self.one_step_ratio(p, d, Variant::Layered { eps, lambda, c: 0.0 })?;
        let pf = p as f64;
        Ok(ratio.ln() + lambda * self.layered_coefficient(eps) * pf.ln() / pf)
    }

    /// Smallest `C` making every listed state a supermartingale step, times `1 + margin`.
    pub fn calibrate_layered(
        &self,
        eps: f64,
        lambda: f64,
        states: &[(u64, u64)],
        margin: f64,
    ) -> Result<Calibration, PeelError> {
        let a = self.layered_coefficient(eps);
        let mut worst = f64::NEG_INFINITY;
        let mut at = (1, 1);
        for &(p, d) in states {
            let pf = p as f64;
            let need = pf * self.layered_log_mgf(p, d, eps, lambda)? / lambda - a * pf.ln();
            if need > worst {
                worst = need;
                at = (p, d);
            }
        }
        let c = worst.max(0.0) * (1.0 + margin) + 1e-9;
        Ok(Calibration {
            eps,
            lambda,
            coefficient: a,
            required: worst,
            c,
            worst_state: at,
            states: states.len(),
        })
    }
}

/// Outcome of [`Martingales::calibrate_layered`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub eps: f64,
    pub lambda: f64,
    pub coefficient: f64,
    pub required: f64,
    pub c: f64,
    pub worst_state: (u64, u64),
    pub states: usize,
}

/// Calibration grid: all `(p, d)` for `p ≤ dense`, then a geometric ladder up to `p_max`
/// with `d` on a coarse grid including both ends.
pub fn calibration_grid(dense: u64, p_max: u64) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    for p in 1..=dense {
        for d in 1..=2 * p {
            out.push((p, d));
        }
    }
    let mut p = dense + 1;
    while p <= p_max {
        let top = 2 * p;
        let mut ds: Vec<u64> = (0..=32).map(|i| 1 + (top - 1) * i / 32).collect();
        ds.extend([2, 3, top - 1]);
        ds.sort_unstable();
        ds.dedup();
        out.extend(ds.into_iter().map(|d| (p, d)));
        p = (p as f64 * 1.25).ceil() as u64;
    }
    out
}
