//! Experiments: exact identity checks and Monte Carlo ratios with standard errors.
//!
//! Every sample draws from `stream(seed, tag(label), index)`, and accumulators are merged in
//! chunk order, so a report depends only on its configuration and seed.

use crate::harmonic::{h_down, Harmonic};
use crate::kernel::{model_constants, mu_law, mu_mass_mean, weights_from_nu, DisplacementLaw, KernelError};
use crate::maps::{
    bfs_faces, build_boltzmann, build_counts, build_targeted, diameter, dijkstra_faces, fpp_weights,
    pointed_js_counts, replay_exploration, split_statistic, uniform_face, uniform_vertex, DiameterMode,
    MapError, MapTarget, SplitOutcome, UntargetedKernel, EXACT_FACE_LIMIT,
};
use crate::oracles::{coupling_dp, death_decomposition_dp, tutte_row_defect, OracleError};
use crate::parallel::{map_collect, map_reduce, stream, tag};
use crate::peeling::{calibration_grid, default_budget, run_exploration, Martingales, PeelError, Variant};
use crate::rational::ExactLaw;
use crate::stats::{ks_statistic, ks_two_sample, linear_fit, Welford};
use crate::walks::{final_perimeter_cdf, run_walk, sample_coupled, TiltedKernel, WalkError};
use num_rational::BigRational;
use num_traits::Zero;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// Experiment names accepted by [`run_experiment`].
pub const EXPERIMENTS: &[&str] = &[
    "identity_suite",
    "coupling",
    "theorem1",
    "two_point",
    "final_perimeter",
    "upsilon_moment",
    "volume",
    "diameter",
    "degree",
];

/// `2/π²`, limit of `p n E[1/P_∞(n)]`.
pub const UPSILON_TARGET: f64 = 2.0 / (PI * PI);

const ROOT_DEGREE_TARGET: u64 = 100;
const VERTICES_PER_MAP: u64 = 50;
const DIAMETER_SWEEPS: u32 = 1000;

#[derive(Debug, thiserror::Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Peel(#[from] PeelError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("unknown experiment {0:?}")]
    Unknown(String),
    #[error("configuration: {0}")]
    Config(String),
}

/// Acceptance bands; defaults are the declared tolerances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bands {
    pub harmonic: f64,
    pub row_sum: f64,
    pub coupling_dp: f64,
    pub death_decomposition: f64,
    pub martingale: f64,
    pub tutte: f64,
    pub mu_law: f64,
    pub joint_se: f64,
    pub fpp_ratio: [f64; 2],
    pub graph_ratio: [f64; 2],
    pub two_point_ratio: [f64; 2],
    pub final_perimeter_ks: f64,
    pub self_similarity_ks: f64,
    pub upsilon: [f64; 2],
    pub volume_rel: f64,
    pub diameter_graph_slack: f64,
    pub diameter_graph_upper: f64,
    pub diameter_graph_fraction: f64,
    pub diameter_fpp_slack: f64,
    pub diameter_fpp_fraction: f64,
    pub degree_r2: f64,
}

impl Default for Bands {
    fn default() -> Self {
        Self {
            harmonic: 1e-8,
            row_sum: 1e-10,
            coupling_dp: 1e-8,
            death_decomposition: 1e-10,
            martingale: 1e-9,
            tutte: 1e-6,
            mu_law: 1e-10,
            joint_se: 3.0,
            fpp_ratio: [0.6, 1.6],
            graph_ratio: [0.4, 2.5],
            two_point_ratio: [0.4, 2.5],
            final_perimeter_ks: 0.1,
            self_similarity_ks: 0.05,
            upsilon: [0.15, 0.25],
            volume_rel: 0.25,
            diameter_graph_slack: 0.05,
            diameter_graph_upper: 19.0,
            diameter_graph_fraction: 0.95,
            diameter_fpp_slack: 0.2,
            diameter_fpp_fraction: 0.9,
            degree_r2: 0.9,
        }
    }
}

/// Parameters of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// `ℓ` grid, or the time grid for `upsilon_moment`.
    pub grid: Vec<u64>,
    /// Samples (or maps) per grid point.
    pub samples: u64,
    /// Lags for the split statistic.
    pub eps: Vec<f64>,
    pub edge_cap: u64,
    pub bands: Bands,
}

impl ExperimentConfig {
    /// Default grid and sample count of an experiment.
    pub fn defaults(name: &str) -> Result<Self, EstimatorError> {
        let (grid, samples): (Vec<u64>, u64) = match name {
            "identity_suite" => (vec![], 1000),
            "coupling" => (vec![10, 100, 1000], 100_000),
            "theorem1" => (vec![1000, 10_000, 100_000], 1000),
            "two_point" => (vec![1000, 10_000], 100),
            "final_perimeter" => (vec![100, 1000, 10_000], 10_000),
            "upsilon_moment" => (vec![1000, 10_000, 100_000], 4000),
            "volume" => (vec![100, 1000], 10_000),
            "diameter" => (vec![10_000], 100),
            "degree" => (vec![1000], 200),
            other => return Err(EstimatorError::Unknown(other.to_string())),
        };
        Ok(Self {
            seed: 0,
            grid,
            samples,
            eps: vec![0.2, 0.1, 0.05],
            edge_cap: crate::maps::DEFAULT_EDGE_CAP,
            bands: Bands::default(),
        })
    }
}

/// Mean with standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub sem: f64,
    pub n: u64,
}

impl From<Welford> for Estimate {
    fn from(w: Welford) -> Self {
        Self { mean: w.mean, sem: w.sem(), n: w.n }
    }
}

/// One reported quantity at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub x: u64,
    pub quantity: String,
    pub mean: f64,
    pub sem: f64,
    pub n: u64,
    pub target: Option<f64>,
}

/// A pass/fail comparison against a declared band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pass: bool,
}

impl Check {
    pub fn within(name: &str, value: f64, lower: Option<f64>, upper: Option<f64>) -> Self {
        let pass = value.is_finite()
            && lower.is_none_or(|l| value >= l)
            && upper.is_none_or(|u| value <= u);
        Self { name: name.to_string(), value, lower, upper, pass }
    }

    pub fn below(name: &str, value: f64, upper: f64) -> Self {
        Self::within(name, value, None, Some(upper))
    }
}

/// Result of one experiment run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub kernel: String,
    pub kernel_checksum: String,
    pub seed: u64,
    pub grid: Vec<u64>,
    pub samples: u64,
    pub rows: Vec<Row>,
    pub checks: Vec<Check>,
    /// Samples excluded by a step budget or size cap.
    pub flagged: u64,
    /// Total-variation bound on each stored map from the partition-table defect.
    pub tv_bound: Option<f64>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    fn new(name: &str, kernel: &str, law: &DisplacementLaw, cfg: &ExperimentConfig) -> Self {
        Self {
            experiment: name.to_string(),
            kernel: kernel.to_string(),
            kernel_checksum: law.checksum().to_string(),
            seed: cfg.seed,
            grid: cfg.grid.clone(),
            samples: cfg.samples,
            rows: Vec::new(),
            checks: Vec::new(),
            flagged: 0,
            tv_bound: None,
            notes: Vec::new(),
        }
    }

    fn row(&mut self, x: u64, quantity: &str, e: Estimate, target: Option<f64>) {
        self.rows.push(Row {
            x,
            quantity: quantity.to_string(),
            mean: e.mean,
            sem: e.sem,
            n: e.n,
            target,
        });
    }

    fn value(&mut self, x: u64, quantity: &str, v: f64, n: u64, target: Option<f64>) {
        self.row(x, quantity, Estimate { mean: v, sem: 0.0, n }, target);
    }

    pub fn find(&self, x: u64, quantity: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.x == x && r.quantity == quantity)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Rows as CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,quantity,mean,sem,n,target\n");
        for r in &self.rows {
            let t = r.target.map(|t| format!("{t:e}")).unwrap_or_default();
            s.push_str(&format!("{},{},{:e},{:e},{},{}\n", r.x, r.quantity, r.mean, r.sem, r.n, t));
        }
        s
    }

    /// `x,y,err` columns for one quantity.
    pub fn plot_data(&self, quantity: &str) -> String {
        let mut s = String::from("x,y,err\n");
        for r in self.rows.iter().filter(|r| r.quantity == quantity) {
            s.push_str(&format!("{},{:e},{:e}\n", r.x, r.mean, r.sem));
        }
        s
    }

    pub fn quantities(&self) -> Vec<String> {
        let mut q: Vec<String> = Vec::new();
        for r in &self.rows {
            if !q.contains(&r.quantity) {
                q.push(r.quantity.clone());
            }
        }
        q
    }
}

#[derive(Clone, Copy, Debug)]
struct Acc<const N: usize> {
    w: [Welford; N],
    flagged: u64,
}

impl<const N: usize> Default for Acc<N> {
    fn default() -> Self {
        Self { w: [Welford::default(); N], flagged: 0 }
    }
}

impl<const N: usize> Acc<N> {
    fn merge(mut self, o: Self) -> Self {
        for i in 0..N {
            self.w[i] = self.w[i].merge(o.w[i]);
        }
        self.flagged += o.flagged;
        self
    }

    fn get(&self, i: usize) -> Estimate {
        self.w[i].into()
    }
}

/// Per-sample values, `None` for a flagged sample; merged in index order.
fn accumulate<const N: usize>(
    cfg: &ExperimentConfig,
    label: &str,
    n: u64,
    f: impl Fn(&mut ChaCha8Rng) -> Result<Option<[f64; N]>, EstimatorError> + Sync + Send,
) -> Result<Acc<N>, EstimatorError> {
    let t = tag(label);
    map_reduce(
        n,
        || Ok(Acc::<N>::default()),
        |i| {
            let mut rng = stream(cfg.seed, t, i);
            let mut acc = Acc::<N>::default();
            match f(&mut rng)? {
                Some(v) => {
                    for (w, x) in acc.w.iter_mut().zip(v) {
                        w.push(x);
                    }
                }
                None => acc.flagged = 1,
            }
            Ok(acc)
        },
        |a: Result<Acc<N>, EstimatorError>, b| Ok(a?.merge(b?)),
    )
}

fn collect<T: Send>(
    cfg: &ExperimentConfig,
    label: &str,
    n: u64,
    f: impl Fn(&mut ChaCha8Rng) -> Result<T, EstimatorError> + Sync + Send,
) -> Result<Vec<T>, EstimatorError> {
    let t = tag(label);
    map_collect(n, |i| f(&mut stream(cfg.seed, t, i))).into_iter().collect()
}

fn p_hat(law: &DisplacementLaw) -> Result<crate::kernel::ModelConstants, EstimatorError> {
    Ok(model_constants(law, &[0.05])?)
}

fn ratio_trend(report: &mut ExperimentReport, quantity: &str, target: f64, slack_se: f64) {
    let pts: Vec<(u64, f64, f64)> = report
        .rows
        .iter()
        .filter(|r| r.quantity == quantity)
        .map(|r| (r.x, r.mean, r.sem))
        .collect();
    if let (Some(first), Some(last)) = (pts.first(), pts.last()) {
        if pts.len() >= 2 {
            let gap = (last.1 - target).abs() - (first.1 - target).abs();
            let slack = slack_se * (first.2.powi(2) + last.2.powi(2)).sqrt();
            report.checks.push(Check::below(&format!("{quantity}_trend"), gap, slack));
        }
    }
}

/// Maximum Tutte row defect for holes up to 200, the per-step error of the partition table.
pub fn table_defect(law: &DisplacementLaw) -> f64 {
    (1..=200).map(|m| tutte_row_defect(law, m).abs()).fold(0.0, f64::max)
}

/// Run one experiment by name on `law` (described by `kernel`).
pub fn run_experiment(
    name: &str,
    cfg: &ExperimentConfig,
    kernel: &str,
    law: Arc<DisplacementLaw>,
) -> Result<ExperimentReport, EstimatorError> {
    let mut rep = ExperimentReport::new(name, kernel, &law, cfg);
    match name {
        "identity_suite" => identity_suite(cfg, &law, &mut rep)?,
        "coupling" => coupling(cfg, &law, &mut rep)?,
        "theorem1" => theorem1(cfg, &law, &mut rep)?,
        "two_point" => two_point(cfg, &law, &mut rep)?,
        "final_perimeter" => final_perimeter(cfg, &law, &mut rep)?,
        "upsilon_moment" => upsilon_moment(cfg, &law, &mut rep)?,
        "volume" => volume(cfg, &law, &mut rep)?,
        "diameter" => diameter_experiment(cfg, &law, &mut rep)?,
        "degree" => degree(cfg, &law, &mut rep)?,
        other => return Err(EstimatorError::Unknown(other.to_string())),
    }
    Ok(rep)
}

fn log_uniform(rng: &mut ChaCha8Rng, hi: u64) -> u64 {
    ((rng.gen::<f64>() * (hi as f64).ln()).exp() as u64).clamp(1, hi)
}

fn identity_suite(cfg: &ExperimentConfig, law: &Arc<DisplacementLaw>, rep: &mut ExperimentReport) -> Result<(), EstimatorError> {
    let b = &cfg.bands;
    let states = cfg.samples;

    let mut worst = 0.0f64;
    for h in [Harmonic::Down, Harmonic::Up] {
        for l in 1..=1000 {
            worst = worst.max(law.harmonic_defect(h, l).abs());
        }
    }
    rep.value(0, "harmonic_defect", worst, 2000, None);
    rep.checks.push(Check::below("harmonic_defect", worst, b.harmonic));
    let exact = ExactLaw::quadrangulation(64);
    let exact_ok = (1..=20).all(|l| exact.harmonic_defect(false, l).is_zero() && exact.harmonic_defect(true, l).is_zero())
        && exact.pmf(-2) == BigRational::new(1.into(), 24.into())
        && exact.pmf(-3) == BigRational::new(1.into(), 64.into());
    rep.checks.push(Check::within("fixture_exact_harmonic", exact_ok as u8 as f64, Some(1.0), None));

    let kernels: Vec<TiltedKernel> = [Harmonic::Down, Harmonic::Up, Harmonic::DownP(1), Harmonic::DownP(10), Harmonic::DownP(1000)]
        .into_iter()
        .map(|h| TiltedKernel::new(law.clone(), h))
        .collect();
    let mut rng = stream(cfg.seed, tag("identity/rows"), 0);
    let mut row_worst = 0.0f64;
    for i in 0..states {
        let m = log_uniform(&mut rng, 100_000);
        let k = &kernels[i as usize % kernels.len()];
        row_worst = row_worst.max((k.row_sum(m) - 1.0).abs());
    }
    rep.value(0, "row_sum_defect", row_worst, states, None);
    rep.checks.push(Check::below("row_sum_defect", row_worst, b.row_sum));

    let fixture = crate::kernel::load_kernel(&crate::kernel::KernelSpec::Quad)?;
    for (l, n) in [(3u64, 6u64), (5, 10)] {
        let c = coupling_dp(&fixture, l, n, 64);
        rep.value(l, &format!("coupling_dp_defect_n{n}"), c.defect() + c.truncation_bound, 1, None);
        rep.checks.push(Check::below(&format!("coupling_dp_{l}_{n}"), c.defect() + c.truncation_bound, b.coupling_dp));
        let own = coupling_dp(law, l, n, 4096);
        rep.notes.push(format!(
            "coupling DP on the configured kernel at ({l},{n}): defect {:.3e}, truncation bound {:.3e}",
            own.defect(),
            own.truncation_bound
        ));
    }

    let mut death_worst = 0.0f64;
    for l in 1..=5 {
        for d in death_decomposition_dp(&fixture, l, 12, 24, 64) {
            death_worst = death_worst.max((d.lhs - d.rhs).abs());
        }
    }
    rep.value(0, "death_decomposition_defect", death_worst, 5, None);
    rep.checks.push(Check::below("death_decomposition", death_worst, b.death_decomposition));

    martingale_checks(cfg, law, rep)?;

    let tutte = table_defect(law);
    rep.value(0, "tutte_defect", tutte, 200, None);
    rep.checks.push(Check::below("tutte_defect", tutte, b.tutte));
    let (w, _) = weights_from_nu(law)?;
    let mu = mu_law(&w)?;
    let (mass, mean) = mu_mass_mean(&mu);
    rep.value(0, "mu_mass_defect", (mass - 1.0).abs(), 1, None);
    rep.value(0, "mu_mean_defect", mean.abs(), 1, None);
    rep.checks.push(Check::below("mu_mass_defect", (mass - 1.0).abs(), b.mu_law));
    rep.checks.push(Check::below("mu_mean_defect", mean.abs(), b.mu_law));

    let js = collect(cfg, "identity/js", states, |rng| {
        let l = 1 + rng.gen_range(0..5);
        Ok(pointed_js_counts(&mu, l, rng, 1_000_000).ok())
    })?;
    let js_done: Vec<_> = js.iter().flatten().collect();
    let js_bad = js_done
        .iter()
        .filter(|c| c.euler() != 2 || c.vertices != c.down_steps + 1 || c.faces != c.other_steps + 1)
        .count();
    rep.value(0, "js_structures", js_done.len() as f64, states, None);
    rep.checks.push(Check::below("js_counts_euler_failures", js_bad as f64, 0.0));
    let untargeted = UntargetedKernel::new(law.clone());
    let euler_bad = collect(cfg, "identity/euler", states, |rng| {
        let l = 1 + rng.gen_range(0..20);
        Ok(match build_boltzmann(&untargeted, l, rng, 2_000_000) {
            Ok(m) => Some(m.validate().is_err()),
            Err(MapError::Size { .. }) => None,
            Err(e) => return Err(e.into()),
        })
    })?;
    let built = euler_bad.iter().flatten().count();
    let failures = euler_bad.iter().flatten().filter(|&&x| x).count();
    rep.flagged += (js.len() - js_done.len()) as u64 + (euler_bad.len() - built) as u64;
    rep.value(0, "maps_validated", built as f64, states, None);
    rep.checks.push(Check::below("map_validation_failures", failures as f64, 0.0));
    Ok(())
}

fn martingale_checks(cfg: &ExperimentConfig, law: &Arc<DisplacementLaw>, rep: &mut ExperimentReport) -> Result<(), EstimatorError> {
    let b = &cfg.bands;
    let mc = model_constants(law, &[0.05])?;
    let k0 = mc.k0[0].1;
    let ells = [1u64, 10, 100, 1000, 10_000];
    let kernels: Vec<TiltedKernel> = ells.iter().map(|&l| TiltedKernel::new(law.clone(), Harmonic::DownP(l))).collect();
    let (eps, lambda) = (0.1, 0.5);
    let grid = calibration_grid(64, 10_000);
    let mut c = 0.0f64;
    for k in &kernels {
        let m = Martingales::new(k, mc.p_q, mc.gamma_q)?;
        c = c.max(m.calibrate_layered(eps, lambda, &grid, 0.1)?.c);
    }
    rep.value(0, "layered_constant", c, grid.len() as u64 * ells.len() as u64, None);
    let mut rng = stream(cfg.seed, tag("identity/martingale"), 0);
    let (mut exact, mut expo, mut trunc, mut layered) = (0.0f64, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..cfg.samples {
        let k = &kernels[i as usize % kernels.len()];
        let m = Martingales::new(k, mc.p_q, mc.gamma_q)?;
        let p = log_uniform(&mut rng, 1000);
        let d = rng.gen_range(1..=2 * p);
        exact = exact.max((m.one_step_ratio(p, d, Variant::Exact)? - 1.0).abs());
        expo = expo.max(m.one_step_ratio(p, d, Variant::Exponential { lambda: mc.gamma_q })? - 1.0);
        trunc = trunc.max(m.one_step_ratio(p, d, Variant::Truncated { eps: 0.05, k0 })? - 1.0);
        layered = layered.max(m.one_step_ratio(p, d, Variant::Layered { eps, lambda, c })? - 1.0);
    }
    rep.value(0, "martingale_defect", exact, cfg.samples, None);
    rep.value(0, "supermartingale_exponential_excess", expo, cfg.samples, None);
    rep.value(0, "supermartingale_truncated_excess", trunc, cfg.samples, None);
    rep.value(0, "supermartingale_layered_excess", layered, cfg.samples, None);
    rep.checks.push(Check::below("martingale_defect", exact, b.martingale));
    rep.checks.push(Check::below("supermartingale_exponential", expo, b.martingale));
    rep.checks.push(Check::below("supermartingale_truncated", trunc, b.martingale));
    rep.checks.push(Check::below("supermartingale_layered", layered, b.martingale));
    Ok(())
}

fn coupling(cfg: &ExperimentConfig, law: &Arc<DisplacementLaw>, rep: &mut ExperimentReport) -> Result<(), EstimatorError> {
    let up = TiltedKernel::new(law.clone(), Harmonic::Up);
    for &l in &cfg.grid {
        let n = l;
        let down = TiltedKernel::new(law.clone(), Harmonic::DownP(l));
        let direct = accumulate::<1>(cfg, &format!("coupling/direct/{l}"), cfg.samples, |rng| {
            let s = run_walk(&down, 1, n, rng, |_, _| {})?;
            Ok(Some([s.tau.is_none() as u8 as f64]))
        })?;
        let coupled = accumulate::<1>(cfg, &format!("coupling/coupled/{l}"), cfg.samples, |rng| {
            Ok(Some([sample_coupled(&up, n, l, rng)?.survival_prob]))
        })?;
        let (a, c) = (direct.get(0), coupled.get(0));
        rep.row(l, "survival_direct", a, None);
        rep.row(l, "survival_coupled", c, None);
        let z = (a.mean - c.mean).abs() / (a.sem.powi(2) + c.sem.powi(2)).sqrt();
        rep.value(l, "joint_z", z, a.n, None);
        rep.checks.push(Check::below(&format!("coupling_{l}_{n}"), z, cfg.bands.joint_se));
    }
    Ok(())
}

fn theorem1(cfg: &ExperimentConfig, law: &Arc<DisplacementLaw>, rep: &mut ExperimentReport) -> Result<(), EstimatorError> {
    let mc = p_hat(law)?;
    let p = mc.p_q;
    for &l in &cfg.grid {
        let kernel = TiltedKernel::new(law.clone(), Harmonic::DownP(l));
        let lnl = (l as f64).ln();
        let acc = accumulate::<5>(cfg, &format!("theorem1/{l}"), cfg.samples, |rng| {
            let e = run_exploration(&kernel, 1, default_budget(l), rng, false, true)?;
            Ok(e.tau.map(|tau| {
                let d_gr = e.d_gr.unwrap_or(0) as f64;
                [
                    PI * PI * p * e.d_fpp / lnl,
                    PI * PI * p * e.rb_mean / lnl,
                    2.0 * PI * PI * d_gr / (lnl * lnl),
                    (e.d_fpp - e.rb_mean).powi(2) - e.rb_var,
                    tau as f64 / l as f64,
                ]
            }))
        })?;
        rep.flagged += acc.flagged;
        rep.row(l, "fpp_ratio", acc.get(0), Some(1.0));
        rep.row(l, "fpp_ratio_rb", acc.get(1), Some(1.0));
        rep.row(l, "graph_ratio", acc.get(2), Some(1.0));
        rep.row(l, "conditional_variance_gap", acc.get(3), Some(0.0));
        rep.row(l, "tau_over_l", acc.get(4), None);
        let b = &cfg.bands;
        rep.checks.push(Check::within(&format!("fpp_ratio_{l}"), acc.get(0).mean, Some(b.fpp_ratio[0]), Some(b.fpp_ratio[1])));
        rep.checks.push(Check::within(&format!("graph_ratio_{l}"), acc.get(2).mean, Some(b.graph_ratio[0]), Some(b.graph_ratio[1])));
        let diff = acc.w[0].mean - acc.w[1].mean;
        let se = (acc.w[0].variance() / acc.w[0].n.max(1) as f64).sqrt();
        rep.checks.push(Check::below(&format!("rao_blackwell_{l}"), diff.abs() / se.max(f64::MIN_POSITIVE), b.joint_se));
        let g = acc.get(3);
        rep.checks.push(Check::below(&format!("conditional_variance_{l}"), g.mean.abs() / g.sem.max(f64::MIN_POSITIVE), b.joint_se));
    }
    ratio_trend(rep, "fpp_ratio", 1.0, 2.0);
    ratio_trend(rep, "graph_ratio", 1.0, 2.0);
    rep.notes.push(format!("p_q = {p}"));
    Ok(())
}

fn map_tv_bound(law: &DisplacementLaw, max_edges: f64) -> f64 {
    (table_defect(law) * max_edges).min(1.0)
}

fn two_point(cfg: &ExperimentConfig, law: &Arc<DisplacementLaw>, rep: &mut ExperimentReport) -> Result<(), EstimatorError> {
    let p = p_hat(law)?.p_q;
    let kernel = UntargetedKernel::new(law.clone());
    let mut max_edges = 0f64;
    for &l in &cfg.grid {
        let lnl = (l as f64).ln();
        let samples = collect(cfg, &format!("two_point/{l}"), cfg.samples, |rng| {
            let map = match build_boltzmann(&kernel, l, rng, cfg.edge_cap) {
                Ok(m) => m,
                Err(MapError::Size { .. }) => return Ok(None),
                Err(e) => return Err(e.into()),
            };
            let f1 = uniform_face(&map, rng);
            let f2 = uniform_face(&map, rng);
            let d_gr = bfs_faces(&map, f1)[f2 as usize] as f64;
            let w = fpp_weights(&map, rng);
            let d_fpp = dijkstra_faces(&map, f1, &w)[f2 as usize];
            let rooted = map.clone().with_root_target(map.root(), Some(MapTarget::Face(f1)));
            let r = replay_exploration(&rooted, Some(f2), rng)?;
            Ok(Some((
                [PI * PI * d_gr / (lnl * lnl), PI * PI * p * d_fpp / (2.0 * lnl), map.edges() as f64],
                SplitOutcome { tau: r.tau, split_time: r.split_time },
            )))
        })?;
        let mut acc = [Welford::default(); 3];
        let mut outcomes = Vec::new();
        for s in &samples {
            match s {
                Some((v, o)) => {
                    for i in 0..3 {
                        acc[i].push(v[i]);
                    }
                    outcomes.push(*o);
                }
                None => rep.flagged += 1,
            }
        }
        max_edges = samples.iter().flatten().map(|s| s.0[2]).fold(max_edges, f64::max);
        rep.row(l, "graph_ratio", acc[0].into(), Some(1.0));
        rep.row(l, "fpp_ratio", acc[1].into(), Some(1.0));
        rep.row(l, "edges", acc[2].into(), None);
        let band = cfg.bands.two_point_ratio;
        rep.checks.push(Check::within(&format!("two_point_graph_{l}"), acc[0].mean, Some(band[0]), Some(band[1])));
        for &e in &cfg.eps {
            let s = split_statistic(&outcomes, l, e);
            let se = (s * (1.0 - s) / outcomes.len().max(1) as f64).sqrt();
            rep.row(l, &format!("split_eps_{e}"), Estimate { mean: s, sem: se, n: outcomes.len() as u64 }, None);
        }
    }
    ratio_trend(rep, "graph_ratio", 1.0, 2.0);
    ratio_trend(rep, "fpp_ratio", 1.0, 2.0);
    let mut eps_sorted = cfg.eps.clone();
    eps_sorted.sort_by(|a, b| b.total_cmp(a));
    if let (Some(&l), true) = (cfg.grid.last(), eps_sorted.len() >= 2) {
        let first = rep.find(l, &format!("split_eps_{}", eps_sorted[0])).map(|r| r.mean).unwrap_or(f64::NAN);
        let last = rep.find(l, &format!("split_eps_{}", eps_sorted[eps_sorted.len() - 1])).map(|r| r.mean).unwrap_or(f64::NAN);
        rep.checks.push(Check::within("split_increases_as_eps_decreases", last - first, Some(0.0), None));
    }
    rep.tv_bound = Some(map_tv_bound(law, max_edges));
    Ok(())
}

fn final_perimeter(cfg: &ExperimentConfig, law: &Arc<DisplacementLaw>, rep: &mut ExperimentReport) -> Result<(), EstimatorError> {
    let mut ks = Vec::new();
    let mut lifetimes = Vec::new();
    for &l in &cfg.grid {
        let kernel = TiltedKernel::new(law.clone(), Harmonic::DownP(l));
        let out = collect(cfg, &format!("final_perimeter/{l}"), cfg.samples, |rng| {
            let s = run_walk(&kernel, 1, default_budget(l), rng, |_, _| {})?;
            Ok(s.tau.map(|t| (s.final_jump_from.unwrap_or(0) as f64 / l as f64, t as f64 / l as f64)))
        })?;
        let done: Vec<(f64, f64)> = out.iter().flatten().copied().collect();
        rep.flagged += (out.len() - done.len()) as u64;
        let mut u: Vec<f64> = done.iter().map(|x| x.0).collect();
        let d = ks_statistic(&mut u, final_perimeter_cdf);
        rep.value(l, "ks_final_perimeter", d, done.len() as u64, Some(0.0));
        ks.push((l, d));
        lifetimes.push((l, done.iter().map(|x| x.1).collect::<Vec<f64>>()));
    }
    if let (Some(first), Some(last)) = (ks.first(), ks.last()) {
        rep.checks.push(Check::below(&format!("ks_{}", last.0), last.1, cfg.bands.final_perimeter_ks));
        if ks.len() >= 2 {
            rep.checks.push(Check::below("ks_decreases", last.1 - first.1, -f64::MIN_POSITIVE));
        }
    }
    if lifetimes.len() >= 2 {
        let n = lifetimes.len();
        let (la, mut a) = lifetimes[n - 2].clone();
        let (lb, mut b) = lifetimes[n - 1].clone();
        let d = ks_two_sample(&mut a, &mut b);
        rep.value(lb, &format!("ks_lifetime_vs_{la}"), d, b.len() as u64, None);
        rep.checks.push(Check::below("lifetime_self_similarity", d, cfg.bands.self_similarity_ks));
        rep.notes.push(format!("self-similarity of τ/ℓ between ℓ={la} and ℓ={lb}: KS {d:.4}"));
    }
    Ok(())
}

fn upsilon_moment(cfg: &ExperimentConfig, law: &Arc<DisplacementLaw>, rep: &mut ExperimentReport) -> Result<(), EstimatorError> {
    let p = p_hat(law)?.p_q;
    let up = TiltedKernel::new(law.clone(), Harmonic::Up);
    for &n in &cfg.grid {
        let acc = accumulate::<1>(cfg, &format!("upsilon/{n}"), cfg.samples, |rng| {
            let s = run_walk(&up, 1, n, rng, |_, _| {})?;
            Ok(Some([p * n as f64 / s.last_state as f64]))
        })?;
        rep.row(n, "upsilon_moment", acc.get(0), Some(UPSILON_TARGET));
    }
    if let Some(&n) = cfg.grid.last() {
        let v = rep.find(n, "upsilon_moment").map(|r| r.mean).unwrap_or(f64::NAN);
        rep.checks.push(Check::within(&format!("upsilon_{n}"), v, Some(cfg.bands.upsilon[0]), Some(cfg.bands.upsilon[1])));
    }
    ratio_trend(rep, "upsilon_moment", UPSILON_TARGET, 2.0);
    Ok(())
}

/// `E[#edges]` under the Boltzmann law of half-perimeter `ℓ`, divided by `ℓ^{3/2}`.
pub fn exact_volume_ratio(law: &DisplacementLaw, l: u64) -> f64 {
    let lf = l as f64;
    lf * h_down(l as i64) / (2.0 * (lf + 1.0) * law.pmf(-(l as i64) - 1)) / lf.powf(1.5)
}

fn volume(cfg: &ExperimentConfig, law: &Arc<DisplacementLaw>, rep: &mut ExperimentReport) -> Result<(), EstimatorError> {
    let b_q = p_hat(law)?.b_q;
    let kernel = UntargetedKernel::new(law.clone());
    let mut exact = Vec::new();
    for &l in &cfg.grid {
        let scale = (l as f64).powf(1.5);
        let acc = accumulate::<1>(cfg, &format!("volume/{l}"), cfg.samples, |rng| {
            Ok(match build_counts(&kernel, l, rng, cfg.edge_cap) {
                Ok(c) => Some([c.edges as f64 / scale]),
                Err(MapError::Size { .. }) => None,
                Err(e) => return Err(e.into()),
            })
        })?;
        rep.flagged += acc.flagged;
        rep.row(l, "edges_over_l15", acc.get(0), Some(b_q));
        let e = exact_volume_ratio(law, l);
        rep.value(l, "exact_mean_over_l15", e, 0, Some(b_q));
        exact.push(e);
    }
    if let Some(&l) = cfg.grid.last() {
        let v = rep.find(l, "edges_over_l15").map(|r| r.mean).unwrap_or(f64::NAN);
        rep.checks.push(Check::below(&format!("volume_{l}"), (v / b_q - 1.0).abs(), cfg.bands.volume_rel));
    }
    if exact.len() >= 2 {
        let gap = (exact[exact.len() - 1] - b_q).abs() - (exact[0] - b_q).abs();
        rep.checks.push(Check::below("volume_exact_trend", gap, 0.0));
    }
    rep.notes.push(format!("b_q = {b_q}"));
    Ok(())
}

fn diameter_experiment(cfg: &ExperimentConfig, law: &Arc<DisplacementLaw>, rep: &mut ExperimentReport) -> Result<(), EstimatorError> {
    let mc = p_hat(law)?;
    let kernel = UntargetedKernel::new(law.clone());
    let b = &cfg.bands;
    let fpp_floor = (0.75 / (1.0 - mc.q1 * mc.q1)).max(2.0 / (PI * PI * mc.p_q)) - b.diameter_fpp_slack;
    let graph_floor = 1.0 / (PI * PI) - b.diameter_graph_slack;
    let mut max_edges = 0f64;
    for &l in &cfg.grid {
        let lnl = (l as f64).ln();
        let out = collect(cfg, &format!("diameter/{l}"), cfg.samples, |rng| {
            let map = match build_boltzmann(&kernel, l, rng, cfg.edge_cap) {
                Ok(m) => m,
                Err(MapError::Size { .. }) => return Ok(None),
                Err(e) => return Err(e.into()),
            };
            let g = diameter(&map, DiameterMode::Graph, EXACT_FACE_LIMIT, DIAMETER_SWEEPS);
            let w = fpp_weights(&map, rng);
            let f = diameter(&map, DiameterMode::Fpp(&w), EXACT_FACE_LIMIT, DIAMETER_SWEEPS);
            Ok(Some([
                g.lower / (lnl * lnl),
                g.upper / (lnl * lnl),
                f.lower / lnl,
                f.upper / lnl,
                g.exact as u8 as f64,
                f.exact as u8 as f64,
                map.edges() as f64,
            ]))
        })?;
        let done: Vec<[f64; 7]> = out.iter().flatten().copied().collect();
        rep.flagged += (out.len() - done.len()) as u64;
        let mut acc = [Welford::default(); 7];
        for v in &done {
            for i in 0..7 {
                acc[i].push(v[i]);
            }
            max_edges = max_edges.max(v[6]);
        }
        for (i, q) in ["graph_lower", "graph_upper", "fpp_lower", "fpp_upper", "graph_exact", "fpp_exact"].iter().enumerate() {
            rep.row(l, q, acc[i].into(), None);
        }
        let n = done.len().max(1) as f64;
        let frac_graph = done.iter().filter(|v| v[0] >= graph_floor).count() as f64 / n;
        let max_upper = done.iter().map(|v| v[1]).fold(0.0, f64::max);
        let frac_fpp = done.iter().filter(|v| v[2] >= fpp_floor).count() as f64 / n;
        rep.value(l, "fraction_graph_above_floor", frac_graph, done.len() as u64, None);
        rep.value(l, "max_graph_upper", max_upper, done.len() as u64, None);
        rep.value(l, "fraction_fpp_above_floor", frac_fpp, done.len() as u64, None);
        rep.checks.push(Check::within(&format!("diameter_graph_floor_{l}"), frac_graph, Some(b.diameter_graph_fraction), None));
        rep.checks.push(Check::below(&format!("diameter_graph_ceiling_{l}"), max_upper, b.diameter_graph_upper));
        rep.checks.push(Check::within(&format!("diameter_fpp_floor_{l}"), frac_fpp, Some(b.diameter_fpp_fraction), None));
    }
    rep.notes.push(format!("graph floor {graph_floor:.6}, fpp floor {fpp_floor:.6} (q1 = {}, p_q = {})", mc.q1, mc.p_q));
    rep.tv_bound = Some(map_tv_bound(law, max_edges));
    Ok(())
}

fn tail_points(hist: &[u64], min_count: u64) -> (Vec<f64>, Vec<f64>) {
    let total: u64 = hist.iter().sum();
    let mut tail = total;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (k, &c) in hist.iter().enumerate() {
        if k >= 1 && tail >= min_count {
            xs.push(k as f64);
            ys.push((tail as f64 / total as f64).ln());
        }
        tail -= c;
    }
    (xs, ys)
}

fn degree(cfg: &ExperimentConfig, law: &Arc<DisplacementLaw>, rep: &mut ExperimentReport) -> Result<(), EstimatorError> {
    let kernel = UntargetedKernel::new(law.clone());
    let l = *cfg.grid.first().ok_or_else(|| EstimatorError::Config("degree needs an ℓ".into()))?;
    let out = collect(cfg, &format!("degree/uniform/{l}"), cfg.samples, |rng| {
        let map = match build_boltzmann(&kernel, l, rng, cfg.edge_cap) {
            Ok(m) => m,
            Err(MapError::Size { .. }) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let deg = map.vertex_degrees();
        Ok(Some((0..VERTICES_PER_MAP).map(|_| deg[uniform_vertex(&map, &deg, rng) as usize]).collect::<Vec<u32>>()))
    })?;
    let mut hist = vec![0u64; 1];
    for d in out.iter().flatten().flatten() {
        let d = *d as usize;
        if d >= hist.len() {
            hist.resize(d + 1, 0);
        }
        hist[d] += 1;
    }
    rep.flagged += out.iter().filter(|x| x.is_none()).count() as u64;
    let (xs, ys) = tail_points(&hist, 30);
    let fit = linear_fit(&xs, &ys);
    let n: u64 = hist.iter().sum();
    rep.value(l, "uniform_vertex_log_tail_slope", fit.slope, n, None);
    rep.value(l, "uniform_vertex_log_tail_r2", fit.r2, n, None);
    rep.checks.push(Check::below("uniform_vertex_slope", fit.slope, 0.0));
    rep.checks.push(Check::within("uniform_vertex_r2", fit.r2, Some(cfg.bands.degree_r2), None));

    let tilted = TiltedKernel::new(law.clone(), Harmonic::DownP(ROOT_DEGREE_TARGET));
    let roots = collect(cfg, "degree/root", 25 * cfg.samples, |rng| {
        Ok(match build_targeted(&tilted, &kernel, 1, rng, cfg.edge_cap, default_budget(ROOT_DEGREE_TARGET)) {
            Ok(m) => Some(m.vertex_degrees()[m.origin(m.root()) as usize]),
            Err(MapError::Size { .. }) => None,
            Err(MapError::Shape(_)) => None,
            Err(e) => return Err(e.into()),
        })
    })?;
    let degrees: Vec<u32> = roots.iter().flatten().copied().collect();
    rep.flagged += (roots.len() - degrees.len()) as u64;
    let total = degrees.len() as f64;
    let mut c_hat = 0.0f64;
    let max_deg = degrees.iter().copied().max().unwrap_or(0);
    for j in 3..=max_deg {
        let count = degrees.iter().filter(|&&d| d >= j).count();
        if count < 30 {
            break;
        }
        c_hat = c_hat.max((count as f64 / total).powf(1.0 / (j - 2) as f64));
    }
    let mut rhist = vec![0u64; max_deg as usize + 1];
    for &d in &degrees {
        rhist[d as usize] += 1;
    }
    let (rx, ry) = tail_points(&rhist, 30);
    let rfit = linear_fit(&rx, &ry);
    rep.value(ROOT_DEGREE_TARGET, "root_degree_geometric_constant", c_hat, degrees.len() as u64, None);
    rep.value(ROOT_DEGREE_TARGET, "root_degree_log_tail_slope", rfit.slope, degrees.len() as u64, None);
    rep.checks.push(Check::within("root_degree_constant_below_one", c_hat, Some(0.0), Some(1.0 - f64::EPSILON)));
    rep.notes.push(format!(
        "root degree measured on maps with a root 2-face and a target face of half-degree {ROOT_DEGREE_TARGET}"
    ));
    Ok(())
}
