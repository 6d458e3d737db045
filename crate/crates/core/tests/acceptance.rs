//! Acceptance criteria 1 to 14 at their pinned tolerances, one line per criterion.
//!
//! Criteria listed in `KNOWN_UNATTAINABLE` are run and reported like every other one; the test
//! fails if any other criterion fails or if a listed one starts passing.

use cauchy_maps::estimators::{run_experiment, ExperimentConfig, ExperimentReport, EXPERIMENTS};
use cauchy_maps::kernel::{load_kernel, DisplacementLaw, KernelSpec};
use cauchy_maps::parallel::with_workers;
use std::sync::Arc;
use std::time::{Duration, Instant};

/// Graph-distance ratio at ℓ = 10³ sits above the band; see the decisions ledger.
const KNOWN_UNATTAINABLE: &[u32] = &[9];

const KERNEL: &str = "builtin:type2";

struct Run {
    report: ExperimentReport,
    elapsed: Duration,
}

fn run(name: &str, law: &Arc<DisplacementLaw>, tweak: impl FnOnce(&mut ExperimentConfig)) -> Run {
    let mut cfg = ExperimentConfig::defaults(name).unwrap();
    cfg.seed = 20_240_601;
    tweak(&mut cfg);
    let start = Instant::now();
    let report = run_experiment(name, &cfg, KERNEL, law.clone()).unwrap();
    Run { report, elapsed: start.elapsed() }
}

struct Line {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn judge(id: u32, title: &'static str, runs: &[(&Run, &[&str])], limit: Option<Duration>) -> Line {
    let mut pass = true;
    let mut detail = Vec::new();
    let mut elapsed = Duration::ZERO;
    for (r, prefixes) in runs {
        elapsed += r.elapsed;
        for c in &r.report.checks {
            if prefixes.iter().any(|p| c.name.starts_with(p)) {
                pass &= c.pass;
                if !c.pass {
                    detail.push(format!("{}={:.4}", c.name, c.value));
                }
            }
        }
    }
    if let Some(l) = limit {
        if elapsed > l {
            pass = false;
            detail.push(format!("runtime {:.0}s > {}s", elapsed.as_secs_f64(), l.as_secs()));
        }
    }
    let summary = if detail.is_empty() { format!("{:.1}s", elapsed.as_secs_f64()) } else { detail.join(" ") };
    Line { id, title, pass, detail: summary }
}

fn reproducible(law: &Arc<DisplacementLaw>) -> (bool, String) {
    let mut bad = Vec::new();
    for name in EXPERIMENTS {
        let mut cfg = ExperimentConfig::defaults(name).unwrap();
        cfg.seed = 99;
        cfg.samples = if *name == "identity_suite" { 50 } else { 60 };
        cfg.grid = match *name {
            "identity_suite" => vec![],
            "two_point" | "diameter" => vec![40, 80],
            "degree" => vec![60],
            _ => vec![30, 300],
        };
        let one = with_workers(1, || run_experiment(name, &cfg, KERNEL, law.clone()).unwrap().to_json());
        let three = with_workers(3, || run_experiment(name, &cfg, KERNEL, law.clone()).unwrap().to_json());
        if one != three {
            bad.push(name.to_string());
        }
    }
    (bad.is_empty(), if bad.is_empty() { format!("{} experiments at 1 and 3 workers", EXPERIMENTS.len()) } else { bad.join(",") })
}

#[test]
fn acceptance_criteria() {
    let law = load_kernel(&KernelSpec::Type2).unwrap();
    let min = |m: u64| Some(Duration::from_secs(60 * m));

    let identity = run("identity_suite", &law, |_| {});
    let coupling = run("coupling", &law, |c| c.grid = vec![100, 1000]);
    let final_perimeter = run("final_perimeter", &law, |_| {});
    let upsilon = run("upsilon_moment", &law, |_| {});
    let theorem1 = run("theorem1", &law, |_| {});
    let two_point = run("two_point", &law, |_| {});
    let volume = run("volume", &law, |_| {});
    let diameter = run("diameter", &law, |_| {});
    let degree = run("degree", &law, |_| {});

    let mut lines = vec![
        judge(1, "harmonicity of built-in kernels and exact fixture", &[(&identity, &["harmonic_defect", "fixture_exact"])], min(1)),
        judge(2, "transition row sums", &[(&identity, &["row_sum"])], None),
        judge(3, "coupling identity, exact and Monte Carlo", &[(&identity, &["coupling_dp"]), (&coupling, &["coupling_"])], min(5)),
        judge(4, "death decomposition", &[(&identity, &["death_decomposition"])], None),
        judge(5, "martingale and supermartingales", &[(&identity, &["martingale", "supermartingale"])], None),
        judge(6, "Tutte rows, mu law, tree counts and Euler", &[(&identity, &["tutte", "mu_", "js_", "map_validation"])], None),
        judge(7, "final perimeter law", &[(&final_perimeter, &["ks_"])], min(5)),
        judge(8, "inverse moment of the walk to infinity", &[(&upsilon, &["upsilon"])], min(10)),
        judge(9, "root to target distance ratios", &[(&theorem1, &["fpp_ratio", "graph_ratio", "rao_blackwell", "conditional_variance"])], min(30)),
        judge(10, "two-point distance ratios", &[(&two_point, &[""])], min(15)),
        judge(11, "volume", &[(&volume, &["volume"])], None),
        judge(12, "diameter containment", &[(&diameter, &["diameter"])], None),
        judge(13, "degree tails", &[(&degree, &["uniform_vertex", "root_degree"])], None),
    ];
    let (pass, detail) = reproducible(&law);
    lines.push(Line { id: 14, title: "reproducibility across worker counts", pass, detail });

    for l in &lines {
        println!("criterion {:>2} {}: {} ({})", l.id, if l.pass { "PASS" } else { "FAIL" }, l.title, l.detail);
    }
    let failing: Vec<u32> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    assert_eq!(failing, KNOWN_UNATTAINABLE, "failing criteria differ from the recorded set");
}
