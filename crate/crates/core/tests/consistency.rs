//! Agreement between independent routes to the same law.

use cauchy_maps::harmonic::Harmonic;
use cauchy_maps::kernel::{load_kernel, KernelSpec};
use cauchy_maps::maps::{bfs_faces, build_targeted, replay_exploration, MapError, MapTarget, UntargetedKernel};
use cauchy_maps::oracles::{dp_history, Transform};
use cauchy_maps::parallel::{map_collect, stream};
use cauchy_maps::peeling::{peel_step, run_exploration, run_layers, ExplorationState, Target};
use cauchy_maps::stats::{chi_square, chi_square_quantile, ks_two_sample, Welford};
use cauchy_maps::walks::{run_walk, TiltedKernel};

#[test]
fn replayed_explorations_follow_the_perimeter_walk() {
    let law = load_kernel(&KernelSpec::Type2).unwrap();
    let (p, cut, probe) = (100u64, 10_000u64, 10usize);
    let tilted = TiltedKernel::new(law.clone(), Harmonic::DownP(p));
    let untargeted = UntargetedKernel::new(law);
    let replays = map_collect(10_000, |i| {
        let mut rng = stream(11, 1, i);
        match build_targeted(&tilted, &untargeted, 1, &mut rng, 5_000_000, 1_000_000) {
            Ok(m) => {
                let r = replay_exploration(&m, None, &mut rng).unwrap();
                let at = probe.min(r.tau as usize - 1);
                Some((r.tau.min(cut) as f64, r.perimeters[at] as f64))
            }
            Err(MapError::Size { .. } | MapError::Shape(_)) => None,
            Err(e) => panic!("{e}"),
        }
    });
    let done: Vec<(f64, f64)> = replays.iter().flatten().copied().collect();
    assert!(done.len() >= 9_950, "too many oversized maps: {}", 10_000 - done.len());
    let direct = map_collect(100_000, |i| {
        let mut states = Vec::with_capacity(probe + 1);
        let s = run_walk(&tilted, 1, cut, &mut stream(11, 2, i), |n, m| {
            if n as usize <= probe {
                states.push(m as f64)
            }
        })
        .unwrap();
        let tau = s.tau.unwrap_or(u64::MAX).min(cut) as f64;
        (tau, *states.last().unwrap())
    });
    let (mut a, mut b): (Vec<f64>, Vec<f64>) = done.iter().copied().unzip();
    let (mut c, mut d): (Vec<f64>, Vec<f64>) = direct.into_iter().unzip();
    let ks_tau = ks_two_sample(&mut a, &mut c);
    let ks_p = ks_two_sample(&mut b, &mut d);
    assert!(ks_tau <= 0.02, "tau KS {ks_tau}");
    assert!(ks_p <= 0.02, "perimeter KS {ks_p}");
}

#[test]
fn layers_height_matches_breadth_first_distance() {
    let law = load_kernel(&KernelSpec::Type2Closed).unwrap();
    let l = 100u64;
    let tilted = TiltedKernel::new(law.clone(), Harmonic::DownP(l));
    let untargeted = UntargetedKernel::new(law);
    let bfs: Vec<Option<f64>> = map_collect(3000, |i| {
        let m = build_targeted(&tilted, &untargeted, 1, &mut stream(12, 1, i), 5_000_000, 1_000_000).ok()?;
        match m.target() {
            Some(MapTarget::Face(f)) => Some(bfs_faces(&m, m.root_face())[f as usize] as f64),
            _ => None,
        }
    });
    let chain: Vec<Option<f64>> = map_collect(3000, |i| {
        let e = run_layers(&tilted, l, 1_000_000, &mut stream(12, 2, i), false).unwrap();
        e.d_gr.map(|d| d as f64)
    });
    let (mut x, mut y) = (Welford::default(), Welford::default());
    bfs.iter().flatten().for_each(|&v| x.push(v));
    chain.iter().flatten().for_each(|&v| y.push(v));
    let z = (x.mean - y.mean).abs() / (x.sem().powi(2) + y.sem().powi(2)).sqrt();
    assert!(z < 4.0, "bfs {} chain {} z {z}", x.mean, y.mean);
}

#[test]
fn fpp_clock_has_the_conditional_law() {
    let law = load_kernel(&KernelSpec::Type2Closed).unwrap();
    let k = TiltedKernel::new(law, Harmonic::DownP(50));
    let mut gap = Welford::default();
    let mut sq = Welford::default();
    for i in 0..10_000 {
        let e = run_exploration(&k, 1, 1_000_000, &mut stream(13, 1, i), false, true).unwrap();
        gap.push(e.d_fpp - e.rb_mean);
        sq.push((e.d_fpp - e.rb_mean).powi(2) - e.rb_var);
    }
    assert!(gap.mean.abs() < 3.0 * gap.sem(), "mean gap {} ± {}", gap.mean, gap.sem());
    assert!(sq.mean.abs() < 3.0 * sq.sem(), "variance gap {} ± {}", sq.mean, sq.sem());
}

#[test]
fn peeling_perimeter_marginal_matches_dp() {
    let law = load_kernel(&KernelSpec::Quad).unwrap();
    let (l, n, m_max) = (3u64, 4u64, 64usize);
    let kernel = TiltedKernel::new(law.clone(), Harmonic::DownP(l));
    let mut counts = vec![0u64; m_max + 2];
    let samples = 200_000u64;
    for i in 0..samples {
        let mut rng = stream(14, 1, i);
        let mut st = ExplorationState::new(Target::Face(l));
        for _ in 0..n {
            peel_step(&mut st, &kernel, &mut rng, false).unwrap();
            if !st.alive {
                break;
            }
        }
        let slot = if st.alive { st.p as usize } else { 0 };
        counts[slot.min(m_max + 1)] += 1;
    }
    let dp = dp_history(&law, Transform::Doob(Harmonic::DownP(l)), 1, n, m_max as u64);
    let last = dp.last().unwrap();
    let mut expected = vec![0.0; m_max + 2];
    expected[0] = last.absorbed * samples as f64;
    for m in 1..=m_max {
        expected[m] = last.probs[m] * samples as f64;
    }
    expected[m_max + 1] = last.escaped * samples as f64;
    let (stat, df) = chi_square(&counts, &expected, 5.0);
    assert!(stat < chi_square_quantile(df, 0.001), "chi2 {stat} df {df}");
}
