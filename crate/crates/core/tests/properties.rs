use cauchy_maps::harmonic::{h_down, h_down_p, h_up, Harmonic};
use cauchy_maps::kernel::{
    load_kernel, model_constants, nu_from_weights_with_tail, weights_from_nu, DisplacementLaw, KernelSpec,
};
use cauchy_maps::maps::{
    bfs_faces, build_boltzmann, rezip, split_statistic, unzip, PlanarMap, SplitOutcome, UntargetedKernel,
};
use cauchy_maps::oracles::coupling_dp;
use cauchy_maps::parallel::{map_reduce, stream, with_workers};
use cauchy_maps::peeling::run_exploration;
use cauchy_maps::stats::Welford;
use cauchy_maps::walks::{final_perimeter_cdf, TiltedKernel};
use proptest::prelude::*;
use rand::Rng;
use std::sync::Arc;

fn closed() -> Arc<DisplacementLaw> {
    load_kernel(&KernelSpec::Type2Closed).unwrap()
}

fn builtin(i: usize) -> Arc<DisplacementLaw> {
    let spec = [KernelSpec::Type2, KernelSpec::Type2Closed, KernelSpec::Quad][i % 3].clone();
    load_kernel(&spec).unwrap()
}

fn small_map(seed: u64, l: u64) -> PlanarMap {
    let k = UntargetedKernel::new(closed());
    build_boltzmann(&k, l, &mut stream(seed, 77, l), 500_000).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn harmonic_product_identity(l in 1i64..5000, p in 1u64..5000) {
        let lhs = h_down_p(p, l) * 2.0 * (l as f64 + p as f64);
        let rhs = h_down(p as i64) * h_up(l);
        prop_assert!((lhs / rhs - 1.0).abs() < 1e-12);
    }

    #[test]
    fn builtin_kernels_are_harmonic(i in 0usize..3, l in 1u64..=1000) {
        let law = builtin(i);
        prop_assert!(law.harmonic_defect(Harmonic::Down, l).abs() < 1e-8);
        prop_assert!(law.harmonic_defect(Harmonic::Up, l).abs() < 1e-8);
    }

    #[test]
    fn tilted_rows_sum_to_one(i in 0usize..3, m in 1u64..200_000, p in 1u64..2000, kind in 0u8..3) {
        let h = match kind { 0 => Harmonic::Down, 1 => Harmonic::Up, _ => Harmonic::DownP(p) };
        let k = TiltedKernel::new(builtin(i), h);
        prop_assert!((k.row_sum(m) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gamma_is_a_lower_bound_beyond_the_table(k in 4097u64..10_000_000, l in 1u64..10_000_000) {
        let law = builtin(0);
        let gamma = model_constants(&law, &[0.05]).unwrap().gamma_q;
        let v = k as f64 * (law.lower(k) - law.pmf(-((l + k) as i64)));
        prop_assert!(v >= gamma - 1e-10);
    }

    #[test]
    fn coupling_dp_on_fixture(l in 1u64..=5, n in 1u64..=10) {
        let law = load_kernel(&KernelSpec::Quad).unwrap();
        let c = coupling_dp(&law, l, n, 64);
        prop_assert!(c.defect() + c.truncation_bound < 1e-8);
    }

    #[test]
    fn layers_chain_invariants(seed in any::<u64>(), l in 1u64..300) {
        let k = TiltedKernel::new(closed(), Harmonic::DownP(l));
        let e = run_exploration(&k, 1, 20_000, &mut stream(seed, 1, 0), true, true).unwrap();
        let rows = &e.trajectory;
        for w in rows.windows(2) {
            prop_assert!(w[1].h >= w[0].h && w[1].h <= w[0].h + 1);
            prop_assert!(w[1].t >= w[0].t);
            if w[1].p > 0 {
                prop_assert!(w[1].d >= 1 && w[1].d <= 2 * w[1].p as u64);
            }
        }
        if let (Some(_), Some(d)) = (e.tau, e.d_gr) {
            prop_assert_eq!(d, rows[rows.len() - 2].h + 1);
        }
    }

    #[test]
    fn final_perimeter_cdf_is_a_distribution(u in 0.0f64..1e6, v in 0.0f64..1e6) {
        let (a, b) = (u.min(v), u.max(v));
        prop_assert!(final_perimeter_cdf(a) <= final_perimeter_cdf(b) + 1e-15);
        prop_assert!((0.0..=1.0).contains(&final_perimeter_cdf(a)));
    }

    #[test]
    fn welford_merge_is_order_free(xs in prop::collection::vec(-1e3f64..1e3, 2..200), cut in 0usize..200) {
        let cut = cut % xs.len();
        let mut all = Welford::default();
        let (mut a, mut b) = (Welford::default(), Welford::default());
        for (i, &x) in xs.iter().enumerate() {
            all.push(x);
            if i < cut { a.push(x) } else { b.push(x) }
        }
        let m = a.merge(b);
        prop_assert_eq!(m.n, all.n);
        prop_assert!((m.mean - all.mean).abs() < 1e-9);
        prop_assert!((m.variance() - all.variance()).abs() < 1e-6 * (1.0 + all.variance()));
    }

    #[test]
    fn reductions_ignore_worker_count(seed in any::<u64>(), n in 1u64..3000) {
        let f = || map_reduce(n, Welford::default, |i| {
            let mut w = Welford::default();
            w.push(stream(seed, 5, i).gen::<f64>());
            w
        }, |a, b| a.merge(b));
        let one = with_workers(1, f);
        let four = with_workers(4, f);
        prop_assert_eq!(one.mean.to_bits(), four.mean.to_bits());
        prop_assert_eq!(one.m2.to_bits(), four.m2.to_bits());
    }

    #[test]
    fn split_statistic_grows_as_lag_shrinks(ts in prop::collection::vec((1u64..500, prop::option::of(0u64..500)), 1..50)) {
        let o: Vec<SplitOutcome> = ts.iter().map(|&(tau, s)| SplitOutcome { tau, split_time: s.map(|s| s.min(tau)) }).collect();
        let mut last = -1.0;
        for eps in [0.2, 0.1, 0.05, 0.0] {
            let v = split_statistic(&o, 100, eps);
            prop_assert!(v >= last);
            last = v;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn built_maps_are_valid_planar_maps(seed in any::<u64>(), l in 1u64..40) {
        let m = small_map(seed, l);
        prop_assert!(m.validate().is_ok());
        prop_assert_eq!(m.degree(m.root_face()) as u64, 2 * l);
        prop_assert_eq!(m.vertices() as i64 - m.edges() as i64 + m.faces() as i64, 2);
        let d = bfs_faces(&m, m.root_face());
        prop_assert_eq!(d[m.root_face() as usize], 0);
        prop_assert!(d.iter().all(|&x| x != u32::MAX));
    }

    #[test]
    fn map_files_round_trip(seed in any::<u64>(), l in 1u64..20) {
        let m = small_map(seed, l);
        prop_assert_eq!(PlanarMap::from_document(&m.to_document()).unwrap(), m.clone());
        let mut buf = Vec::new();
        m.write_binary(&mut buf).unwrap();
        prop_assert_eq!(PlanarMap::read_binary(&buf[..]).unwrap(), m);
    }

    #[test]
    fn unzip_then_rezip_is_identity(seed in any::<u64>(), l in 1u64..20, pick in any::<u32>()) {
        let m = small_map(seed, l);
        let h = pick % m.half_edges() as u32;
        let z = unzip(&m, h).unwrap();
        prop_assert!(z.validate().is_ok());
        prop_assert_eq!(z.edges(), m.edges() + 1);
        prop_assert_eq!(rezip(&z).unwrap(), m);
    }

    #[test]
    fn weights_round_trip(i in 0usize..2, k in 1i64..4096) {
        let law = builtin(i);
        let (w, ln_w) = weights_from_nu(&law).unwrap();
        let back = nu_from_weights_with_tail(&w, &ln_w, law.neg_tail().clone()).unwrap();
        for x in [k, -k, 0] {
            let (a, b) = (law.pmf(x), back.pmf(x));
            prop_assert!(a == b || (a / b - 1.0).abs() < 1e-12, "{} {} {}", x, a, b);
        }
    }
}
