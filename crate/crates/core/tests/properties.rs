use proptest::prelude::*;

use evolab_core::engine::SeedLineage;
use evolab_core::inequalities::constants::{c1_coefficient, c_kappa, mtilde_bound};
use evolab_core::inequalities::{fit_blowup, verdict};
use evolab_core::io::{read_measure, write_measure};
use evolab_core::measures::{exp_moment, EmpiricalMeasure};
use evolab_core::stats::{compensated_sum, linear_fit};
use evolab_core::McEstimate;

fn measure(particles: Vec<f64>) -> EmpiricalMeasure {
    EmpiricalMeasure {
        time_tag: 0.0,
        dim: 1,
        particles,
        burn_in: 10.0,
        start: vec![0.0],
        lineage: SeedLineage::new(1),
        spec_hash: 0,
        coupling_bias: 0.0,
        dropped: 0,
    }
}

proptest! {
    #[test]
    fn verdict_is_scale_invariant(
        m in -10.0f64..10.0,
        se in 0.0f64..5.0,
        rhs in -10.0f64..10.0,
        c in 1e-3f64..1e3,
    ) {
        let a = verdict(McEstimate::new(m, se, 100), rhs);
        let b = verdict(McEstimate::new(m, se, 100).scale(c), rhs * c);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn exact_margins_are_never_inconclusive(m in -10.0f64..10.0, rhs in -10.0f64..10.0) {
        let v = verdict(McEstimate::exact(m), rhs);
        prop_assert_eq!(v == evolab_core::inequalities::Verdict::Pass, m >= 0.0);
    }

    #[test]
    fn blowup_fit_recovers_power_laws(gamma in 0.5f64..3.0, c in 0.1f64..10.0) {
        let deltas = [0.1f64, 0.15, 0.22, 0.33, 0.5, 0.75];
        let logs: Vec<f64> = deltas.iter().map(|d| c * d.powf(-gamma)).collect();
        prop_assume!(logs.iter().all(|l| *l > 0.0));
        let fit = fit_blowup(&deltas, &logs, 4.0).unwrap();
        prop_assert!((fit.slope - gamma).abs() < 1e-9);
        prop_assert!((fit.c_fit - c).abs() < 1e-8 * c);
        prop_assert!(fit.rss < 1e-18);
    }

    #[test]
    fn c_kappa_bounds_the_quadratic_gain(
        kappa in 2.5f64..8.0,
        k in 0.1f64..5.0,
        big_lambda in 0.1f64..5.0,
        lambda in 0.01f64..5.0,
        y in 0.0f64..20.0,
    ) {
        let gain = 2.0 * lambda * big_lambda * y * y - 0.5 * k * y.powf(kappa);
        let bound = c_kappa(kappa, k, big_lambda) * lambda.powf(kappa / (kappa - 2.0));
        prop_assert!(gain <= bound * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn c1_bounds_the_defect(kappa in 2.5f64..8.0, delta in 0.1f64..5.0, lambda in 0.01f64..5.0, t in 0.0f64..20.0) {
        let c1 = c1_coefficient(kappa, delta).unwrap();
        let lhs = delta * t.powf(kappa) - lambda * t * t;
        prop_assert!(lhs >= -c1 * lambda.powf(kappa / (kappa - 2.0)) * (1.0 + 1e-12) - 1e-12);
    }

    #[test]
    fn mtilde_is_monotone_in_delta(lambda in 0.05f64..2.0, d1 in 0.05f64..2.0, d2 in 0.05f64..2.0) {
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        let a = mtilde_bound(4.0, 1.0, 1.0, 2, lo, lambda).unwrap();
        let b = mtilde_bound(4.0, 1.0, 1.0, 2, hi, lambda).unwrap();
        prop_assert!(a.log_bound >= b.log_bound);
    }

    #[test]
    fn exp_moment_increases_with_lambda(
        xs in prop::collection::vec(-3.0f64..3.0, 16..200),
        l1 in 0.01f64..1.0,
        l2 in 0.01f64..1.0,
    ) {
        let (lo, hi) = if l1 < l2 { (l1, l2) } else { (l2, l1) };
        let m = measure(xs);
        let a = exp_moment(&m, lo, 2.0).unwrap();
        let b = exp_moment(&m, hi, 2.0).unwrap();
        prop_assert!(a.log_value <= b.log_value + 1e-12);
        prop_assert!(a.log_value >= 0.0);
    }

    #[test]
    fn measure_dump_roundtrips(xs in prop::collection::vec(any::<f64>(), 0..64), tag in -5.0f64..5.0) {
        let mut m = measure(xs);
        m.time_tag = tag;
        let mut buf = Vec::new();
        write_measure(&mut buf, &m).unwrap();
        let back = read_measure(&buf[..]).unwrap();
        prop_assert_eq!(back.particles.len(), m.particles.len());
        for (a, b) in back.particles.iter().zip(&m.particles) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        prop_assert_eq!(back.time_tag, tag);
    }

    #[test]
    fn compensated_sum_ignores_order(mut xs in prop::collection::vec(-1e6f64..1e6, 1..300)) {
        let a = compensated_sum(xs.iter().copied());
        xs.reverse();
        let b = compensated_sum(xs.iter().copied());
        let scale: f64 = xs.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
        prop_assert!((a - b).abs() <= 1e-14 * scale);
    }

    #[test]
    fn linear_fit_is_exact_on_lines(a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let xs: Vec<f64> = (0..8).map(|i| i as f64 * 0.3).collect();
        let ys: Vec<f64> = xs.iter().map(|x| a + b * x).collect();
        let (ia, sb, rss) = linear_fit(&xs, &ys);
        prop_assert!((ia - a).abs() < 1e-9 && (sb - b).abs() < 1e-9 && rss < 1e-18);
    }

    #[test]
    fn child_lineages_differ(seed in any::<u64>(), a in 0u64..1000, b in 0u64..1000) {
        prop_assume!(a != b);
        let l = SeedLineage::new(seed);
        prop_assert_ne!(l.child(a), l.child(b));
        prop_assert_eq!(l.child(a), l.child(a));
    }
}
