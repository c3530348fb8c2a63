use std::fs::File;
use std::io::{BufReader, BufWriter};

use proptest::prelude::*;

use evolab_core::engine::{apply, simulate};
use evolab_core::functions::{Constant, CosineProduct, GaussianBump, Linear};
use evolab_core::inequalities::{
    blowup_exponent_fit, gradient_estimate_check, harnack_check, potential_contraction_check,
    Budget, Verdict,
};
use evolab_core::io::{read_ensemble, write_ensemble};
use evolab_core::measures::{invariance_residual, GibbsDensity};
use evolab_core::oracle::{ou_apply, OuSpec};
use evolab_core::{parse_config, Error, OperatorSpec};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // With x = y the Harnack bound is Jensen's inequality on one ensemble.
    #[test]
    fn harnack_on_the_diagonal_is_jensen(p in 1.1f64..6.0, x in -2.0f64..2.0, seed in 0u64..1000) {
        let spec = OperatorSpec::ou(1.0, 1.0, 1);
        let f = CosineProduct::first_coordinate(1);
        let r = harnack_check(&spec, &f, p, 0.0, 0.3, &[x], &[x], &Budget::new(512, 1e-2, seed)).unwrap();
        prop_assert!(r.rhs.value >= r.lhs.value);
        prop_assert_eq!(r.verdict, Verdict::Pass);
    }
}

#[test]
fn engine_matches_the_mehler_formula() {
    let ou = OuSpec::constant(1.5, 0.7, 2).unwrap();
    let spec = ou.operator();
    let f = GaussianBump::new(0.8, vec![0.3, -0.2]);
    let x = [1.0, -0.5];
    let b = Budget::new(20_000, 1e-3, 5);
    let mc = apply(&spec, &f, 0.0, 0.4, &x, b.n, &b.config, &b.lineage).unwrap();
    let exact = ou_apply(&ou, &f, 0.0, 0.4, &x).unwrap();
    assert!(
        (mc.value - exact).abs() < 4.0 * mc.stderr,
        "{mc:?} vs {exact}"
    );
}

#[test]
fn gradient_of_constants_vanishes() {
    let spec = OperatorSpec::power(4.0, 1);
    let r = gradient_estimate_check(
        &spec,
        &Constant(3.0),
        2.0,
        0.0,
        0.5,
        &[1.0],
        &Budget::new(64, 1e-2, 0),
    )
    .unwrap();
    assert_eq!((r.lhs.value, r.rhs.value), (0.0, 0.0));
    assert_eq!(r.verdict, Verdict::Pass);
}

#[test]
fn linear_gradient_contracts_at_rate_theta() {
    let spec = OperatorSpec::ou(2.0, 1.0, 1);
    let f = Linear {
        coeffs: vec![1.0],
        intercept: 0.0,
    };
    let r = gradient_estimate_check(
        &spec,
        &f,
        1.0,
        0.0,
        0.5,
        &[0.0],
        &Budget::new(2_000, 1e-3, 1),
    )
    .unwrap();
    assert!((r.lhs.value - (-1.0f64).exp()).abs() < 2e-3, "{r:?}");
}

#[test]
fn configured_potential_contracts() {
    let cfg = parse_config(
        "dimension = 1\n[diffusion]\nq = 1.0\n[drift]\npreset = \"power\"\nkappa = 4\n\
         [potential]\nexpr = \"1 + x1^2\"\nc0 = 1.0\n",
    )
    .unwrap();
    let pot = cfg.potential.expect("potential section");
    let f = GaussianBump::new(1.0, vec![0.0]);
    let r = potential_contraction_check(
        &cfg.spec,
        &pot,
        &f,
        0.0,
        0.5,
        &[0.5],
        &Budget::new(4_000, 1e-2, 2),
    )
    .unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    assert!(r.margin.value > 0.0);
}

#[test]
fn invariance_of_constants_is_exact() {
    let spec = OperatorSpec::power(4.0, 1);
    let b = Budget::new(100, 1e-2, 0);
    let r = invariance_residual(
        &spec,
        &Constant(1.5),
        0.0,
        0.5,
        b.n,
        10.0,
        &b.config,
        &b.lineage,
    )
    .unwrap();
    assert_eq!(r.residual.value, 0.0);
    assert_eq!(r.propagated.value, 1.5);
}

#[test]
fn ou_has_no_heat_kernel_blowup() {
    let spec = OperatorSpec::ou(1.0, 1.0, 1);
    let density = GibbsDensity::new(&spec).unwrap();
    let r = blowup_exponent_fit(
        &spec,
        &density,
        &[0.1, 0.2, 0.3, 0.4, 0.5],
        0.0,
        &[vec![0.0]],
        &Budget::new(100, 1e-2, 0),
    );
    assert!(matches!(r, Err(Error::RegimeMismatch { .. })));
}

#[test]
fn ensemble_dump_survives_a_file() {
    let spec = OperatorSpec::power(4.0, 2);
    let b = Budget::new(300, 1e-2, 9);
    let ens = simulate(&spec, 0.0, 0.2, &[0.5, 0.5], b.n, &b.config, &b.lineage).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("paths.evoens");
    write_ensemble(BufWriter::new(File::create(&path).unwrap()), &ens, 42).unwrap();
    let (back, hash) = read_ensemble(BufReader::new(File::open(&path).unwrap())).unwrap();
    assert_eq!(hash, 42);
    assert_eq!(back.states, ens.states);
    assert_eq!(back.divergent, ens.divergent);
}
