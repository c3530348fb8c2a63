//! Shared fixtures for the criterion benches.

use evolab_core::engine::{simulate, PathConfig, SeedLineage};
use evolab_core::measures::EmpiricalMeasure;
use evolab_core::{parse_config, OperatorSpec};

pub const STEP: f64 = 1e-3;

/// The presets the engine is tuned for, plus an expression drift that goes
/// through the bytecode evaluator.
pub fn specs() -> Vec<(&'static str, OperatorSpec)> {
    let expr = parse_config(
        "dimension = 1\n[diffusion]\nq = 1.0\n[drift]\nexpr = \"-x1 - x1^3\"\n\
         [constants]\nr0 = -1.0\n",
    )
    .expect("bench config")
    .spec;
    vec![
        ("ou", OperatorSpec::ou(1.0, 1.0, 1)),
        ("power4", OperatorSpec::power(4.0, 1)),
        ("expr", expr),
        ("ou_d4", OperatorSpec::ou(1.0, 1.0, 4)),
    ]
}

/// Particles of `μ_0` for `spec`, cheap enough to build per bench.
pub fn particles(spec: &OperatorSpec, n: usize) -> EmpiricalMeasure {
    let ens = simulate(
        spec,
        0.0,
        5.0,
        &vec![0.0; spec.dim],
        n,
        &PathConfig::with_step(1e-2),
        &SeedLineage::new(7),
    )
    .expect("burn-in");
    EmpiricalMeasure {
        time_tag: 0.0,
        dim: spec.dim,
        particles: ens.states,
        burn_in: 5.0,
        start: vec![0.0; spec.dim],
        lineage: SeedLineage::new(7),
        spec_hash: spec.spec_hash,
        coupling_bias: 0.0,
        dropped: ens.divergent,
    }
}
