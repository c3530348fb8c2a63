//! Estimators of `G(t,s)f`, its spatial gradient, its derivative in `s`, the
//! potential-weighted operator and the evolution law.

use rayon::prelude::*;
use serde::Serialize;

use super::{
    drive, simulate, simulate_on, simulate_weighted, PathConfig, Schedule, SeedLineage, Stepper,
    Visitor,
};
use crate::functions::TestFunction;
use crate::operator::{OperatorSpec, PotentialSpec};
use crate::stats::McEstimate;
use crate::{Error, Result};

/// `(G(t,s)f)(x)`; constants are returned exactly.
#[allow(clippy::too_many_arguments)]
pub fn apply(
    spec: &OperatorSpec,
    f: &dyn TestFunction,
    s: f64,
    t: f64,
    x: &[f64],
    n: usize,
    config: &PathConfig,
    lineage: &SeedLineage,
) -> Result<McEstimate> {
    if let Some(c) = f.constant_value() {
        return Ok(McEstimate::new(c, 0.0, n));
    }
    Ok(simulate(spec, s, t, x, n, config, lineage)?.estimate(|y| f.eval(y)))
}

/// `∇_x (G(t,s)f)(x)` by central differences of step `1e-4 (1 + |x|)`; both
/// evaluations share the lineage, and the estimate is over per-path differences.
#[allow(clippy::too_many_arguments)]
pub fn gradient_apply(
    spec: &OperatorSpec,
    f: &dyn TestFunction,
    s: f64,
    t: f64,
    x: &[f64],
    n: usize,
    config: &PathConfig,
    lineage: &SeedLineage,
) -> Result<Vec<McEstimate>> {
    if f.constant_value().is_some() {
        return Ok(vec![McEstimate::new(0.0, 0.0, n); x.len()]);
    }
    let h = 1e-4 * (1.0 + crate::numdiff::norm(x));
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        let ep = simulate(spec, s, t, &xp, n, config, lineage)?;
        let em = simulate(spec, s, t, &xm, n, config, lineage)?;
        out.push(ep.estimate_indexed(|k, yp| {
            let ym = em.state(k);
            if ym[0].is_nan() {
                0.0
            } else {
                (f.eval(yp) - f.eval(ym)) / (2.0 * h)
            }
        }));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BackwardDerivative {
    /// `(G(t,s+δ)f - G(t,s-δ)f) / 2δ`.
    pub derivative: McEstimate,
    /// `G(t,s)(A(s)f)`.
    pub generator_term: McEstimate,
    /// `|derivative + generator_term|`, estimated path by path.
    pub residual: McEstimate,
}

/// Steps inside `[s-δ, s+δ]`.
const INNER_STEPS: usize = 16;

/// Compares the centred difference in `s` with `-G(t,s)A(s)f`.
///
/// One path per sample is run from `t` to `s-δ` and observed at `s+δ`, `s`
/// and `s-δ`. The stochastic integral `Σ ∇f(X_k)·ΔW_k` over the last
/// `2δ` is added to the difference as a zero-mean control variate.
#[allow(clippy::too_many_arguments)]
pub fn backward_derivative_check(
    spec: &OperatorSpec,
    f: &dyn TestFunction,
    s: f64,
    t: f64,
    x: &[f64],
    n: usize,
    delta: f64,
    config: &PathConfig,
    lineage: &SeedLineage,
) -> Result<BackwardDerivative> {
    if !(delta > 0.0) || !(t - s > delta) {
        return Err(Error::precondition(format!(
            "need t - s > delta > 0, got t - s = {}, delta = {delta}",
            t - s
        )));
    }
    if f.constant_value().is_some() {
        let z = McEstimate::new(0.0, 0.0, n);
        return Ok(BackwardDerivative {
            derivative: z,
            generator_term: z,
            residual: z,
        });
    }
    let first = t - (s + delta);
    let sched = Schedule::segments(
        spec,
        &[t, s + delta, s - delta],
        &[config.step.min(first), 2.0 * delta / INNER_STEPS as f64],
    )?;
    let k_hi = sched.steps.len() - INNER_STEPS;
    let k_mid = k_hi + INNER_STEPS / 2;
    let stepper = Stepper::new(spec, &sched, config);

    struct Observe<'a> {
        f: &'a dyn TestFunction,
        spec: &'a OperatorSpec,
        k_hi: usize,
        k_mid: usize,
        s: f64,
        f_hi: f64,
        gen_mid: f64,
        control: f64,
        grad: Vec<f64>,
    }
    impl Visitor for Observe<'_> {
        fn visit(&mut self, k: usize, _tau: f64, _h: f64, x: &[f64], dw: &[f64]) -> Result<()> {
            if k < self.k_hi {
                return Ok(());
            }
            if k == self.k_hi {
                self.f_hi = self.f.eval(x);
            }
            if k == self.k_mid {
                self.f.gradient(x, &mut self.grad);
                let hess = self.f.hessian(x);
                self.gen_mid = self
                    .spec
                    .generator_from_derivatives(self.s, x, &self.grad, &hess)?;
            }
            self.f.gradient(x, &mut self.grad);
            self.control += crate::numdiff::dot(&self.grad, dw);
            Ok(())
        }
    }

    let per_path = drive(n, lineage, |_, rng| {
        let mut y = x.to_vec();
        let mut obs = Observe {
            f,
            spec,
            k_hi,
            k_mid,
            s,
            f_hi: 0.0,
            gen_mid: 0.0,
            control: 0.0,
            grad: vec![0.0; x.len()],
        };
        let ok = stepper.run(&mut y, rng, &mut obs)?;
        if !ok {
            return Ok(None);
        }
        let d = (obs.f_hi - f.eval(&y) + obs.control) / (2.0 * delta);
        Ok(Some((d, obs.gen_mid)))
    })?;
    let divergent = per_path.iter().flatten().filter(|v| v.is_none()).count();
    if divergent as f64 > super::MAX_DIVERGENT_FRACTION * n as f64 {
        return Err(Error::Blowup {
            divergent,
            total: n,
        });
    }
    let est = |g: &dyn Fn(f64, f64) -> f64| {
        let accs: Vec<_> = per_path
            .iter()
            .map(|shard| {
                let mut a = crate::stats::Accumulator::default();
                for (d, m) in shard.iter().flatten() {
                    a.push(g(*d, *m));
                }
                a
            })
            .collect();
        super::merge(&accs).estimate()
    };
    Ok(BackwardDerivative {
        derivative: est(&|d, _| d),
        generator_term: est(&|_, m| m),
        residual: est(&|d, m| d + m).abs(),
    })
}

/// `(G_c(t,s)f)(x) = E f(X) exp(-∫ c(τ, X_τ) dτ)`. A constant potential
/// factors out exactly: the result is `e^{-c Δ}` times [`apply`].
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_apply(
    spec: &OperatorSpec,
    potential: &PotentialSpec,
    f: &dyn TestFunction,
    s: f64,
    t: f64,
    x: &[f64],
    n: usize,
    config: &PathConfig,
    lineage: &SeedLineage,
) -> Result<McEstimate> {
    match potential {
        PotentialSpec::Constant(c) => {
            Ok(apply(spec, f, s, t, x, n, config, lineage)?.scale((-c * (t - s)).exp()))
        }
        PotentialSpec::Field { c, .. } => {
            let e = simulate_weighted(spec, c.as_ref(), s, t, x, n, config, lineage)?;
            Ok(e.estimate(|y| f.eval(y)))
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChapmanKolmogorov {
    pub direct: McEstimate,
    pub nested: McEstimate,
    /// `|direct - nested|` with the combined standard error.
    pub residual: McEstimate,
}

/// Inner paths per outer path in the nested estimate.
pub const NESTED_INNER: usize = 16;

/// `G(t,s)f` directly against `G(t,r)[G(r,s)f]` with the inner operator
/// estimated from [`NESTED_INNER`] paths per outer endpoint.
#[allow(clippy::too_many_arguments)]
pub fn chapman_kolmogorov_check(
    spec: &OperatorSpec,
    f: &dyn TestFunction,
    s: f64,
    r: f64,
    t: f64,
    x: &[f64],
    n: usize,
    config: &PathConfig,
    lineage: &SeedLineage,
) -> Result<ChapmanKolmogorov> {
    if !(s < r && r < t) {
        return Err(Error::precondition(format!(
            "need s < r < t, got {s}, {r}, {t}"
        )));
    }
    if let Some(c) = f.constant_value() {
        let e = McEstimate::new(c, 0.0, n);
        return Ok(ChapmanKolmogorov {
            direct: e,
            nested: e,
            residual: McEstimate::new(0.0, 0.0, n),
        });
    }
    let direct = apply(spec, f, s, t, x, n, config, &lineage.child(1))?;
    let outer = simulate(spec, r, t, x, n, config, &lineage.child(2))?;
    let inner_lineage = lineage.child(3);
    let inner_sched = Schedule::uniform(spec, r, s, config.step)?;
    let values: Vec<Option<f64>> = (0..outer.len())
        .into_par_iter()
        .map(|i| {
            let y = outer.state(i);
            if y[0].is_nan() {
                return Ok(None);
            }
            let e = simulate_on(
                spec,
                &inner_sched,
                y,
                NESTED_INNER,
                config,
                &inner_lineage.offset_shards(i as u64),
            )?;
            Ok(Some(e.estimate(|z| f.eval(z)).value))
        })
        .collect::<Result<_>>()?;
    let nested = McEstimate::from_samples(values.into_iter().flatten());
    Ok(ChapmanKolmogorov {
        direct,
        nested,
        residual: direct.minus(nested).abs(),
    })
}
