//! Checks against the evolution system of measures: log-Sobolev inequalities
//! of `μ_s`, the hypercontractive recursion, the supercontractive norm bound
//! and the empirical defect profile `β̂(ε)`.

use serde::Serialize;

use super::constants::{
    c1_coefficient, cpq_lambda0, hypercontractive_exponent, log_cpq, super_lsi_constants,
};
use super::report::{Budget, InequalityReport};
use crate::functions::{grad_norm, Family, TestFunction};
use crate::measures::{
    exp_moment, lp_norm, operator_on_particles, EmpiricalMeasure, ExpMomentEstimate,
};
use crate::operator::OperatorSpec;
use crate::stats::{blocked_estimate, linear_fit, linearized, mean, McEstimate, LOG_FLOOR};
use crate::{Error, Result};

/// Inner paths per particle for nested operator norms.
pub const DEFAULT_INNER: usize = 16;

fn ordered(mu_s: &EmpiricalMeasure, mu_t: &EmpiricalMeasure) -> Result<f64> {
    let dt = mu_t.time_tag - mu_s.time_tag;
    if !(dt >= 0.0) {
        return Err(Error::precondition(format!(
            "need the target measure at t >= s, got t = {}, s = {}",
            mu_t.time_tag, mu_s.time_tag
        )));
    }
    Ok(dt)
}

/// Smallest particle radius `R` with `μ(B(0,R)) > mass`.
pub fn mass_radius(measure: &EmpiricalMeasure, mass: f64) -> f64 {
    let mut norms: Vec<f64> = measure.iter().map(crate::numdiff::norm).collect();
    norms.sort_by(f64::total_cmp);
    let k = ((mass * norms.len() as f64).floor() as usize).min(norms.len() - 1);
    norms[k]
}

/// `C_{p,q}(Δ)` with its ingredients.
#[derive(Debug, Clone, Serialize)]
pub struct NormConstant {
    pub p: f64,
    pub q: f64,
    pub dt: f64,
    /// `μ_t(B(0,R)) > 2^{-p}`.
    pub radius: f64,
    pub lambda0: f64,
    pub moment: ExpMomentEstimate,
    pub log_value: f64,
}

impl NormConstant {
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }
}

/// `C_{p,q}(Δ) = 2^q exp(R²/(2η0(p-1)Δ)) ‖φ_λ0‖_{1,μ_s}`; fails with
/// [`Error::ExpMomentDiverged`] when the exponential moment is flagged.
pub fn norm_constant(
    spec: &OperatorSpec,
    mu_s: &EmpiricalMeasure,
    mu_t: &EmpiricalMeasure,
    p: f64,
    q: f64,
) -> Result<NormConstant> {
    let dt = ordered(mu_s, mu_t)?;
    if !(q > p && p > 1.0) {
        return Err(Error::DegenerateExponents { p, q });
    }
    if !(dt > 0.0) {
        return Err(Error::precondition("C_{p,q} needs t > s"));
    }
    let radius = mass_radius(mu_t, 2f64.powf(-p));
    let lambda0 = cpq_lambda0(p, q, spec.eta0, dt);
    let moment = exp_moment(mu_s, lambda0, 2.0)?;
    if moment.divergent {
        return Err(Error::ExpMomentDiverged {
            lambda: lambda0,
            tail_index: moment.tail_index,
        });
    }
    let log_value = log_cpq(p, q, spec.eta0, dt, radius, moment.log_value);
    Ok(NormConstant {
        p,
        q,
        dt,
        radius,
        lambda0,
        moment,
        log_value,
    })
}

/// `(ε, β)` of a defective log-Sobolev inequality for `μ_s`.
#[derive(Debug, Clone, Serialize)]
pub struct LsiDefect {
    pub epsilon: f64,
    pub beta: f64,
    pub source: String,
}

impl LsiDefect {
    /// The Gaussian inequality for `N(0, σ² I)`: `ε = σ²`, `β = 0`.
    pub fn gaussian(variance: f64) -> Self {
        LsiDefect {
            epsilon: variance,
            beta: 0.0,
            source: format!("gaussian(variance={variance})"),
        }
    }

    /// `ε = M1`, `β = M2` obtained from the norm constant `C_{p,q}(Δ)`.
    pub fn from_norm_constant(spec: &OperatorSpec, c: &NormConstant) -> Result<Self> {
        let (m1, _) = super_lsi_constants(c.p, c.q, c.dt, 1.0, spec.lambda_max, spec.r0)?;
        let m2 = c.p * c.q / (2.0 * (c.q - c.p)) * c.log_value;
        Ok(LsiDefect {
            epsilon: m1,
            beta: m2,
            source: format!("norm_constant(p={}, q={}, dt={})", c.p, c.q, c.dt),
        })
    }
}

/// Particle columns of the three integrals in the log-Sobolev inequality.
struct LsiTerms {
    /// `f²`
    u: Vec<f64>,
    /// `f² log f²`
    a: Vec<f64>,
    /// `|∇f|²`
    g: Vec<f64>,
}

impl LsiTerms {
    fn new(measure: &EmpiricalMeasure, f: &dyn TestFunction) -> Self {
        let u = measure.values(|x| f.eval(x).powi(2));
        let a = u.iter().map(|u| u * u.max(LOG_FLOOR).ln()).collect();
        let g = measure.values(|x| grad_norm(f, x).powi(2));
        LsiTerms { u, a, g }
    }

    /// `∫ f² log(|f|/‖f‖₂) = (∫ f² log f² - ‖f‖² log ‖f‖²) / 2`.
    fn entropy(&self) -> (f64, f64, f64) {
        let (mu, ma, mg) = (mean(&self.u), mean(&self.a), mean(&self.g));
        (0.5 * (ma - mu * mu.max(LOG_FLOOR).ln()), mu, mg)
    }
}

/// `∫ f² log(|f|/‖f‖_{2,μ_s}) dμ_s <= ε ‖∇f‖² + β ‖f‖²` on particles of
/// `μ_s`. Constants give an exact zero on the left.
pub fn measure_lsi_check(
    mu_s: &EmpiricalMeasure,
    f: &dyn TestFunction,
    defect: &LsiDefect,
) -> Result<InequalityReport> {
    let n = mu_s.len();
    let (eps, beta) = (defect.epsilon, defect.beta);
    let name = format!("measure_lsi[{}]", f.name());
    let report = |lhs, rhs, margin| {
        InequalityReport::with_margin(
            name.clone(),
            "measure_lsi",
            lhs,
            rhs,
            margin,
            mu_s.lineage.master_seed,
        )
        .param("epsilon", eps)
        .param("beta", beta)
        .param("s", mu_s.time_tag)
        .note(defect.source.clone())
    };
    if let Some(c) = f.constant_value() {
        let rhs = McEstimate::new(beta * c * c, 0.0, n);
        return Ok(report(McEstimate::new(0.0, 0.0, n), rhs, rhs));
    }
    let terms = LsiTerms::new(mu_s, f);
    let (ent, mu, mg) = terms.entropy();
    let dlog = 0.5 * (mu.max(LOG_FLOOR).ln() + 1.0);
    let lhs = linearized(ent, &[0.5, -dlog], &[&terms.a, &terms.u]);
    let rhs = linearized(eps * mg + beta * mu, &[eps, beta], &[&terms.g, &terms.u]);
    let margin = linearized(
        rhs.value - lhs.value,
        &[eps, beta + dlog, -0.5],
        &[&terms.g, &terms.u, &terms.a],
    );
    Ok(report(lhs, rhs, margin))
}

/// `‖G(t,s)f‖_{q(t),μ_t} <= e^{2β(1/p - 1/q(t))} ‖f‖_{p,μ_s}` with
/// `q(t) = e^{2η0Δ/ε}(p-1) + 1`. `G(t,s)f` at the particles of `μ_t` is
/// estimated from `inner` paths per particle.
#[allow(clippy::too_many_arguments)]
pub fn hypercontractivity_recursion_check(
    spec: &OperatorSpec,
    f: &dyn TestFunction,
    p: f64,
    defect: &LsiDefect,
    mu_s: &EmpiricalMeasure,
    mu_t: &EmpiricalMeasure,
    inner: usize,
    budget: &Budget,
) -> Result<InequalityReport> {
    let dt = ordered(mu_s, mu_t)?;
    if !(p > 1.0) || !(defect.epsilon > 0.0) || defect.beta < 0.0 {
        return Err(Error::precondition("need p > 1, epsilon > 0 and beta >= 0"));
    }
    let q = hypercontractive_exponent(p, defect.epsilon, spec.eta0, dt);
    let factor = (2.0 * defect.beta * (1.0 / p - 1.0 / q)).exp();
    let rhs = lp_norm(mu_s, f, p)?.scale(factor);
    let lhs = if let Some(c) = f.constant_value() {
        McEstimate::new(c.abs(), 0.0, mu_t.len())
    } else if dt == 0.0 {
        lp_norm(mu_t, f, q)?
    } else {
        let op = operator_on_particles(
            spec,
            &[f],
            mu_t,
            mu_s.time_tag,
            inner,
            &budget.config,
            &budget.lineage,
        )?;
        blocked_estimate(op[0].jackknife_abs_pow(q), crate::engine::SHARD_SIZE).abs_pow(1.0 / q)
    };
    Ok(InequalityReport::new(
        format!("hypercontractivity[{}]", f.name()),
        "hypercontractivity",
        lhs,
        rhs,
        budget.lineage.master_seed,
    )
    .param("p", p)
    .param("q", q)
    .param("epsilon", defect.epsilon)
    .param("beta", defect.beta)
    .param("s", mu_s.time_tag)
    .param("t", mu_t.time_tag)
    .note(defect.source.clone()))
}

/// `‖G(t,s)f‖^q_{q,μ_t} / ‖f‖^q_{p,μ_s} <= C_{p,q}(Δ)` for every family
/// member; the family maximum of the left side is a lower bound for the
/// operator norm. Fails with [`Error::ExpMomentDiverged`] when `C_{p,q}` is
/// infinite on the particles.
#[allow(clippy::too_many_arguments)]
pub fn supercontractivity_norm_bound(
    spec: &OperatorSpec,
    family: &Family,
    p: f64,
    q: f64,
    mu_s: &EmpiricalMeasure,
    mu_t: &EmpiricalMeasure,
    inner: usize,
    budget: &Budget,
) -> Result<Vec<InequalityReport>> {
    let c = norm_constant(spec, mu_s, mu_t, p, q)?;
    let rhs = McEstimate::exact(c.value());
    let fs: Vec<&dyn TestFunction> = family.members.iter().map(|m| m.as_ref()).collect();
    let ops = operator_on_particles(
        spec,
        &fs,
        mu_t,
        mu_s.time_tag,
        inner,
        &budget.config,
        &budget.lineage,
    )?;
    fs.iter()
        .zip(&ops)
        .map(|(f, op)| {
            let num = match f.constant_value() {
                Some(k) => McEstimate::new(k.abs().powf(q), 0.0, mu_t.len()),
                None => blocked_estimate(op.jackknife_abs_pow(q), crate::engine::SHARD_SIZE),
            };
            let den = lp_norm(mu_s, *f, p)?.abs_pow(q);
            let lhs = num.ratio(den);
            Ok(InequalityReport::new(
                format!("supercontractivity[{}]", f.name()),
                "supercontractivity",
                lhs,
                rhs,
                budget.lineage.master_seed,
            )
            .param("p", p)
            .param("q", q)
            .param("s", mu_s.time_tag)
            .param("t", mu_t.time_tag)
            .param("radius", c.radius)
            .param("lambda0", c.lambda0)
            .param("log_constant", c.log_value))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct BetaProfile {
    pub epsilon: Vec<f64>,
    /// `β̂(ε) = max_f max(0, (E(f) - ε‖∇f‖²)/‖f‖²)`.
    pub beta: Vec<f64>,
    /// Member attaining the maximum (empty when the maximum is clipped to 0).
    pub argmax: Vec<String>,
    /// Slope of `log β̂` against `log(1/ε)` over the positive entries.
    pub tail_exponent: Option<f64>,
    /// `κ/(κ-2)` when the operator is in the ultracontractive regime.
    pub target_exponent: Option<f64>,
    /// `c1 = (2/(κδ))^{2/(κ-2)}(κ-2)/κ` at `δ = 1`.
    pub c1: Option<f64>,
}

/// The smallest defect compatible with the family at each `ε`, on particles of
/// `μ_s`. Nonincreasing in `ε` by construction.
pub fn beta_profile(
    spec: &OperatorSpec,
    mu_s: &EmpiricalMeasure,
    epsilon_grid: &[f64],
    family: &Family,
) -> Result<BetaProfile> {
    if epsilon_grid.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::precondition("epsilon grid must be positive"));
    }
    let terms: Vec<(String, (f64, f64, f64))> = family
        .members
        .iter()
        .filter(|f| f.constant_value().is_none())
        .map(|f| (f.name(), LsiTerms::new(mu_s, f.as_ref()).entropy()))
        .collect();
    let mut beta = Vec::with_capacity(epsilon_grid.len());
    let mut argmax = Vec::with_capacity(epsilon_grid.len());
    for &eps in epsilon_grid {
        let mut best = (0.0, String::new());
        for (name, (ent, u, g)) in &terms {
            let b = (ent - eps * g) / u;
            if b > best.0 {
                best = (b, name.clone());
            }
        }
        beta.push(best.0);
        argmax.push(best.1);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = epsilon_grid
        .iter()
        .zip(&beta)
        .filter(|(_, b)| **b > 0.0)
        .map(|(e, b)| ((1.0 / e).ln(), b.ln()))
        .unzip();
    let tail_exponent = (xs.len() >= 3).then(|| linear_fit(&xs, &ys).1);
    let (target_exponent, c1) = match spec.regime {
        crate::Regime::Ultracontractive { exponent, .. } => (
            Some(exponent / (exponent - 2.0)),
            Some(c1_coefficient(exponent, 1.0)?),
        ),
        _ => (None, None),
    };
    Ok(BetaProfile {
        epsilon: epsilon_grid.to_vec(),
        beta,
        argmax,
        tail_exponent,
        target_exponent,
        c1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::SeedLineage;
    use crate::functions::{Constant, ExprFunction, GaussianBump, Scaled, SharedFn};
    use crate::inequalities::report::Verdict;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    use std::sync::Arc;

    fn gaussian(n: usize, seed: u64, t: f64) -> EmpiricalMeasure {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        EmpiricalMeasure {
            time_tag: t,
            dim: 1,
            particles: (0..n).map(|_| StandardNormal.sample(&mut rng)).collect(),
            burn_in: 0.0,
            start: vec![0.0],
            lineage: SeedLineage::new(seed),
            spec_hash: 0,
            coupling_bias: 0.0,
            dropped: 0,
        }
    }

    #[test]
    fn gaussian_lsi_is_tight_on_exponentials() {
        let mu = gaussian(200_000, 1, 0.0);
        let f = ExprFunction::parse("exp(0.3*x1)", 1).unwrap();
        let r = measure_lsi_check(&mu, &f, &LsiDefect::gaussian(1.0)).unwrap();
        assert!(r.margin.value.abs() < 4.0 * r.margin.stderr, "{r:?}");
        assert!((r.lhs.value - 0.09 * 0.18f64.exp()).abs() < 4.0 * r.lhs.stderr);
    }

    #[test]
    fn lsi_constant_and_scaling() {
        let mu = gaussian(10_000, 2, 0.0);
        let d = LsiDefect {
            epsilon: 0.5,
            beta: 0.2,
            source: String::new(),
        };
        let r = measure_lsi_check(&mu, &Constant(3.0), &d).unwrap();
        assert_eq!(r.lhs.value, 0.0);
        assert_eq!(r.lhs.stderr, 0.0);
        assert!((r.rhs.value - 1.8).abs() < 1e-12);
        let bump: SharedFn = Arc::new(GaussianBump::new(1.0, vec![0.5]));
        let twice = Scaled {
            inner: bump.clone(),
            factor: 2.0,
        };
        let a = measure_lsi_check(&mu, bump.as_ref(), &d).unwrap();
        let b = measure_lsi_check(&mu, &twice, &d).unwrap();
        assert_eq!(a.verdict, b.verdict);
        assert!((b.margin.value / a.margin.value - 4.0).abs() < 1e-9);
        assert_eq!(a.verdict, Verdict::Pass);
    }

    #[test]
    fn ou_norm_constant_diverges_for_small_intervals() {
        let spec = OperatorSpec::ou(1.0, 1.0, 1);
        let (mu_s, mu_t) = (gaussian(50_000, 3, 0.0), gaussian(50_000, 4, 0.5));
        let err = norm_constant(&spec, &mu_s, &mu_t, 2.0, 3.0).unwrap_err();
        assert!(matches!(err, Error::ExpMomentDiverged { .. }), "{err:?}");
        assert!(matches!(
            norm_constant(&spec, &mu_s, &mu_t, 3.0, 2.0),
            Err(Error::DegenerateExponents { .. })
        ));
    }

    #[test]
    fn profile_is_monotone_with_analytic_c1() {
        let spec = OperatorSpec::power(4.0, 1);
        let mu = gaussian(20_000, 5, 0.0);
        let fam = Family::bump_grid(1, &[0.0, 1.0, 2.0], &[0.5, 2.0, 8.0]);
        let grid = [0.05, 0.1, 0.2, 0.4, 1e6];
        let bp = beta_profile(&spec, &mu, &grid, &fam).unwrap();
        assert!(bp.beta.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*bp.beta.last().unwrap(), 0.0);
        assert!((bp.c1.unwrap() - 0.25).abs() < 1e-10);
        assert_eq!(bp.target_exponent, Some(2.0));
        assert!(beta_profile(&spec, &mu, &[0.0], &fam).is_err());
    }
}
