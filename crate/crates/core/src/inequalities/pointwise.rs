//! Checks at a fixed starting point: gradient estimate, kernel log-Sobolev
//! inequality, Harnack inequality and the potential-term contraction.

use super::constants::kernel_lsi_constant;
use super::report::{Budget, InequalityReport};
use crate::engine::{
    apply, gradient_apply, propagate_weighted, simulate, simulate_weighted, Ensemble,
};
use crate::functions::{grad_norm, TestFunction};
use crate::measures::estimate_measure;
use crate::operator::{OperatorSpec, PotentialSpec};
use crate::stats::{linearized, mean, McEstimate};
use crate::{Error, Result};

/// Floor inside `log |f|^p` for the kernel log-Sobolev check.
pub const LOG_EPS: f64 = 1e-12;

fn interval(s: f64, t: f64) -> Result<f64> {
    if !(t > s) {
        return Err(Error::precondition(format!(
            "need t > s, got t = {t}, s = {s}"
        )));
    }
    Ok(t - s)
}

/// Values of `g` at the non-divergent terminal states.
fn column(ens: &Ensemble, g: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    ens.finite_states().map(g).collect()
}

/// `|∇_x G(t,s)f|^p <= e^{p r0 Δ} G(t,s)|∇f|^p` at `x`.
pub fn gradient_estimate_check(
    spec: &OperatorSpec,
    f: &dyn TestFunction,
    p: f64,
    s: f64,
    t: f64,
    x: &[f64],
    budget: &Budget,
) -> Result<InequalityReport> {
    let dt = interval(s, t)?;
    if !(p >= 1.0) {
        return Err(Error::precondition(format!("need p >= 1, got {p}")));
    }
    let Budget { n, config, lineage } = *budget;
    let grad = gradient_apply(spec, f, s, t, x, n, &config, &lineage)?;
    let norm = grad.iter().map(|g| g.value * g.value).sum::<f64>().sqrt();
    let norm_se = if norm > 0.0 {
        grad.iter()
            .map(|g| (g.value / norm * g.stderr).powi(2))
            .sum::<f64>()
            .sqrt()
    } else {
        grad.iter().map(|g| g.stderr * g.stderr).sum::<f64>().sqrt()
    };
    let lhs = McEstimate::new(norm, norm_se, n).abs_pow(p);
    let factor = (p * spec.r0 * dt).exp();
    let rhs = if f.constant_value().is_some() {
        McEstimate::new(0.0, 0.0, n)
    } else {
        let ens = simulate(spec, s, t, x, n, &config, &lineage.child(1))?;
        ens.estimate(|y| grad_norm(f, y).powf(p)).scale(factor)
    };
    Ok(InequalityReport::new(
        format!("gradient[{}]", f.name()),
        "gradient",
        lhs,
        rhs,
        lineage.master_seed,
    )
    .param("p", p)
    .param("s", s)
    .param("t", t)
    .point("x", x))
}

/// `G(|f|^p log|f|^p) <= C_p(Δ) G(|f|^{p-2}|∇f|²) + G(|f|^p) log G(|f|^p)`
/// at `x`, with `C_p(Δ) = p²Λ/|r0| (1 - e^{2 r0 Δ})`. All three terms come
/// from one ensemble and the margin error is the paired linearization.
pub fn kernel_lsi_check(
    spec: &OperatorSpec,
    f: &dyn TestFunction,
    p: f64,
    s: f64,
    t: f64,
    x: &[f64],
    budget: &Budget,
) -> Result<InequalityReport> {
    let dt = interval(s, t)?;
    if !(p >= 2.0) {
        return Err(Error::precondition(format!("need p >= 2, got {p}")));
    }
    let Budget { n, config, lineage } = *budget;
    let c = kernel_lsi_constant(p, spec.lambda_max, spec.r0, dt);
    let report = |lhs, rhs, margin| {
        InequalityReport::with_margin(
            format!("kernel_lsi[{}]", f.name()),
            "kernel_lsi",
            lhs,
            rhs,
            margin,
            lineage.master_seed,
        )
        .param("p", p)
        .param("s", s)
        .param("t", t)
        .param("constant", c)
        .point("x", x)
    };
    if let Some(k) = f.constant_value() {
        let u = k.abs().powf(p);
        let v = McEstimate::new(u * u.max(LOG_EPS).ln(), 0.0, n);
        return Ok(report(v, v, McEstimate::new(0.0, 0.0, n)));
    }
    let ens = simulate(spec, s, t, x, n, &config, &lineage)?;
    let u = column(&ens, |y| f.eval(y).abs().powf(p));
    let a: Vec<f64> = u.iter().map(|u| u * u.max(LOG_EPS).ln()).collect();
    let g = column(&ens, |y| {
        f.eval(y).abs().powf(p - 2.0) * grad_norm(f, y).powi(2)
    });
    let (ma, mu, mg) = (mean(&a), mean(&u), mean(&g));
    let log_mu = mu.max(LOG_EPS).ln();
    let lhs = linearized(ma, &[1.0], &[&a]);
    let rhs = linearized(c * mg + mu * log_mu, &[c, log_mu + 1.0], &[&g, &u]);
    let margin = linearized(
        rhs.value - lhs.value,
        &[c, log_mu + 1.0, -1.0],
        &[&g, &u, &a],
    );
    Ok(report(lhs, rhs, margin))
}

/// `|G(t,s)f(x)|^p <= G(t,s)|f|^p(y) · exp(p|x-y|²/(4(p-1)η0Δ))` for one
/// pair of points.
#[allow(clippy::too_many_arguments)]
pub fn harnack_check(
    spec: &OperatorSpec,
    f: &dyn TestFunction,
    p: f64,
    s: f64,
    t: f64,
    x: &[f64],
    y: &[f64],
    budget: &Budget,
) -> Result<InequalityReport> {
    interval(s, t)?;
    let Budget { n, config, lineage } = *budget;
    if f.constant_value().is_some() {
        let ex = simulate(spec, s, t, x, 2, &config, &lineage)?;
        return harnack_from(spec, f, p, &ex, &ex, y, budget);
    }
    let ex = simulate(spec, s, t, x, n, &config, &lineage)?;
    let ey = if x == y {
        ex.clone()
    } else {
        simulate(spec, s, t, y, n, &config, &lineage)?
    };
    harnack_from(spec, f, p, &ex, &ey, y, budget)
}

/// Every `(x, y, p)` combination over `points x points x ps`, simulating
/// once per point. All points share the lineage, so every pair is evaluated
/// with common random numbers.
pub fn harnack_grid(
    spec: &OperatorSpec,
    f: &dyn TestFunction,
    ps: &[f64],
    s: f64,
    t: f64,
    points: &[Vec<f64>],
    budget: &Budget,
) -> Result<Vec<InequalityReport>> {
    interval(s, t)?;
    let ensembles: Vec<Ensemble> = points
        .iter()
        .map(|x| simulate(spec, s, t, x, budget.n, &budget.config, &budget.lineage))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(points.len() * points.len() * ps.len());
    for ex in &ensembles {
        for (ey, y) in ensembles.iter().zip(points) {
            for &p in ps {
                out.push(harnack_from(spec, f, p, ex, ey, y, budget)?);
            }
        }
    }
    Ok(out)
}

fn harnack_from(
    spec: &OperatorSpec,
    f: &dyn TestFunction,
    p: f64,
    ex: &Ensemble,
    ey: &Ensemble,
    y: &[f64],
    budget: &Budget,
) -> Result<InequalityReport> {
    if !(p > 1.0) {
        return Err(Error::precondition(format!("need p > 1, got {p}")));
    }
    let x = &ex.start;
    let dt = ex.start_time - ex.end_time;
    let dist2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    let factor = (p * dist2 / (4.0 * (p - 1.0) * spec.eta0 * dt)).exp();
    let n = budget.n;
    let (lhs, rhs, margin) = if let Some(c) = f.constant_value() {
        let v = c.abs().powf(p);
        (
            McEstimate::new(v, 0.0, n),
            McEstimate::new(v * factor, 0.0, n),
            McEstimate::new(v * (factor - 1.0), 0.0, n),
        )
    } else {
        // Pair path i from x with path i from y; both driven by the same noise.
        let (fx, fy): (Vec<f64>, Vec<f64>) = (0..ex.len().min(ey.len()))
            .filter(|&i| !ex.state(i)[0].is_nan() && !ey.state(i)[0].is_nan())
            .map(|i| (f.eval(ex.state(i)), f.eval(ey.state(i)).abs().powf(p)))
            .unzip();
        let m = mean(&fx);
        let slope = p * m.abs().powf(p - 1.0) * m.signum();
        let lhs = linearized(m.abs().powf(p), &[slope], &[&fx]);
        let rhs = linearized(mean(&fy) * factor, &[factor], &[&fy]);
        let margin = linearized(rhs.value - lhs.value, &[factor, -slope], &[&fy, &fx]);
        (lhs, rhs, margin)
    };
    Ok(InequalityReport::with_margin(
        format!("harnack[{}]", f.name()),
        "harnack",
        lhs,
        rhs,
        margin,
        budget.lineage.master_seed,
    )
    .param("p", p)
    .param("s", ex.end_time)
    .param("t", ex.start_time)
    .point("x", x)
    .point("y", y))
}

/// `G_c(t,s)f <= e^{-c0 Δ} G(t,s)f` at `x` for `f >= 0`. Both sides use the
/// same paths; a constant potential is evaluated through the exact factor.
#[allow(clippy::too_many_arguments)]
pub fn potential_contraction_check(
    spec: &OperatorSpec,
    potential: &PotentialSpec,
    f: &dyn TestFunction,
    s: f64,
    t: f64,
    x: &[f64],
    budget: &Budget,
) -> Result<InequalityReport> {
    let dt = interval(s, t)?;
    let Budget { n, config, lineage } = *budget;
    let c0 = potential.infimum();
    let factor = (-c0 * dt).exp();
    let name = format!("potential_contraction[{}]", f.name());
    let (lhs, rhs, margin) = match potential {
        PotentialSpec::Constant(c) => {
            let g = apply(spec, f, s, t, x, n, &config, &lineage)?;
            let lhs = g.scale((-c * dt).exp());
            let rhs = g.scale(factor);
            (lhs, rhs, McEstimate::new(rhs.value - lhs.value, 0.0, g.n))
        }
        PotentialSpec::Field { c, .. } => {
            let ens = simulate_weighted(spec, c.as_ref(), s, t, x, n, &config, &lineage)?;
            let logw = ens.log_weights.as_deref().unwrap_or(&[]);
            let (fv, w): (Vec<f64>, Vec<f64>) = (0..ens.len())
                .filter(|&i| !ens.state(i)[0].is_nan())
                .map(|i| (f.eval(ens.state(i)), logw[i].exp()))
                .unzip();
            if fv.iter().any(|v| *v < 0.0) {
                return Err(Error::precondition("potential contraction needs f >= 0"));
            }
            let fw: Vec<f64> = fv.iter().zip(&w).map(|(a, b)| a * b).collect();
            let lhs = linearized(mean(&fw), &[1.0], &[&fw]);
            let rhs = linearized(factor * mean(&fv), &[factor], &[&fv]);
            let margin = linearized(rhs.value - lhs.value, &[factor, -1.0], &[&fv, &fw]);
            (lhs, rhs, margin)
        }
    };
    Ok(
        InequalityReport::with_margin(name, "potential", lhs, rhs, margin, lineage.master_seed)
            .param("c0", c0)
            .param("s", s)
            .param("t", t)
            .point("x", x),
    )
}

/// `∫ G_c(t,s)f dμ_t <= ∫ f dμ_s` for `c0 >= 0` and `f >= 0`: the particles
/// of `μ_t` are carried to clock `s` with Feynman-Kac weights; `μ_s` comes from
/// an independent particle set.
pub fn potential_subinvariance_check(
    spec: &OperatorSpec,
    potential: &PotentialSpec,
    f: &dyn TestFunction,
    s: f64,
    t: f64,
    burn_in: f64,
    budget: &Budget,
) -> Result<InequalityReport> {
    interval(s, t)?;
    let c0 = potential.infimum();
    if c0 < 0.0 {
        return Err(Error::precondition(format!(
            "sub-invariance needs c0 >= 0, got {c0}"
        )));
    }
    let Budget { n, config, lineage } = *budget;
    let mu_t = estimate_measure(spec, t, burn_in, n, &config, &lineage.child(1))?;
    let mu_s = estimate_measure(spec, s, burn_in, n, &config, &lineage.child(2))?;
    let rhs = mu_s.integrate(|y| f.eval(y));
    if mu_s.iter().any(|y| f.eval(y) < 0.0) {
        return Err(Error::precondition("sub-invariance needs f >= 0"));
    }
    let cfn = |tau: f64, y: &[f64]| potential.eval(tau, y);
    let moved = propagate_weighted(
        spec,
        &cfn,
        &mu_t.particles,
        s,
        t,
        &config,
        &lineage.child(3),
    )?;
    let lhs = moved.estimate(|y| f.eval(y));
    Ok(InequalityReport::new(
        format!("potential_subinvariance[{}]", f.name()),
        "potential",
        lhs,
        rhs,
        lineage.master_seed,
    )
    .param("c0", c0)
    .param("s", s)
    .param("t", t)
    .param("burn_in", burn_in))
}
