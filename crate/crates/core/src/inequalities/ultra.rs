//! Ultraboundedness, `L¹ -> L²` smoothing, heat-kernel sup bounds, the
//! blow-up exponent fit and `L²` uniform integrability.

use rayon::prelude::*;
use serde::Serialize;

use super::constants::{c2_inf_lambda, log_c2_inf, mtilde_bound, ui_envelope, ui_lambda0};
use super::norms::mass_radius;
use super::report::{Budget, InequalityReport};
use crate::engine::{apply, simulate};
use crate::functions::{Family, TestFunction};
use crate::kde::{Bandwidth, DensityEstimate, KernelDensity, QueryGrid, MAX_KDE_DIM};
use crate::measures::{exp_moment, lp_norm, operator_on_particles, EmpiricalMeasure, GibbsDensity};
use crate::operator::OperatorSpec;
use crate::stats::{blocked_estimate, linear_fit, log_sum_exp, McEstimate};
use crate::{Error, Regime, Result};

/// Order statistics excluded at each end when the relative kernel is read
/// off a density estimate: beyond them the kernel smoothing dominates.
pub const TAIL_GUARD: usize = 100;

fn require_ultracontractive(spec: &OperatorSpec) -> Result<f64> {
    match spec.regime {
        Regime::Ultracontractive { exponent, .. } => Ok(exponent),
        other => Err(Error::RegimeMismatch {
            required: "ultracontractive",
            found: other.to_string(),
        }),
    }
}

fn require_ultrabounded(spec: &OperatorSpec) -> Result<()> {
    match spec.regime {
        Regime::Ultracontractive { .. } | Regime::Ultrabounded { .. } => Ok(()),
        other => Err(Error::RegimeMismatch {
            required: "ultrabounded",
            found: other.to_string(),
        }),
    }
}

/// Where `M_{Δ/2, λ}` with `λ = 1/(2η0Δ)` comes from.
#[derive(Debug, Clone)]
pub enum MSupplier {
    /// The closed-form bound `M̃` (ultracontractive regime only).
    Analytic,
    /// The largest estimate of `G(t', t'-Δ/2) e^{λ|x|²}` over the points.
    Empirical { points: Vec<Vec<f64>> },
}

/// `log M` and a description of how it was obtained.
fn log_m(
    spec: &OperatorSpec,
    supplier: &MSupplier,
    t: f64,
    dt: f64,
    budget: &Budget,
) -> Result<(f64, String)> {
    let lambda = c2_inf_lambda(spec.eta0, dt);
    match supplier {
        MSupplier::Analytic => {
            let kappa = require_ultracontractive(spec)?;
            let Regime::Ultracontractive { coeff, .. } = spec.regime else {
                unreachable!()
            };
            let m = mtilde_bound(kappa, coeff, spec.lambda_max, spec.dim, 0.5 * dt, lambda)?;
            Ok((m.log_bound, format!("analytic M (log = {})", m.log_bound)))
        }
        MSupplier::Empirical { points } => {
            let mut best = f64::NEG_INFINITY;
            for (k, x) in points.iter().enumerate() {
                let ens = simulate(
                    spec,
                    t - 0.5 * dt,
                    t,
                    x,
                    budget.n,
                    &budget.config,
                    &budget.lineage.child(100 + k as u64),
                )?;
                let logs: Vec<f64> = ens
                    .finite_states()
                    .map(|y| lambda * y.iter().map(|v| v * v).sum::<f64>())
                    .collect();
                best = best.max(log_sum_exp(&logs) - (logs.len() as f64).ln());
            }
            Ok((
                best,
                format!("empirical M over {} points (log = {best})", points.len()),
            ))
        }
    }
}

/// `|G(t,s)f(x)| / ‖f‖_{2,μ_s} <= C_{2,∞}(Δ) = 2 e^{R/(2η0Δ)} M` for every
/// family member, maximized over the points.
#[allow(clippy::too_many_arguments)]
pub fn ultrabounded_bound_check(
    spec: &OperatorSpec,
    family: &Family,
    mu_s: &EmpiricalMeasure,
    mu_t: &EmpiricalMeasure,
    points: &[Vec<f64>],
    supplier: &MSupplier,
    budget: &Budget,
) -> Result<Vec<InequalityReport>> {
    require_ultrabounded(spec)?;
    let (s, t) = (mu_s.time_tag, mu_t.time_tag);
    let dt = t - s;
    if !(dt > 0.0) {
        return Err(Error::precondition("need t > s"));
    }
    let radius = mass_radius(mu_t, 0.25);
    let (lm, source) = log_m(spec, supplier, t, dt, budget)?;
    let log_c = log_c2_inf(spec.eta0, dt, radius, lm);
    let rhs = McEstimate::exact(log_c.exp());
    family
        .members
        .iter()
        .map(|f| {
            let norm = lp_norm(mu_s, f.as_ref(), 2.0)?;
            let mut best = McEstimate::new(0.0, 0.0, budget.n);
            let mut arg = &points[0];
            for x in points {
                let g = apply(
                    spec,
                    f.as_ref(),
                    s,
                    t,
                    x,
                    budget.n,
                    &budget.config,
                    &budget.lineage,
                )?
                .abs();
                if g.value > best.value {
                    best = g;
                    arg = x;
                }
            }
            let lhs = best.ratio(norm);
            Ok(InequalityReport::new(
                format!("ultrabounded[{}]", f.name()),
                "ultrabounded",
                lhs,
                rhs,
                budget.lineage.master_seed,
            )
            .param("s", s)
            .param("t", t)
            .param("radius", radius)
            .param("log_constant", log_c)
            .point("argmax_x", arg)
            .note(source.clone()))
        })
        .collect()
}

/// Sup of the kernel of `G(t,s)` relative to `μ_s`,
/// `k(x,y) = g_{t,s}(x,y) / ρ_s(y)`, over a set of starting points.
#[derive(Debug, Clone, Serialize)]
pub struct KernelSup {
    pub s: f64,
    pub t: f64,
    /// `log sup_{x,y} k(x,y)`.
    pub log_sup: f64,
    pub argmax_x: Vec<f64>,
    pub argmax_y: Vec<f64>,
    /// `log sup_y k(x,y)` for every starting point.
    pub per_point: Vec<f64>,
    /// Smallest density estimate on any query grid; positive when the
    /// estimate is strictly positive everywhere it was evaluated.
    pub min_density: f64,
    pub bias_flag: bool,
}

/// Relative kernel sup: for each `x`, a kernel density estimate of
/// `g_{t,s}(x,·)` is divided by the stationary density on a grid spanning the
/// sample between its [`TAIL_GUARD`]-th smallest and largest coordinates.
pub fn relative_kernel_sup(
    spec: &OperatorSpec,
    density: &GibbsDensity,
    s: f64,
    t: f64,
    points: &[Vec<f64>],
    budget: &Budget,
) -> Result<KernelSup> {
    if spec.dim > MAX_KDE_DIM {
        return Err(Error::DimensionTooHigh(spec.dim));
    }
    if !(t > s) {
        return Err(Error::precondition("need t > s"));
    }
    if points.is_empty() {
        return Err(Error::precondition("need at least one starting point"));
    }
    let d = spec.dim;
    let mut out = KernelSup {
        s,
        t,
        log_sup: f64::NEG_INFINITY,
        argmax_x: Vec::new(),
        argmax_y: Vec::new(),
        per_point: Vec::with_capacity(points.len()),
        min_density: f64::INFINITY,
        bias_flag: false,
    };
    for (k, x) in points.iter().enumerate() {
        let ens = simulate(
            spec,
            s,
            t,
            x,
            budget.n,
            &budget.config,
            &budget.lineage.child(k as u64),
        )?;
        let kde = KernelDensity::from_points(&ens.states, d, &Bandwidth::Silverman)?;
        let rows: Vec<&[f64]> = ens.finite_states().collect();
        let guard = TAIL_GUARD.min(rows.len().saturating_sub(1) / 2);
        let (mut lo, mut hi) = (Vec::with_capacity(d), Vec::with_capacity(d));
        for j in 0..d {
            let mut c: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            c.sort_by(f64::total_cmp);
            lo.push(c[guard]);
            hi.push(c[c.len() - 1 - guard]);
        }
        let grid = QueryGrid::uniform(&lo, &hi, QueryGrid::default_points(d));
        let est = DensityEstimate::evaluate(&kde, grid);
        let logs: Vec<f64> = (0..est.grid.len())
            .into_par_iter()
            .map(|i| est.values[i].ln() - density.log_density(&est.grid.point(i)))
            .collect();
        let (imax, lmax) =
            logs.iter()
                .copied()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |b, (i, v)| if v > b.1 { (i, v) } else { b },
                );
        out.per_point.push(lmax);
        out.min_density = out.min_density.min(est.min());
        if lmax > out.log_sup {
            out.log_sup = lmax;
            out.argmax_x = x.clone();
            out.argmax_y = est.grid.point(imax);
            out.bias_flag = est.bias_flag;
        }
    }
    Ok(out)
}

/// Least-squares fit of `log log sup k` against `log(1/Δ)`.
#[derive(Debug, Clone, Serialize)]
pub struct BlowupFit {
    pub deltas: Vec<f64>,
    pub log_sups: Vec<f64>,
    /// Fitted exponent; the model is `sup k = exp(C / Δ^slope)`.
    pub slope: f64,
    pub intercept: f64,
    pub rss: f64,
    /// `exp(intercept)`.
    pub c_fit: f64,
    /// `max_i Δ_i^{κ/(κ-2)} log sup_i`: with the exact exponent, the smallest
    /// `C` for which `exp(C/Δ^{κ/(κ-2)})` dominates every point of the sweep.
    pub c_bound: f64,
    pub target: f64,
}

/// Fit of precomputed `(Δ, log sup)` pairs.
pub fn fit_blowup(deltas: &[f64], log_sups: &[f64], kappa: f64) -> Result<BlowupFit> {
    let mut distinct = deltas.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 5 || deltas.len() != log_sups.len() {
        return Err(Error::FitIllConditioned(format!(
            "need at least 5 distinct interval lengths, got {}",
            distinct.len()
        )));
    }
    if let Some(i) = log_sups.iter().position(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(Error::FitIllConditioned(format!(
            "kernel sup at interval {} is {} (must exceed 1 for a log-log fit)",
            deltas[i],
            log_sups[i].exp()
        )));
    }
    let xs: Vec<f64> = deltas.iter().map(|d| (1.0 / d).ln()).collect();
    let ys: Vec<f64> = log_sups.iter().map(|l| l.ln()).collect();
    let (intercept, slope, rss) = linear_fit(&xs, &ys);
    let target = kappa / (kappa - 2.0);
    let c_bound = deltas
        .iter()
        .zip(log_sups)
        .map(|(d, l)| d.powf(target) * l)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(BlowupFit {
        deltas: deltas.to_vec(),
        log_sups: log_sups.to_vec(),
        slope,
        intercept,
        rss,
        c_fit: intercept.exp(),
        c_bound,
        target,
    })
}

/// Relative kernel sup over `points` for every interval length, then the fit.
pub fn blowup_exponent_fit(
    spec: &OperatorSpec,
    density: &GibbsDensity,
    deltas: &[f64],
    s: f64,
    points: &[Vec<f64>],
    budget: &Budget,
) -> Result<(BlowupFit, Vec<KernelSup>)> {
    let kappa = require_ultracontractive(spec)?;
    let sups: Vec<KernelSup> = deltas
        .iter()
        .enumerate()
        .map(|(k, dt)| {
            relative_kernel_sup(spec, density, s, s + dt, points, &budget.child(k as u64))
        })
        .collect::<Result<_>>()?;
    let logs: Vec<f64> = sups.iter().map(|k| k.log_sup).collect();
    Ok((fit_blowup(deltas, &logs, kappa)?, sups))
}

/// `log sup k <= C/Δ^{κ/(κ-2)}` with a frozen `C`, and strict positivity of
/// the density estimate on every query grid. Both sides are logarithms: the
/// sup itself overflows for short intervals.
pub fn heat_kernel_sup_check(
    spec: &OperatorSpec,
    density: &GibbsDensity,
    s: f64,
    t: f64,
    points: &[Vec<f64>],
    c_frozen: f64,
    budget: &Budget,
) -> Result<InequalityReport> {
    let kappa = require_ultracontractive(spec)?;
    let dt = t - s;
    let ks = relative_kernel_sup(spec, density, s, t, points, budget)?;
    let log_rhs = c_frozen / dt.powf(kappa / (kappa - 2.0));
    let mut r = InequalityReport::new(
        "heat_kernel_log_sup",
        "heat_kernel",
        McEstimate::new(ks.log_sup, 0.0, budget.n),
        McEstimate::exact(log_rhs),
        budget.lineage.master_seed,
    )
    .param("s", s)
    .param("t", t)
    .param("c", c_frozen)
    .param("min_density", ks.min_density)
    .point("argmax_x", &ks.argmax_x)
    .point("argmax_y", &ks.argmax_y)
    .note("kernel density sup; no Monte Carlo error bar");
    if dt > 1.0 {
        r = r.note("interval longer than 1: the bound is only asserted for t - s <= 1");
    }
    if dt < 10.0 * budget.config.step {
        r = r.note("fewer than 10 steps per interval: discretization bias dominates");
    }
    if ks.bias_flag {
        r = r.note("smoothing bias at the maximum may exceed 5%");
    }
    if !(ks.min_density > 0.0) {
        r = r.note("density estimate not strictly positive on the query grid");
    }
    Ok(r)
}

/// `‖G(t,s)f‖_{2,μ_t} / ‖f‖_{1,μ_s} <= exp(C/(2Δ^{κ/(κ-2)}))` for every
/// family member, with `C` frozen from the kernel sup fit (`‖G‖_{1→2}² <=
/// ‖G‖_{1→∞}`).
pub fn l1_l2_check(
    spec: &OperatorSpec,
    family: &Family,
    mu_s: &EmpiricalMeasure,
    mu_t: &EmpiricalMeasure,
    c_frozen: f64,
    inner: usize,
    budget: &Budget,
) -> Result<Vec<InequalityReport>> {
    let kappa = require_ultracontractive(spec)?;
    let (s, t) = (mu_s.time_tag, mu_t.time_tag);
    let dt = t - s;
    if !(dt > 0.0) {
        return Err(Error::precondition("need t > s"));
    }
    let log_rhs = c_frozen / (2.0 * dt.powf(kappa / (kappa - 2.0)));
    let rhs = McEstimate::exact(log_rhs.exp());
    let fs: Vec<&dyn TestFunction> = family.members.iter().map(|m| m.as_ref()).collect();
    let ops = operator_on_particles(spec, &fs, mu_t, s, inner, &budget.config, &budget.lineage)?;
    fs.iter()
        .zip(&ops)
        .map(|(f, op)| {
            let num = match f.constant_value() {
                Some(k) => McEstimate::new(k.abs(), 0.0, mu_t.len()),
                None => blocked_estimate(op.jackknife_abs_pow(2.0), crate::engine::SHARD_SIZE)
                    .abs_pow(0.5),
            };
            let lhs = num.ratio(lp_norm(mu_s, *f, 1.0)?);
            let rep = InequalityReport::new(
                format!("l1_l2[{}]", f.name()),
                "l1_l2",
                lhs,
                rhs,
                budget.lineage.master_seed,
            )
            .param("s", s)
            .param("t", t)
            .param("c", c_frozen)
            .param("log_rhs", log_rhs);
            Ok(if dt > 1.0 {
                rep.note("interval longer than 1: the bound is only asserted for t - s <= 1")
            } else {
                rep
            })
        })
        .collect()
}

/// For each level `r`, `sup_f ∫_{|Gf| >= r} |Gf|² dμ_t` over the family
/// normalized to `‖f‖_{2,μ_s} = 1`, against the envelope
/// `(C/r) ‖φ_{2λ0}‖_{1,μ_t}^{1/2}` with `C = 2e^{R²/(η0Δ)}`, `λ0 = 1/(η0Δ)`
/// and `μ_t(B(0,R)) >= 1/2`.
#[allow(clippy::too_many_arguments)]
pub fn uniform_integrability_check(
    spec: &OperatorSpec,
    family: &Family,
    mu_s: &EmpiricalMeasure,
    mu_t: &EmpiricalMeasure,
    levels: &[f64],
    inner: usize,
    budget: &Budget,
) -> Result<Vec<InequalityReport>> {
    require_ultracontractive(spec)?;
    let (s, t) = (mu_s.time_tag, mu_t.time_tag);
    let dt = t - s;
    if !(dt > 0.0) {
        return Err(Error::precondition("need t > s"));
    }
    let radius = mass_radius(mu_t, 0.5);
    let lambda = 2.0 * ui_lambda0(spec.eta0, dt);
    let moment = exp_moment(mu_t, lambda, 2.0)?;
    if moment.divergent {
        return Err(Error::ExpMomentDiverged {
            lambda,
            tail_index: moment.tail_index,
        });
    }
    let fs: Vec<&dyn TestFunction> = family.members.iter().map(|m| m.as_ref()).collect();
    let ops = operator_on_particles(spec, &fs, mu_t, s, inner, &budget.config, &budget.lineage)?;
    let normalized: Vec<(String, Vec<f64>)> = fs
        .iter()
        .zip(&ops)
        .map(|(f, op)| {
            let norm = lp_norm(mu_s, *f, 2.0)?.value;
            Ok((f.name(), op.means().into_iter().map(|v| v / norm).collect()))
        })
        .collect::<Result<_>>()?;
    let mut prev = f64::INFINITY;
    levels
        .iter()
        .map(|&r| {
            let mut best = (McEstimate::new(0.0, 0.0, mu_t.len()), String::new());
            for (name, v) in &normalized {
                let tail = blocked_estimate(
                    v.iter().map(|g| if g.abs() >= r { g * g } else { 0.0 }),
                    crate::engine::SHARD_SIZE,
                );
                if tail.value > best.0.value {
                    best = (tail, name.clone());
                }
            }
            let rhs =
                McEstimate::exact(ui_envelope(spec.eta0, dt, radius, r, moment.estimate.value));
            let mut rep = InequalityReport::new(
                format!("uniform_integrability[r={r}]"),
                "uniform_integrability",
                best.0,
                rhs,
                budget.lineage.master_seed,
            )
            .param("r", r)
            .param("s", s)
            .param("t", t)
            .param("radius", radius)
            .param("argmax", &best.1);
            if best.0.value > prev {
                rep = rep.note("tail increased with r");
            }
            prev = best.0.value;
            Ok(rep)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{ou_density, ou_invariant, OuSpec};

    #[test]
    fn fit_recovers_exact_power() {
        let deltas = [0.1, 0.15, 0.22, 0.33, 0.5, 0.75];
        let logs: Vec<f64> = deltas.iter().map(|d: &f64| 0.7 * d.powf(-2.0)).collect();
        let fit = fit_blowup(&deltas, &logs, 4.0).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-10);
        assert!((fit.c_fit - 0.7).abs() < 1e-10);
        assert!((fit.c_bound - 0.7).abs() < 1e-10);
        assert!(fit.rss < 1e-20);
    }

    #[test]
    fn fit_rejects_short_or_subunit() {
        let d = [0.1, 0.2, 0.3, 0.4];
        assert!(matches!(
            fit_blowup(&d, &[1.0; 4], 4.0),
            Err(Error::FitIllConditioned(_))
        ));
        let d = [0.1, 0.2, 0.3, 0.4, 0.4];
        assert!(matches!(
            fit_blowup(&d, &[1.0; 5], 4.0),
            Err(Error::FitIllConditioned(_))
        ));
        let d = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert!(matches!(
            fit_blowup(&d, &[3.0, 2.0, 1.0, 0.5, -0.1], 4.0),
            Err(Error::FitIllConditioned(_))
        ));
    }

    #[test]
    fn ou_is_not_ultracontractive() {
        let spec = OperatorSpec::ou(1.0, 1.0, 1);
        let density = GibbsDensity::new(&spec).unwrap();
        let b = Budget::new(100, 1e-2, 1);
        let err =
            heat_kernel_sup_check(&spec, &density, 0.0, 0.5, &[vec![0.0]], 1.0, &b).unwrap_err();
        assert!(matches!(err, Error::RegimeMismatch { .. }));
    }

    #[test]
    fn ou_relative_kernel_at_origin() {
        let spec = OperatorSpec::ou(1.0, 1.0, 1);
        let ou = OuSpec::constant(1.0, 1.0, 1).unwrap();
        let density = GibbsDensity::new(&spec).unwrap();
        let (s, t) = (0.0, 0.5);
        let b = Budget::new(40_000, 5e-3, 7);
        let ks = relative_kernel_sup(&spec, &density, s, t, &[vec![0.0]], &b).unwrap();
        let var = ou_invariant(&ou).unwrap();
        let truth = ou_density(&ou, s, t, &[0.0], &[0.0]).unwrap()
            * (2.0 * std::f64::consts::PI * var).sqrt();
        assert!(
            (ks.log_sup - truth.ln()).abs() < 0.05,
            "{} vs {}",
            ks.log_sup.exp(),
            truth
        );
        assert!(ks.argmax_y[0].abs() < 0.3);
        assert!(ks.min_density > 0.0);
    }
}
