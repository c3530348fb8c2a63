//! Sample-based verification of the standing hypotheses and of the drift
//! growth conditions that select the smoothing regime.
//!
//! Every check reports the worst slack over its sample set, so a failure
//! says where and by how much.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{LyapunovFamily, LyapunovSpec, OperatorSpec, Regime};
use crate::inequalities::constants::{c_kappa, ultrabounded_offset};
use crate::numdiff::{dot, norm};
use crate::stats::linear_fit;
use crate::{Error, Result};

/// Absolute plus relative tolerance, `1e-8 + 1e-8 |value|` by default.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            abs: 1e-8,
            rel: 1e-8,
        }
    }
}

impl Tolerance {
    fn of(&self, scale: f64) -> f64 {
        self.abs + self.rel * scale.abs()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub name: String,
    pub passed: bool,
    /// Extreme value of the checked quantity over the samples.
    pub worst: f64,
    /// Smallest `bound - value` over the samples; negative means violated.
    pub slack: f64,
    /// Time and point where the slack is smallest.
    pub worst_t: f64,
    pub worst_x: Vec<f64>,
    pub samples: usize,
    /// Secondary named quantities (e.g. the radial consequence of dissipativity).
    pub metrics: Vec<(String, f64)>,
}

impl HypothesisReport {
    fn new(name: &str) -> Self {
        HypothesisReport {
            name: name.to_string(),
            passed: true,
            worst: f64::NAN,
            slack: f64::INFINITY,
            worst_t: f64::NAN,
            worst_x: Vec::new(),
            samples: 0,
            metrics: Vec::new(),
        }
    }

    fn record(&mut self, slack: f64, value: f64, t: f64, x: &[f64]) {
        self.samples += 1;
        if slack < self.slack || self.worst_x.is_empty() {
            self.slack = slack;
            self.worst = value;
            self.worst_t = t;
            self.worst_x = x.to_vec();
        }
    }
}

/// Coordinate axes (both signs) followed by `extra` random unit vectors.
pub fn probe_directions(dim: usize, extra: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..dim {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; dim];
            e[i] = s;
            out.push(e);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < 2 * dim + extra {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            out.push(v.into_iter().map(|c| c / n).collect());
        }
    }
    out
}

/// Sample points `(t, x, ξ)` on spheres of the given radii.
pub fn probe_points(
    spec: &OperatorSpec,
    radii: &[f64],
    per_radius: usize,
    seed: u64,
) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
    let times = super::time_samples(
        spec.time_window,
        if spec.drift.depends_on_time() { 9 } else { 1 },
    );
    let dirs = probe_directions(spec.dim, per_radius, seed);
    let xis = probe_directions(spec.dim, per_radius, seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut out = Vec::new();
    for &t in &times {
        for &r in radii {
            for (k, u) in dirs.iter().enumerate() {
                let x: Vec<f64> = u.iter().map(|c| c * r).collect();
                out.push((t, x, xis[k % xis.len()].clone()));
                if r == 0.0 {
                    break;
                }
            }
        }
    }
    out
}

/// Rayleigh quotients of `Q(t)` against `[eta0, lambda_max]`, tolerance `1e-10 lambda_max`.
pub fn check_ellipticity(
    spec: &OperatorSpec,
    times: &[f64],
    directions: &[Vec<f64>],
) -> Result<HypothesisReport> {
    let (lo, hi) = spec.time_window;
    let tol = 1e-10 * spec.lambda_max;
    let mut rep = HypothesisReport::new("ellipticity");
    let mut qmin = f64::INFINITY;
    let mut qmax = f64::NEG_INFINITY;
    for &t in times {
        if t < lo || t > hi {
            return Err(Error::precondition(format!(
                "time {t} outside the certified window [{lo}, {hi}]"
            )));
        }
        let q = spec.diffusion.matrix(t, spec.dim);
        let asym = (&q - q.transpose()).amax();
        if asym > 1e-12 {
            return Err(Error::SymmetryViolation { t, asymmetry: asym });
        }
        let q = (&q + q.transpose()) * 0.5;
        for xi in directions {
            let n2 = dot(xi, xi);
            let v = DMatrix::from_column_slice(spec.dim, 1, xi);
            let rq = (v.transpose() * &q * &v)[(0, 0)] / n2;
            qmin = qmin.min(rq);
            qmax = qmax.max(rq);
            let slack = (rq - spec.eta0).min(spec.lambda_max - rq);
            rep.record(slack, rq, t, xi);
        }
    }
    rep.passed = qmin >= spec.eta0 - tol && qmax <= spec.lambda_max + tol;
    rep.metrics.push(("min_rayleigh".into(), qmin));
    rep.metrics.push(("max_rayleigh".into(), qmax));
    Ok(rep)
}

/// `max <∇b ξ, ξ>/|ξ|²` against `r0`, plus the radial consequence
/// `<b(t,x),x> <= sup|b(·,0)| |x| + r0 |x|²`.
pub fn check_dissipativity(
    spec: &OperatorSpec,
    samples: &[(f64, Vec<f64>, Vec<f64>)],
) -> Result<HypothesisReport> {
    check_dissipativity_with(spec, samples, Tolerance::default())
}

pub fn check_dissipativity_with(
    spec: &OperatorSpec,
    samples: &[(f64, Vec<f64>, Vec<f64>)],
    tol: Tolerance,
) -> Result<HypothesisReport> {
    let d = spec.dim;
    let mut jac = DMatrix::zeros(d, d);
    let mut rep = HypothesisReport::new("dissipativity");
    let b0 = spec.drift_at_origin_sup()?;
    let mut radial_slack = f64::INFINITY;
    let mut max_quotient = f64::NEG_INFINITY;
    for (t, x, xi) in samples {
        spec.drift.jacobian(*t, x, &mut jac).map_err(|e| match e {
            Error::Expr(e) => Error::Domain(format!("drift Jacobian not evaluable at {x:?}: {e}")),
            other => other,
        })?;
        let v = DMatrix::from_column_slice(d, 1, xi);
        let quotient = (v.transpose() * &jac * &v)[(0, 0)] / dot(xi, xi);
        max_quotient = max_quotient.max(quotient);
        rep.record(spec.r0 - quotient, quotient, *t, x);
        let b = spec.drift_at(*t, x)?;
        let r = norm(x);
        let lhs = dot(&b, x);
        let rhs = b0 * r + spec.r0 * r * r;
        radial_slack = radial_slack.min(rhs - lhs + tol.of(lhs.abs().max(rhs.abs())));
    }
    rep.worst = max_quotient;
    rep.passed = max_quotient <= spec.r0 + tol.of(spec.r0) && radial_slack >= 0.0;
    rep.metrics.push(("max_quotient".into(), max_quotient));
    rep.metrics
        .push(("radial_consequence_slack".into(), radial_slack));
    Ok(rep)
}

/// `A(t)φ <= a - γ φ` at every grid point.
pub fn check_lyapunov(
    spec: &OperatorSpec,
    lyap: &LyapunovSpec,
    grid: &[(f64, Vec<f64>)],
) -> Result<HypothesisReport> {
    check_lyapunov_with(spec, lyap, grid, Tolerance::default())
}

pub fn check_lyapunov_with(
    spec: &OperatorSpec,
    lyap: &LyapunovSpec,
    grid: &[(f64, Vec<f64>)],
    tol: Tolerance,
) -> Result<HypothesisReport> {
    let mut rep = HypothesisReport::new("lyapunov");
    for (t, x) in grid {
        let log_phi = lyap.family.log_value(x)?;
        if log_phi < 600.0 {
            let phi = log_phi.exp();
            let a_phi = lyap.family.generator(spec, *t, x)?;
            let rhs = lyap.a - lyap.gamma * phi;
            let slack = rhs - a_phi;
            rep.record(slack, a_phi, *t, x);
            if slack < -tol.of(a_phi.abs().max(rhs.abs())) {
                rep.passed = false;
            }
        } else {
            // Both sides divided by φ; a/φ underflows harmlessly.
            let ratio = lyap.family.generator_ratio(spec, *t, x)?;
            let rhs = lyap.a * (-log_phi).exp() - lyap.gamma;
            let slack = rhs - ratio;
            rep.record(slack, ratio, *t, x);
            if slack < -tol.of(ratio.abs().max(rhs.abs())) {
                rep.passed = false;
            }
        }
    }
    Ok(rep)
}

/// Smallest `a` for which `A(t)φ <= a - γ φ` holds on the grid, i.e.
/// `max (A(t)φ + γ φ)`.
pub fn minimal_lyapunov_offset(
    spec: &OperatorSpec,
    family: &LyapunovFamily,
    gamma: f64,
    grid: &[(f64, Vec<f64>)],
) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for (t, x) in grid {
        let v = family.generator(spec, *t, x)? + gamma * family.value(x)?;
        best = best.max(v);
    }
    Ok(best)
}

/// Grid `(t, x)` on the coordinate axes and diagonals with `|x| <= r_max`.
pub fn annulus_grid(
    spec: &OperatorSpec,
    r_min: f64,
    r_max: f64,
    n_radii: usize,
) -> Vec<(f64, Vec<f64>)> {
    let times = super::time_samples(
        spec.time_window,
        if spec.drift.depends_on_time() { 9 } else { 1 },
    );
    let dirs = probe_directions(spec.dim, 4, 17);
    let mut out = Vec::new();
    for &t in &times {
        for k in 0..n_radii {
            let r = if n_radii == 1 {
                r_min
            } else {
                r_min + (r_max - r_min) * k as f64 / (n_radii - 1) as f64
            };
            for u in &dirs {
                out.push((t, u.iter().map(|c| c * r).collect()));
                if r == 0.0 {
                    break;
                }
            }
        }
    }
    out
}

type Real = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A convex increasing `h` for the strengthened Lyapunov condition
/// `A(t) e^{λ|x|²} <= -h(e^{λ|x|²})`.
#[derive(Clone)]
pub struct ConvexLyapunov {
    pub label: String,
    h: Real,
    /// `w ↦ log(h(e^w) / e^w)`, valid where `h > 0`; lets the tail be
    /// examined beyond the range of `f64`.
    log_ratio: Option<Real>,
    /// `(P, bound)` with `∫_P^∞ dy/h <= bound` known in closed form.
    reference: Option<(f64, f64)>,
}

impl ConvexLyapunov {
    pub fn new(label: &str, h: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        ConvexLyapunov {
            label: label.to_string(),
            h: Arc::new(h),
            log_ratio: None,
            reference: None,
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        (self.h)(y)
    }

    /// The construction for `<b,x> <= -k |x|² (log|x|)^α` (`α > 1`): the
    /// function `g(y) = y[k 2^{-α} log y (log(log y / λ))^α - 2λ C - 2λ Λ d]`
    /// held constant at its minimum below the minimizer.
    pub fn ultrabounded(
        coeff: f64,
        alpha: f64,
        lambda: f64,
        lambda_max: f64,
        dim: usize,
        radius: f64,
    ) -> Self {
        let c_alpha = ultrabounded_offset(coeff, alpha, lambda, lambda_max, radius);
        let shift = 2.0 * lambda * c_alpha + 2.0 * lambda * lambda_max * dim as f64;
        let bracket = move |w: f64| {
            coeff * 2f64.powf(-alpha) * w * (w / lambda).ln().max(0.0).powf(alpha) - shift
        };
        let g_log = move |w: f64| w.exp() * bracket(w);
        let w0 = convex_argmin(&g_log, lambda);
        let floor = g_log(w0);
        let h = move |y: f64| {
            if y <= 0.0 || y.ln() <= w0 {
                floor
            } else {
                g_log(y.ln())
            }
        };
        let log_ratio = move |w: f64| {
            if w <= w0 {
                floor.ln() - w
            } else {
                bracket(w).ln()
            }
        };
        ConvexLyapunov {
            label: format!("ultrabounded(coeff={coeff}, alpha={alpha}, lambda={lambda})"),
            h: Arc::new(h),
            log_ratio: Some(Arc::new(log_ratio)),
            reference: None,
        }
    }

    /// The construction for `<b,x> <= -k |x|^κ`:
    /// `g(y) = λ^{1-κ/2} y (k (log y)^{κ/2} - 2 λ^{κ²/(2(κ-2))} C_κ - 2 λ^{κ/2} Λ d)`
    /// held constant at its minimum, with the closed-form tail bound.
    pub fn ultracontractive(
        coeff: f64,
        kappa: f64,
        lambda: f64,
        lambda_max: f64,
        dim: usize,
    ) -> Self {
        let ck = c_kappa(kappa, coeff, lambda_max);
        let shift = 2.0 * lambda.powf(kappa * kappa / (2.0 * (kappa - 2.0))) * ck
            + 2.0 * lambda.powf(kappa / 2.0) * lambda_max * dim as f64;
        let pre = lambda.powf(1.0 - kappa / 2.0);
        let bracket = move |w: f64| coeff * w.max(0.0).powf(kappa / 2.0) - shift;
        let g_log = move |w: f64| pre * w.exp() * bracket(w);
        let w0 = convex_argmin(&g_log, 0.0);
        let floor = g_log(w0);
        let h = move |y: f64| {
            if y <= 0.0 || y.ln() <= w0 {
                floor
            } else {
                g_log(y.ln())
            }
        };
        let log_ratio = move |w: f64| {
            if w <= w0 {
                floor.ln() - w
            } else {
                pre.ln() + bracket(w).ln()
            }
        };
        let c1 = 4.0 * ck / coeff;
        let c2 = 4.0 * lambda_max * dim as f64 / coeff;
        let log_p = (c1 * lambda.powf(kappa * kappa / (2.0 * (kappa - 2.0)))
            + c2 * lambda.powf(kappa / 2.0))
        .powf(2.0 / kappa);
        let bound = 4.0 / ((kappa - 2.0) * coeff)
            * lambda.powf((kappa - 2.0) / 2.0)
            * log_p.powf(1.0 - kappa / 2.0);
        ConvexLyapunov {
            label: format!("ultracontractive(coeff={coeff}, kappa={kappa}, lambda={lambda})"),
            h: Arc::new(h),
            log_ratio: Some(Arc::new(log_ratio)),
            reference: Some((log_p, bound)),
        }
    }

    fn log_ratio(&self, w: f64) -> f64 {
        match &self.log_ratio {
            Some(f) => f(w),
            None => {
                let v = (self.h)(w.exp());
                if v > 0.0 {
                    v.ln() - w
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Checks convexity and monotonicity on a geometric grid of `[0, y_max]`.
    fn check_shape(&self, y_max: f64) -> Result<()> {
        let n = 600;
        let lo: f64 = 1e-6;
        let mut ys = vec![0.0];
        ys.extend((0..=n).map(|k| (lo.ln() + (y_max.ln() - lo.ln()) * k as f64 / n as f64).exp()));
        let hs: Vec<f64> = ys.iter().map(|&y| (self.h)(y)).collect();
        let mut prev_slope = f64::NEG_INFINITY;
        for k in 0..ys.len() - 1 {
            let slope = (hs[k + 1] - hs[k]) / (ys[k + 1] - ys[k]);
            let scale = hs[k].abs().max(hs[k + 1].abs()) / ys[k + 1];
            let tol = 1e-9 * (scale + slope.abs() + prev_slope.abs().min(1e300));
            if !slope.is_finite() || slope < -tol || slope < prev_slope - tol {
                return Err(Error::NotConvex { at: ys[k + 1] });
            }
            prev_slope = slope;
        }
        Ok(())
    }

    /// `∫_{e^{w_start}}^∞ dy / h(y)` via `y = exp(exp(v))`, together with the
    /// decay exponent of the integrand in `log v` (integrable iff < -1).
    fn tail_integral(&self, w_start: f64) -> (f64, f64) {
        let v_max = if self.log_ratio.is_some() {
            60.0
        } else {
            700f64.ln()
        };
        let v0 = w_start.max(1e-3).ln();
        let log_i = |v: f64| v - self.log_ratio(v.exp());
        let n = 4000;
        let step = (v_max - v0) / n as f64;
        let mut sum = 0.0;
        for k in 0..=n {
            let v = v0 + step * k as f64;
            let wgt = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            sum += wgt * log_i(v).exp();
        }
        let integral = sum * step / 3.0;
        let xs: Vec<f64> = (0..=20)
            .map(|k| (v_max * (0.5 + 0.5 * k as f64 / 20.0)).ln())
            .collect();
        let ys: Vec<f64> = xs.iter().map(|&lv| log_i(lv.exp())).collect();
        let (_, decay, _) = linear_fit(&xs, &ys);
        let remainder = if decay < -1.0 {
            log_i(v_max).exp() * v_max / (-decay - 1.0)
        } else {
            f64::INFINITY
        };
        (integral + remainder, decay)
    }
}

/// Minimizer in `w` of a function convex beyond `lo`, by golden-section search
/// after bracketing.
fn convex_argmin(f: &dyn Fn(f64) -> f64, lo: f64) -> f64 {
    let mut hi = lo.max(0.0) + 1.0;
    while f(hi * 2.0) < f(hi) && hi < 700.0 {
        hi *= 2.0;
    }
    let hi = (hi * 2.0).min(709.0);
    let (mut a, mut b) = (lo, hi);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Verifies `A(t)φ_λ <= -h(φ_λ)` for `|x| >= radius`, `φ_λ = e^{λ|x|²}`, after
/// checking that `h` is convex, increasing and has integrable reciprocal.
pub fn check_convex_lyapunov(
    spec: &OperatorSpec,
    lambda: f64,
    h: &ConvexLyapunov,
    radius: f64,
    grid: &[(f64, Vec<f64>)],
) -> Result<HypothesisReport> {
    let phi = LyapunovFamily::Quadratic { lambda };
    let max_log = grid
        .iter()
        .map(|(_, x)| lambda * dot(x, x))
        .fold(1.0, f64::max);
    h.check_shape((max_log + 2.0).min(700.0).exp())?;

    let w_start = (1..=700)
        .map(|k| k as f64)
        .find(|&w| h.log_ratio(w).is_finite())
        .unwrap_or(f64::NAN);
    let (tail, decay) = if w_start.is_nan() {
        (f64::INFINITY, f64::NAN)
    } else {
        h.tail_integral(w_start)
    };
    if !(decay < -1.0) {
        return Err(Error::TailNotIntegrable { decay });
    }

    let mut rep = HypothesisReport::new("convex_lyapunov");
    let tol = Tolerance::default();
    for (t, x) in grid {
        if norm(x) < radius {
            continue;
        }
        let log_phi = lambda * dot(x, x);
        let ratio = phi.generator_ratio(spec, *t, x)?;
        let (lhs, rhs) = if log_phi < 700.0 {
            let p = log_phi.exp();
            (ratio * p, -h.eval(p))
        } else {
            (ratio, -h.log_ratio(log_phi).exp())
        };
        let slack = rhs - lhs;
        rep.record(slack, lhs, *t, x);
        if slack < -tol.of(lhs.abs().max(rhs.abs())) {
            rep.passed = false;
        }
    }
    rep.metrics.push(("tail_integral".into(), tail));
    rep.metrics.push(("tail_decay".into(), decay));
    if let Some((log_p, bound)) = h.reference {
        let (from_p, _) = h.tail_integral(log_p);
        rep.metrics.push(("tail_from_p".into(), from_p));
        rep.metrics.push(("tail_bound".into(), bound));
        if from_p > bound * (1.0 + 1e-6) {
            rep.passed = false;
        }
    }
    Ok(rep)
}

/// Radii, directions and times on which drift growth is probed.
#[derive(Debug, Clone)]
pub struct RadialGrid {
    pub radius: f64,
    pub r_max: f64,
    pub n_radii: usize,
    pub extra_directions: usize,
    pub n_times: usize,
    pub seed: u64,
}

impl Default for RadialGrid {
    fn default() -> Self {
        RadialGrid {
            radius: 2.0,
            r_max: 1e6,
            n_radii: 80,
            extra_directions: 16,
            n_times: 9,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegimeClassification {
    pub regime: Regime,
    pub ladder: Vec<&'static str>,
    /// Slope of `log(-<b,x>)` against `log |x|` over the outer half of the grid.
    pub power_exponent: f64,
    pub power_rss: f64,
    /// Slope of `log(-<b,x>/|x|²)` against `log log |x|` over the same range.
    pub log_exponent: f64,
    pub log_rss: f64,
}

fn snap(v: f64) -> f64 {
    let s = (v * 4.0).round() / 4.0;
    if (v - s).abs() <= 0.02 {
        s
    } else {
        v
    }
}

/// Fits the worst-case radial decay `g(r) = min -<b(t, r u), r u>` against
/// the power model `K r^κ` and the log model `K r² (log r)^α` and returns the
/// strongest regime supported, with the constant chosen as the largest value
/// that holds at every grid radius.
pub fn classify_regime(spec: &OperatorSpec, grid: &RadialGrid) -> Result<RegimeClassification> {
    if !(grid.radius > 1.0) || !(grid.r_max > grid.radius) || grid.n_radii < 8 {
        return Err(Error::precondition(
            "radial grid needs 1 < radius < r_max and at least 8 radii",
        ));
    }
    let dirs = probe_directions(spec.dim, grid.extra_directions, grid.seed);
    let times = super::time_samples(
        spec.time_window,
        if spec.drift.depends_on_time() {
            grid.n_times
        } else {
            1
        },
    );
    let (l0, l1) = (grid.radius.ln(), grid.r_max.ln());
    let radii: Vec<f64> = (0..grid.n_radii)
        .map(|k| (l0 + (l1 - l0) * k as f64 / (grid.n_radii - 1) as f64).exp())
        .collect();
    let mut g = Vec::with_capacity(radii.len());
    for &r in &radii {
        let mut worst = f64::INFINITY;
        for &t in &times {
            for u in &dirs {
                let x: Vec<f64> = u.iter().map(|c| c * r).collect();
                worst = worst.min(-dot(&spec.drift_at(t, &x)?, &x));
            }
        }
        g.push(worst);
    }
    let unclassified = |pe: f64, pr: f64, le: f64, lr: f64| RegimeClassification {
        regime: Regime::Unclassified,
        ladder: Vec::new(),
        power_exponent: pe,
        power_rss: pr,
        log_exponent: le,
        log_rss: lr,
    };
    if g.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Ok(unclassified(f64::NAN, f64::NAN, f64::NAN, f64::NAN));
    }
    let half = radii.len() / 2;
    let lr: Vec<f64> = radii[half..].iter().map(|r| r.ln()).collect();
    let lg: Vec<f64> = g[half..].iter().map(|v| v.ln()).collect();
    let (_, kappa_hat, rss_p) = linear_fit(&lr, &lg);
    let llr: Vec<f64> = lr.iter().map(|v| v.ln()).collect();
    let lg2: Vec<f64> = lg.iter().zip(&lr).map(|(a, b)| a - 2.0 * b).collect();
    let (_, alpha_hat, rss_l) = linear_fit(&llr, &lg2);

    let min_ratio = |model: &dyn Fn(f64) -> f64| {
        radii
            .iter()
            .zip(&g)
            .map(|(&r, &v)| v / model(r))
            .fold(f64::INFINITY, f64::min)
    };
    let radius = grid.radius;
    let regime = if kappa_hat > 2.1 && rss_p <= rss_l {
        let kappa = snap(kappa_hat);
        Regime::Ultracontractive {
            coeff: min_ratio(&|r| r.powf(kappa)),
            exponent: kappa,
            radius,
        }
    } else if alpha_hat > 1.1 {
        let alpha = snap(alpha_hat);
        Regime::Ultrabounded {
            coeff: min_ratio(&|r| r * r * r.ln().powf(alpha)),
            log_exponent: alpha,
            radius,
        }
    } else if alpha_hat >= 0.9 {
        Regime::Supercontractive {
            coeff: min_ratio(&|r| r * r * r.ln()),
            radius,
        }
    } else {
        return Ok(unclassified(kappa_hat, rss_p, alpha_hat, rss_l));
    };
    Ok(RegimeClassification {
        ladder: regime.ladder(),
        regime,
        power_exponent: kappa_hat,
        power_rss: rss_p,
        log_exponent: alpha_hat,
        log_rss: rss_l,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::VectorExpr;
    use crate::operator::{Diffusion, ExprDrift};

    fn expr_spec(src: &str, dim: usize, r0: f64) -> OperatorSpec {
        let mut s = OperatorSpec::ou(1.0, 1.0, dim);
        s.drift = Arc::new(ExprDrift {
            field: VectorExpr::parse(src, dim).unwrap(),
            superlinear: true,
        });
        s.r0 = r0;
        s
    }

    #[test]
    fn identity_diffusion_is_elliptic_with_unit_quotients() {
        let spec = OperatorSpec::ou(1.0, 1.0, 2);
        let rep = check_ellipticity(&spec, &[0.0, 1.0, 5.0], &probe_directions(2, 10, 1)).unwrap();
        assert!(rep.passed);
        assert!((rep.worst - 1.0).abs() < 1e-15);
    }

    #[test]
    fn time_dependent_diagonal_diffusion() {
        let mut spec = OperatorSpec::ou(1.0, 1.0, 2);
        spec.diffusion = Diffusion::Matrix {
            q: Arc::new(|t| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0 + t.sin()])),
            constant: None,
        };
        spec.eta0 = 1.0;
        spec.lambda_max = 3.0;
        let times: Vec<f64> = (0..=8)
            .map(|k| k as f64 * std::f64::consts::PI / 8.0)
            .collect();
        let dirs = probe_directions(2, 0, 1);
        assert!(check_ellipticity(&spec, &times, &dirs).unwrap().passed);
        spec.lambda_max = 2.5;
        let rep = check_ellipticity(&spec, &times, &dirs).unwrap();
        assert!(!rep.passed);
        assert!((rep.worst_t - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_diffusion_is_rejected() {
        let mut spec = OperatorSpec::ou(1.0, 1.0, 2);
        spec.diffusion =
            Diffusion::constant_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.3, 1.0]));
        assert!(matches!(
            check_ellipticity(&spec, &[0.0], &probe_directions(2, 0, 1)),
            Err(Error::SymmetryViolation { .. })
        ));
    }

    #[test]
    fn dissipativity_examples() {
        let radii = [0.0, 0.5, 1.0, 2.0, 5.0];
        let lin = expr_spec("-x1", 1, -1.0);
        let rep = check_dissipativity(&lin, &probe_points(&lin, &radii, 2, 3)).unwrap();
        assert!(rep.passed && (rep.worst + 1.0).abs() < 1e-9);

        let cubic = expr_spec("-x1^3", 1, -1.0);
        let rep = check_dissipativity(&cubic, &probe_points(&cubic, &radii, 2, 3)).unwrap();
        assert!(!rep.passed);
        assert!(rep.worst.abs() < 1e-9 && rep.worst_x == vec![0.0]);

        let both = OperatorSpec::power(4.0, 1);
        let rep = check_dissipativity(&both, &probe_points(&both, &radii, 2, 3)).unwrap();
        assert!(rep.passed);
    }

    #[test]
    fn quadratic_lyapunov_for_ou() {
        let spec = OperatorSpec::ou(1.0, 1.0, 1);
        let lyap = LyapunovSpec {
            family: LyapunovFamily::Custom {
                label: "x^2".into(),
                phi: Arc::new(|x: &[f64]| x[0] * x[0]),
            },
            a: 2.0,
            gamma: 2.0,
        };
        let grid = annulus_grid(&spec, 0.0, 10.0, 41);
        let rep = check_lyapunov_with(
            &spec,
            &lyap,
            &grid,
            Tolerance {
                abs: 1e-5,
                rel: 1e-6,
            },
        )
        .unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn gaussian_lyapunov_for_cubic_drift() {
        // A φ = 2λ φ (1 + 2λ x² - x⁴) for b = -x³.
        let spec = expr_spec("-x1^3", 1, -1.0);
        let lambda = 0.1;
        let fam = LyapunovFamily::Quadratic { lambda };
        for x in [0.0, 0.7, 1.3, 3.0, 9.5] {
            let exact =
                2.0 * lambda * (lambda * x * x).exp() * (1.0 + 2.0 * lambda * x * x - x.powi(4));
            let got = fam.generator(&spec, 0.0, &[x]).unwrap();
            assert!((got - exact).abs() <= 1e-9 * (1.0 + exact.abs()));
        }
        let grid = annulus_grid(&spec, 0.0, 10.0, 201);
        let gamma = 1.0;
        let a = minimal_lyapunov_offset(&spec, &fam, gamma, &grid).unwrap();
        let rep = check_lyapunov(
            &spec,
            &LyapunovSpec {
                family: fam,
                a,
                gamma,
            },
            &grid,
        )
        .unwrap();
        assert!(rep.passed && a > 0.0);
    }

    #[test]
    fn log_power_lyapunov_is_eventually_dominated() {
        // <b,x> <= -|x|²(log|x|²)² and δ = 1 < 2: A ψ / ψ -> -∞.
        let spec = OperatorSpec::logpower(2.0, 1);
        let fam = LyapunovFamily::LogPower {
            lambda: 1.0,
            delta: 1.0,
            radius: 2.0,
        };
        let ratios: Vec<f64> = [5.0, 10.0, 20.0, 40.0]
            .iter()
            .map(|&r| fam.generator_ratio(&spec, 0.0, &[r]).unwrap())
            .collect();
        assert!(ratios.windows(2).all(|w| w[1] < w[0]) && ratios[0] < 0.0);
    }

    #[test]
    fn convex_lyapunov_examples() {
        let spec = OperatorSpec::power(4.0, 1);
        let grid = annulus_grid(&spec, 2.0, 6.0, 41);
        let lambda = 0.5;
        let h = ConvexLyapunov::ultrabounded(1.0, 2.0, lambda, 1.0, 1, 2.0);
        let rep = check_convex_lyapunov(&spec, lambda, &h, 2.0, &grid).unwrap();
        assert!(rep.passed, "{rep:?}");

        let h = ConvexLyapunov::ultracontractive(1.0, 4.0, lambda, 1.0, 1);
        let rep = check_convex_lyapunov(&spec, lambda, &h, 2.0, &grid).unwrap();
        assert!(rep.passed, "{rep:?}");

        let linear = ConvexLyapunov::new("y", |y| y);
        assert!(matches!(
            check_convex_lyapunov(&spec, lambda, &linear, 2.0, &grid),
            Err(Error::TailNotIntegrable { .. })
        ));

        let concave = ConvexLyapunov::new("sqrt", |y: f64| y.sqrt());
        assert!(matches!(
            check_convex_lyapunov(&spec, lambda, &concave, 2.0, &grid),
            Err(Error::NotConvex { .. })
        ));

        let ou = OperatorSpec::ou(1.0, 1.0, 1);
        let h = ConvexLyapunov::ultrabounded(1.0, 2.0, 1.0, 1.0, 1, 2.0);
        let rep =
            check_convex_lyapunov(&ou, 1.0, &h, 2.0, &annulus_grid(&ou, 2.0, 6.0, 41)).unwrap();
        assert!(!rep.passed);
    }

    #[test]
    fn regime_classification() {
        let grid = RadialGrid::default();
        let cubic = classify_regime(&expr_spec("-x1^3", 1, -1.0), &grid).unwrap();
        match cubic.regime {
            Regime::Ultracontractive {
                coeff, exponent, ..
            } => {
                assert_eq!(exponent, 4.0);
                assert!((coeff - 1.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        let lp = classify_regime(&expr_spec("-x1*log(1+x1^2)^2", 1, -1.0), &grid).unwrap();
        assert!(
            matches!(lp.regime, Regime::Ultrabounded { log_exponent, .. } if log_exponent == 2.0),
            "{lp:?}"
        );
        let ou = classify_regime(&OperatorSpec::ou(1.0, 1.0, 2), &grid).unwrap();
        assert_eq!(ou.regime, Regime::Unclassified);
        let ll = classify_regime(&OperatorSpec::logpower(1.0, 1), &grid).unwrap();
        assert!(
            matches!(ll.regime, Regime::Supercontractive { .. }),
            "{ll:?}"
        );
    }

    #[test]
    fn adding_a_log_factor_never_weakens_the_tag() {
        let grid = RadialGrid::default();
        for (base, boosted) in [
            ("-x1^3", "-x1^3*(1+log(1+x1^2))"),
            ("-x1*log(1+x1^2)^2", "-x1*log(1+x1^2)^3"),
            ("-x1", "-x1*(1+log(1+x1^2))"),
        ] {
            let a = classify_regime(&expr_spec(base, 1, -1.0), &grid)
                .unwrap()
                .regime;
            let b = classify_regime(&expr_spec(boosted, 1, -1.0), &grid)
                .unwrap()
                .regime;
            assert!(b.implies(&a), "{base}: {a} vs {boosted}: {b}");
        }
    }
}
