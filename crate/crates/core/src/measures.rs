//! Particle approximations of the tight evolution system of measures `{μ_t}`
//! and the integrals against them used by the inequality checks.
//!
//! `μ_t` is the law at clock `t` of paths started at the origin at clock
//! `t + T`; by the one-sided Lipschitz bound two such paths started at `x0`
//! and `x0'` stay within `e^{r0 T}|x0 - x0'|` of each other.

use std::fmt;

use serde::Serialize;

use crate::engine::{propagate, simulate, PathConfig, SeedLineage, SHARD_SIZE};
use crate::functions::TestFunction;
use crate::operator::OperatorSpec;
use crate::stats::{blocked_estimate, log_sum_exp, order_statistic, McEstimate};
use crate::{Error, Result};

/// Smallest particle count accepted by the inequality checks.
pub const MIN_PARTICLES: usize = 1000;

/// `T_min = 10 / |r0|`: the coupling factor `e^{r0 T}` is at most `e^{-10}`.
pub fn default_burn_in(spec: &OperatorSpec) -> f64 {
    10.0 / spec.r0.abs()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    pub time_tag: f64,
    pub dim: usize,
    /// Row-major `n x d`, uniform weights `1/n`.
    pub particles: Vec<f64>,
    pub burn_in: f64,
    pub start: Vec<f64>,
    pub lineage: SeedLineage,
    pub spec_hash: u64,
    /// `e^{r0 T} |x0|`, the synchronous-coupling distance to the tight system.
    pub coupling_bias: f64,
    /// Paths dropped because they left the blow-up guard.
    pub dropped: usize,
}

impl EmpiricalMeasure {
    pub fn len(&self) -> usize {
        self.particles.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.particles[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.particles.chunks_exact(self.dim)
    }

    /// `∫ g dμ` as a particle average.
    pub fn integrate(&self, g: impl Fn(&[f64]) -> f64) -> McEstimate {
        blocked_estimate(self.iter().map(g), SHARD_SIZE)
    }

    /// Values of `g` at the particles.
    pub fn values(&self, g: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        self.iter().map(g).collect()
    }

    /// The first coordinate of every particle, sorted.
    pub fn sorted_first(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.iter().map(|p| p[0]).collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// `μ_t` from `n` paths started at the origin at clock `t + burn_in`.
pub fn estimate_measure(
    spec: &OperatorSpec,
    t: f64,
    burn_in: f64,
    n: usize,
    config: &PathConfig,
    lineage: &SeedLineage,
) -> Result<EmpiricalMeasure> {
    estimate_measure_from(spec, t, burn_in, &vec![0.0; spec.dim], n, config, lineage)
}

/// As [`estimate_measure`] with paths started at `x0`.
pub fn estimate_measure_from(
    spec: &OperatorSpec,
    t: f64,
    burn_in: f64,
    x0: &[f64],
    n: usize,
    config: &PathConfig,
    lineage: &SeedLineage,
) -> Result<EmpiricalMeasure> {
    let t_min = default_burn_in(spec);
    if burn_in < t_min * (1.0 - 1e-12) {
        return Err(Error::precondition(format!(
            "burn-in {burn_in} is below 10/|r0| = {t_min}"
        )));
    }
    let ens = simulate(spec, t, t + burn_in, x0, n, config, lineage)?;
    let particles: Vec<f64> = ens.finite_states().flatten().copied().collect();
    Ok(EmpiricalMeasure {
        time_tag: t,
        dim: spec.dim,
        particles,
        burn_in,
        start: x0.to_vec(),
        lineage: *lineage,
        spec_hash: spec.spec_hash,
        coupling_bias: (spec.r0 * burn_in).exp() * crate::numdiff::norm(x0),
        dropped: ens.divergent,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct InvarianceResidual {
    /// `∫ G(t,s)f dμ_t`, one path per particle.
    pub propagated: McEstimate,
    /// `∫ f dμ_s` from an independent particle set.
    pub direct: McEstimate,
    /// `|propagated - direct|` with the combined standard error.
    pub residual: McEstimate,
}

impl InvarianceResidual {
    pub fn within(&self, k: f64) -> bool {
        self.residual.value <= k * self.residual.stderr
    }
}

/// Residual of `∫ G(t,s)f dμ_t = ∫ f dμ_s`.
#[allow(clippy::too_many_arguments)]
pub fn invariance_residual(
    spec: &OperatorSpec,
    f: &dyn TestFunction,
    s: f64,
    t: f64,
    n: usize,
    burn_in: f64,
    config: &PathConfig,
    lineage: &SeedLineage,
) -> Result<InvarianceResidual> {
    let mut r = invariance_residuals(spec, &[f], s, t, n, burn_in, config, lineage)?;
    Ok(r.remove(0))
}

/// [`invariance_residual`] for several functions on shared particle sets.
#[allow(clippy::too_many_arguments)]
pub fn invariance_residuals(
    spec: &OperatorSpec,
    fs: &[&dyn TestFunction],
    s: f64,
    t: f64,
    n: usize,
    burn_in: f64,
    config: &PathConfig,
    lineage: &SeedLineage,
) -> Result<Vec<InvarianceResidual>> {
    if !(t > s) {
        return Err(Error::precondition(format!(
            "need t > s, got t = {t}, s = {s}"
        )));
    }
    let exact = |c: f64| {
        let e = McEstimate::new(c, 0.0, n);
        InvarianceResidual {
            propagated: e,
            direct: e,
            residual: McEstimate::new(0.0, 0.0, n),
        }
    };
    if let Some(v) = fs
        .iter()
        .map(|f| f.constant_value().map(exact))
        .collect::<Option<Vec<_>>>()
    {
        return Ok(v);
    }
    let mu_t = estimate_measure(spec, t, burn_in, n, config, &lineage.child(1))?;
    let moved = propagate(spec, &mu_t.particles, s, t, config, &lineage.child(2))?;
    let mu_s = estimate_measure(spec, s, burn_in, n, config, &lineage.child(3))?;
    Ok(fs
        .iter()
        .map(|f| match f.constant_value() {
            Some(c) => exact(c),
            None => {
                let propagated = moved.estimate(|y| f.eval(y));
                let direct = mu_s.integrate(|y| f.eval(y));
                InvarianceResidual {
                    propagated,
                    direct,
                    residual: propagated.minus(direct).abs(),
                }
            }
        })
        .collect())
}

/// Inner-path samples of `f(X)` for paths started at each particle: row `i`
/// holds the `inner` values belonging to particle `i` (NaN for divergent paths).
#[derive(Debug, Clone)]
pub struct ParticleOperator {
    pub inner: usize,
    pub samples: Vec<f64>,
}

impl ParticleOperator {
    pub fn len(&self) -> usize {
        self.samples.len() / self.inner
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn rows(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.samples
            .chunks_exact(self.inner)
            .map(|r| r.iter().copied().filter(|v| !v.is_nan()).collect())
    }

    /// Inner means, the plain estimate of `G(t,s)f` at every particle.
    pub fn means(&self) -> Vec<f64> {
        self.rows()
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            .collect()
    }

    /// Jackknife estimate of `|G(t,s)f|^q` at every particle. The plug-in
    /// `|mean|^q` is biased upward by `O(1/inner)` for `q > 1`; the jackknife
    /// removes the leading term.
    pub fn jackknife_abs_pow(&self, q: f64) -> Vec<f64> {
        self.rows()
            .map(|r| {
                let k = r.len() as f64;
                let sum: f64 = r.iter().sum();
                let full = (sum / k).abs().powf(q);
                if r.len() < 2 {
                    return full;
                }
                let loo: f64 = r
                    .iter()
                    .map(|v| ((sum - v) / (k - 1.0)).abs().powf(q))
                    .sum::<f64>()
                    / k;
                k * full - (k - 1.0) * loo
            })
            .collect()
    }
}

/// `G(t,s)f` at every particle of `measure` (clock `t = measure.time_tag`),
/// for each function, from `inner` paths per particle.
pub fn operator_on_particles(
    spec: &OperatorSpec,
    fs: &[&dyn TestFunction],
    measure: &EmpiricalMeasure,
    s: f64,
    inner: usize,
    config: &PathConfig,
    lineage: &SeedLineage,
) -> Result<Vec<ParticleOperator>> {
    if inner == 0 {
        return Err(Error::precondition(
            "need at least one inner path per particle",
        ));
    }
    let d = measure.dim;
    let mut points = Vec::with_capacity(measure.len() * inner * d);
    for p in measure.iter() {
        for _ in 0..inner {
            points.extend_from_slice(p);
        }
    }
    let moved = propagate(spec, &points, s, measure.time_tag, config, lineage)?;
    Ok(fs
        .iter()
        .map(|f| {
            let samples = (0..moved.len())
                .map(|j| {
                    let y = moved.state(j);
                    if y[0].is_nan() {
                        f64::NAN
                    } else {
                        f.eval(y)
                    }
                })
                .collect();
            ParticleOperator { inner, samples }
        })
        .collect())
}

/// Density `e^{-U(|x|)/q} / Z` of the stationary measure of a radial gradient
/// drift `b = -∇U` with `Q = q I` constant; then `μ_t` is this measure for
/// every `t`.
#[derive(Clone)]
pub struct GibbsDensity {
    drift: std::sync::Arc<dyn crate::operator::Drift>,
    pub q: f64,
    pub log_norm: f64,
}

impl fmt::Debug for GibbsDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GibbsDensity")
            .field("q", &self.q)
            .field("log_norm", &self.log_norm)
            .finish()
    }
}

impl GibbsDensity {
    pub fn new(spec: &OperatorSpec) -> Result<Self> {
        let q = match &spec.diffusion {
            crate::operator::Diffusion::Scalar {
                constant: Some(q), ..
            } => *q,
            _ => {
                return Err(Error::precondition(
                    "stationary density needs a constant scalar diffusion",
                ))
            }
        };
        if spec.drift.depends_on_time() || spec.drift.radial_potential(1.0).is_none() {
            return Err(Error::precondition(
                "stationary density needs a time-independent radial gradient drift",
            ));
        }
        let d = spec.dim as f64;
        let log_integrand = |r: f64| {
            (d - 1.0) * r.max(f64::MIN_POSITIVE).ln() - spec.drift.radial_potential(r).unwrap() / q
        };
        // Peak of the radial integrand, then integrate in log-shifted form out
        // to where it has dropped by e^{-60}.
        let mut r_hi = 1.0;
        while log_integrand(r_hi) > log_integrand(0.5 * r_hi) || log_integrand(r_hi) > -60.0 {
            r_hi *= 2.0;
            if r_hi > 1e6 {
                return Err(Error::precondition("radial potential does not confine"));
            }
        }
        let shift = (0..=1000)
            .map(|k| log_integrand(r_hi * k as f64 / 1000.0))
            .fold(f64::NEG_INFINITY, f64::max);
        let integral = crate::oracle::adaptive_simpson(
            &|r| (log_integrand(r) - shift).exp(),
            0.0,
            r_hi,
            1e-12,
        )?;
        let sphere = 2.0 * std::f64::consts::PI.powf(0.5 * d) / libm::tgamma(0.5 * d);
        Ok(GibbsDensity {
            drift: spec.drift.clone(),
            q,
            log_norm: sphere.ln() + integral.ln() + shift,
        })
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let r = crate::numdiff::norm(x);
        -self.drift.radial_potential(r).unwrap_or(f64::INFINITY) / self.q - self.log_norm
    }
}

/// `‖f‖_{p,μ}` with delta-method standard error.
pub fn lp_norm(measure: &EmpiricalMeasure, f: &dyn TestFunction, p: f64) -> Result<McEstimate> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::precondition(format!("need 1 <= p < inf, got {p}")));
    }
    if let Some(c) = f.constant_value() {
        return Ok(McEstimate::new(c.abs(), 0.0, measure.len()));
    }
    let moment = measure.integrate(|x| f.eval(x).abs().powf(p));
    Ok(moment.abs_pow(1.0 / p))
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpMomentEstimate {
    /// `∫ e^{λ|x|^power} dμ`; infinite when it overflows.
    pub estimate: McEstimate,
    /// Logarithm of the particle average, always finite.
    pub log_value: f64,
    /// Estimates on the prefixes of size `n/32, n/16, ..., n`.
    pub sweep: Vec<(usize, f64)>,
    /// Hill estimate of the tail index of `e^{λ|X|^power}`; below 1 the mean is infinite.
    pub tail_index: f64,
    pub divergent: bool,
}

/// Prefix doublings in the stabilization sweep.
const SWEEP_DOUBLINGS: u32 = 5;
/// Relative change per doubling counted as unstable.
const SWEEP_JUMP: f64 = 0.2;

/// Particle average of `e^{λ|x|^power}`, computed in log space, with a
/// divergence heuristic: either the prefix estimates change by more than 20%
/// on two consecutive doublings, or the Hill tail index of the summands is
/// below 1.
pub fn exp_moment(
    measure: &EmpiricalMeasure,
    lambda: f64,
    power: f64,
) -> Result<ExpMomentEstimate> {
    if !(lambda > 0.0) || !(power > 0.0) {
        return Err(Error::precondition(
            "exp_moment needs lambda > 0 and power > 0",
        ));
    }
    let logs = measure.values(|x| lambda * crate::numdiff::norm(x).powf(power));
    let n = logs.len();
    let log_mean = |k: usize| log_sum_exp(&logs[..k]) - (k as f64).ln();
    let log_value = log_mean(n);

    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled = blocked_estimate(logs.iter().map(|l| (l - max).exp()), SHARD_SIZE);
    let estimate = scaled.scale(max.exp());

    let sweep: Vec<(usize, f64)> = (0..=SWEEP_DOUBLINGS)
        .rev()
        .map(|k| n >> k)
        .filter(|k| *k >= 2)
        .map(|k| (k, log_mean(k).exp()))
        .collect();
    let jumps: Vec<bool> = sweep
        .windows(2)
        .map(|w| ((w[1].1 - w[0].1) / w[0].1).abs() > SWEEP_JUMP)
        .collect();
    let unstable = jumps.windows(2).any(|w| w[0] && w[1]);

    let tail_index = hill_index(&logs);
    Ok(ExpMomentEstimate {
        estimate: McEstimate { n, ..estimate },
        log_value,
        sweep,
        tail_index,
        divergent: unstable || tail_index < 1.0,
    })
}

/// Hill estimator of the tail index from the logarithms of positive samples,
/// using the top `sqrt(n)` order statistics.
pub fn hill_index(logs: &[f64]) -> f64 {
    let mut sorted = logs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = ((sorted.len() as f64).sqrt() as usize).clamp(2, sorted.len().saturating_sub(1).max(2));
    if sorted.len() <= k {
        return f64::INFINITY;
    }
    let threshold = sorted[k];
    let mean_excess = sorted[..k].iter().map(|l| l - threshold).sum::<f64>() / k as f64;
    if mean_excess > 0.0 {
        1.0 / mean_excess
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TightnessReport {
    pub epsilon: f64,
    pub threshold: f64,
    pub radii: Vec<f64>,
    /// `inf_t μ_t(B(0, R))` for each radius.
    pub min_mass: Vec<f64>,
    /// Time tags and masses per measure.
    pub per_time: Vec<(f64, Vec<f64>)>,
    /// Smallest `R` with `inf_t μ_t(B(0,R)) >= 1 - ε`: the largest empirical
    /// `(1-ε)`-quantile of `|x|`. `None` when unattainable.
    pub radius: Option<f64>,
    pub passed: bool,
}

/// Uniform ball-mass check over a set of measures.
pub fn tightness_check(
    measures: &[EmpiricalMeasure],
    epsilon: f64,
    radii: &[f64],
) -> TightnessReport {
    let per_time: Vec<(f64, Vec<f64>)> = measures
        .iter()
        .map(|m| {
            let mut norms: Vec<f64> = m.iter().map(crate::numdiff::norm).collect();
            norms.sort_by(f64::total_cmp);
            let masses = radii
                .iter()
                .map(|r| norms.partition_point(|v| v <= r) as f64 / norms.len() as f64)
                .collect();
            (m.time_tag, masses)
        })
        .collect();
    let min_mass: Vec<f64> = (0..radii.len())
        .map(|k| per_time.iter().map(|(_, m)| m[k]).fold(1.0, f64::min))
        .collect();
    let radius = if epsilon >= 1.0 {
        Some(0.0)
    } else if epsilon <= 0.0 {
        None
    } else {
        Some(
            measures
                .iter()
                .map(|m| {
                    let mut norms: Vec<f64> = m.iter().map(crate::numdiff::norm).collect();
                    norms.sort_by(f64::total_cmp);
                    order_statistic(&norms, 1.0 - epsilon)
                })
                .fold(0.0, f64::max),
        )
    };
    TightnessReport {
        epsilon,
        threshold: 1.0 - epsilon,
        radii: radii.to_vec(),
        min_mass,
        per_time,
        passed: radius.is_some(),
        radius,
    }
}

/// Two-sample Kolmogorov-Smirnov distance between sorted samples.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value at level `alpha`.
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{Constant, Polynomial};

    fn gaussian_measure(n: usize, seed: u64) -> EmpiricalMeasure {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        EmpiricalMeasure {
            time_tag: 0.0,
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
    fn exp_moment_gaussian() {
        let m = gaussian_measure(200_000, 1);
        let low = exp_moment(&m, 0.3, 2.0).unwrap();
        assert!(!low.divergent, "{low:?}");
        assert!((low.estimate.value - 0.4f64.powf(-0.5)).abs() < 4.0 * low.estimate.stderr);
        let high = exp_moment(&m, 0.6, 2.0).unwrap();
        assert!(high.divergent, "tail index {}", high.tail_index);
        let one = exp_moment(&m, 1.0, 1.0).unwrap();
        let exact = 2.0 * 0.5f64.exp() * crate::oracle::normal_cdf(1.0);
        assert!((one.estimate.value - exact).abs() < 4.0 * one.estimate.stderr);
        assert!(!one.divergent);
    }

    #[test]
    fn exp_moment_monotone_in_lambda() {
        let m = gaussian_measure(5000, 2);
        let mut prev = 0.0;
        for k in 1..30 {
            let v = exp_moment(&m, 0.02 * k as f64, 2.0).unwrap().estimate.value;
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn lp_norms() {
        let m = gaussian_measure(200_000, 3);
        assert_eq!(lp_norm(&m, &Constant(-2.5), 3.0).unwrap().value, 2.5);
        let y = Polynomial::monomial(0, 1);
        let n2 = lp_norm(&m, &y, 2.0).unwrap();
        assert!((n2.value - 1.0).abs() < 4.0 * n2.stderr);
        let n4 = lp_norm(&m, &y, 4.0).unwrap();
        assert!((n4.value - 3f64.powf(0.25)).abs() < 4.0 * n4.stderr);
        assert!(lp_norm(&m, &y, 0.5).is_err());
    }

    #[test]
    fn tightness() {
        let m = gaussian_measure(100_000, 4);
        let r = tightness_check(std::slice::from_ref(&m), 0.05, &[1.0, 2.0, 3.0]);
        assert!((r.radius.unwrap() - 1.96).abs() < 0.03);
        assert!(r.min_mass.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(
            tightness_check(std::slice::from_ref(&m), 1.0, &[1.0]).radius,
            Some(0.0)
        );
        assert!(!tightness_check(&[m], 0.0, &[1.0]).passed);
    }

    #[test]
    fn ks_of_identical_and_shifted() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(ks_distance(&a, &a), 0.0);
        let b: Vec<f64> = (0..100).map(|i| i as f64 + 50.0).collect();
        assert!((ks_distance(&a, &b) - 0.5).abs() < 1e-12);
        assert!((ks_critical(1000, 1000, 0.01) - 1.6276 * (2.0f64 / 1000.0).sqrt()).abs() < 1e-3);
    }
}
