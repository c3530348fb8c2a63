//! Euler-Maruyama ensembles for the process generated by `A(t)`.
//!
//! `(G(t,s)f)(x) = E f(X)` where `X` starts at `x` with clock `t` and runs to
//! clock `s`, the coefficients being evaluated at the decreasing clock
//! `τ_k = t - k h`. Paths are grouped into shards of [`SHARD_SIZE`]; shard
//! `j` draws from a ChaCha8 generator keyed by `(master_seed, shard_index + j)`
//! and path `k` inside it uses stream `counter + k`, so every increment is a
//! function of the lineage alone.

mod estimators;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::operator::{NoiseFactor, OperatorSpec};
use crate::stats::{Accumulator, McEstimate};
use crate::{Error, Result};

pub use estimators::{
    apply, backward_derivative_check, chapman_kolmogorov_check, feynman_kac_apply, gradient_apply,
    BackwardDerivative, ChapmanKolmogorov,
};

pub const SHARD_SIZE: usize = 1024;

/// Fraction of divergent paths above which a run is rejected.
pub const MAX_DIVERGENT_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub step: f64,
    /// Paths leaving this radius (or turning non-finite) are counted as divergent.
    pub blowup_guard: f64,
    /// Tamed increment `h b / (1 + h|b|)`; `None` follows the drift's own flag.
    pub tamed: Option<bool>,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            step: 1e-3,
            blowup_guard: 1e8,
            tamed: None,
        }
    }
}

impl PathConfig {
    pub fn with_step(step: f64) -> Self {
        PathConfig {
            step,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedLineage {
    pub master_seed: u64,
    pub shard_index: u64,
    pub counter: u64,
}

impl SeedLineage {
    pub fn new(master_seed: u64) -> Self {
        SeedLineage {
            master_seed,
            shard_index: 0,
            counter: 0,
        }
    }

    /// An independent lineage derived from this one and a tag.
    pub fn child(&self, tag: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"evolab/child");
        for v in [self.master_seed, self.shard_index, self.counter, tag] {
            h.update(v.to_le_bytes());
        }
        let d = h.finalize();
        SeedLineage::new(u64::from_le_bytes(
            d[..8].try_into().expect("32-byte digest"),
        ))
    }

    /// The lineage of the run that starts `shards` shards later.
    pub fn offset_shards(&self, shards: u64) -> Self {
        SeedLineage {
            shard_index: self.shard_index + shards,
            ..*self
        }
    }

    fn shard_seed(&self, j: u64) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"evolab/shard");
        h.update(self.master_seed.to_le_bytes());
        h.update((self.shard_index + j).to_le_bytes());
        h.finalize().into()
    }

    fn path_rng(&self, seed: &[u8; 32], k: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(*seed);
        rng.set_stream(self.counter + k);
        rng
    }
}

/// Step times and sizes for one interval, with the noise factors `sqrt(2Q(τ_k))`.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub start: f64,
    pub end: f64,
    /// `(τ_k, h_k)`, `τ_{k+1} = τ_k - h_k`.
    pub steps: Vec<(f64, f64)>,
    noise: Noise,
}

#[derive(Debug, Clone)]
enum Noise {
    Constant(NoiseFactor),
    PerStep(Vec<NoiseFactor>),
}

impl Schedule {
    /// Uniform steps of size at most `h` from clock `start` down to `end`.
    pub fn uniform(spec: &OperatorSpec, start: f64, end: f64, h: f64) -> Result<Self> {
        Self::segments(spec, &[start, end], &[h])
    }

    /// Consecutive segments `knots[i] -> knots[i+1]` (decreasing), each with
    /// uniform steps of size at most `steps[i]`.
    pub fn segments(spec: &OperatorSpec, knots: &[f64], steps: &[f64]) -> Result<Self> {
        let mut out = Vec::new();
        for (w, &h) in knots.windows(2).zip(steps) {
            let len = w[0] - w[1];
            if len < 0.0 {
                return Err(Error::precondition(format!(
                    "need t >= s, got t = {}, s = {}",
                    w[0], w[1]
                )));
            }
            if !(h > 0.0) {
                return Err(Error::precondition("step size must be positive"));
            }
            if len == 0.0 {
                continue;
            }
            if h > len * (1.0 + 1e-12) {
                return Err(Error::precondition(format!(
                    "step {h} exceeds the interval length {len}"
                )));
            }
            let n = ((len / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            let hh = len / n as f64;
            out.extend((0..n).map(|k| (w[0] - k as f64 * hh, hh)));
        }
        let noise = if spec.diffusion.is_constant() {
            Noise::Constant(spec.diffusion.noise_factor(knots[0], spec.dim))
        } else {
            Noise::PerStep(
                out.iter()
                    .map(|(tau, _)| spec.diffusion.noise_factor(*tau, spec.dim))
                    .collect(),
            )
        };
        Ok(Schedule {
            start: knots[0],
            end: *knots.last().expect("at least one knot"),
            steps: out,
            noise,
        })
    }

    fn noise(&self, k: usize) -> &NoiseFactor {
        match &self.noise {
            Noise::Constant(f) => f,
            Noise::PerStep(v) => &v[k],
        }
    }

    /// Index of the step starting at clock `tau`, or `steps.len()` for the end.
    pub fn index_of(&self, tau: f64) -> Option<usize> {
        if (tau - self.end).abs() <= 1e-12 * (1.0 + tau.abs()) {
            return Some(self.steps.len());
        }
        self.steps
            .iter()
            .position(|(t, _)| (t - tau).abs() <= 1e-9 * (1.0 + tau.abs()))
    }
}

/// Hook called before every step with the state at `τ_k` and the Brownian
/// increment `sqrt(2Q) sqrt(h) Z` about to be applied.
pub(crate) trait Visitor {
    fn visit(&mut self, _k: usize, _tau: f64, _h: f64, _x: &[f64], _dw: &[f64]) -> Result<()> {
        Ok(())
    }
}

impl Visitor for () {}

pub(crate) struct Stepper<'a> {
    spec: &'a OperatorSpec,
    sched: &'a Schedule,
    tamed: bool,
    guard: f64,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(spec: &'a OperatorSpec, sched: &'a Schedule, config: &PathConfig) -> Self {
        Stepper {
            spec,
            sched,
            tamed: config.tamed.unwrap_or_else(|| spec.drift.superlinear()),
            guard: config.blowup_guard,
        }
    }

    /// Integrates `x` in place; returns `false` if the path left the guard.
    pub(crate) fn run<V: Visitor>(
        &self,
        x: &mut [f64],
        rng: &mut ChaCha8Rng,
        v: &mut V,
    ) -> Result<bool> {
        let d = x.len();
        let mut b = vec![0.0; d];
        let mut z = vec![0.0; d];
        let mut dw = vec![0.0; d];
        for (k, &(tau, h)) in self.sched.steps.iter().enumerate() {
            self.spec.drift.eval(tau, x, &mut b)?;
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(rng);
            }
            let sq = h.sqrt();
            match self.sched.noise(k) {
                NoiseFactor::Scalar(s) => {
                    for (o, zi) in dw.iter_mut().zip(&z) {
                        *o = s * sq * zi;
                    }
                }
                f => {
                    f.apply(&z, &mut dw);
                    dw.iter_mut().for_each(|o| *o *= sq);
                }
            }
            v.visit(k, tau, h, x, &dw)?;
            let scale = if self.tamed {
                let nb = b.iter().map(|u| u * u).sum::<f64>().sqrt();
                h / (1.0 + h * nb)
            } else {
                h
            };
            let mut r2 = 0.0;
            for i in 0..d {
                x[i] += b[i] * scale + dw[i];
                r2 += x[i] * x[i];
            }
            if !(r2 <= self.guard * self.guard) {
                x.fill(f64::NAN);
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Runs `n` paths in shards (in parallel) and returns the per-path results
/// grouped by shard, in shard order.
pub(crate) fn drive<T, F>(n: usize, lineage: &SeedLineage, per_path: F) -> Result<Vec<Vec<T>>>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> Result<T> + Sync,
{
    let shards = n.div_ceil(SHARD_SIZE);
    (0..shards)
        .into_par_iter()
        .map(|j| {
            let seed = lineage.shard_seed(j as u64);
            let lo = j * SHARD_SIZE;
            let hi = (lo + SHARD_SIZE).min(n);
            (lo..hi)
                .map(|i| {
                    let mut rng = lineage.path_rng(&seed, (i - lo) as u64);
                    per_path(i, &mut rng)
                })
                .collect::<Result<Vec<T>>>()
        })
        .collect()
}

fn check_blowup(divergent: usize, total: usize) -> Result<()> {
    if divergent as f64 > MAX_DIVERGENT_FRACTION * total as f64 {
        Err(Error::Blowup { divergent, total })
    } else {
        Ok(())
    }
}

/// Terminal states of `n` paths, with optional Feynman-Kac log-weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub start_time: f64,
    pub end_time: f64,
    pub start: Vec<f64>,
    pub dim: usize,
    pub lineage: SeedLineage,
    /// Row-major `n x d`; rows of divergent paths are NaN.
    pub states: Vec<f64>,
    pub log_weights: Option<Vec<f64>>,
    pub divergent: usize,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.states.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    fn is_divergent(&self, i: usize) -> bool {
        self.states[i * self.dim].is_nan()
    }

    /// Per-shard accumulators of `g(i, X_i)` over non-divergent paths.
    pub fn shard_accumulators(&self, g: impl Fn(usize, &[f64]) -> f64 + Sync) -> Vec<Accumulator> {
        let n = self.len();
        (0..n.div_ceil(SHARD_SIZE))
            .into_par_iter()
            .map(|j| {
                let mut acc = Accumulator::default();
                for i in j * SHARD_SIZE..((j + 1) * SHARD_SIZE).min(n) {
                    if !self.is_divergent(i) {
                        acc.push(g(i, self.state(i)));
                    }
                }
                acc
            })
            .collect()
    }

    /// Mean of `g(i, X_i)` over non-divergent paths, merged in shard order.
    pub fn estimate_indexed(&self, g: impl Fn(usize, &[f64]) -> f64 + Sync) -> McEstimate {
        merge(&self.shard_accumulators(g)).estimate()
    }

    /// Mean of `f(X)` (times the Feynman-Kac weight, if any).
    pub fn estimate(&self, f: impl Fn(&[f64]) -> f64 + Sync) -> McEstimate {
        match &self.log_weights {
            None => self.estimate_indexed(|_, x| f(x)),
            Some(w) => self.estimate_indexed(|i, x| f(x) * w[i].exp()),
        }
    }

    /// Non-divergent terminal states.
    pub fn finite_states(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.len())
            .filter(|&i| !self.is_divergent(i))
            .map(|i| self.state(i))
    }
}

pub fn merge(accs: &[Accumulator]) -> Accumulator {
    let mut total = Accumulator::default();
    for a in accs {
        total.merge(a);
    }
    total
}

pub(crate) fn simulate_on(
    spec: &OperatorSpec,
    sched: &Schedule,
    x: &[f64],
    n: usize,
    config: &PathConfig,
    lineage: &SeedLineage,
) -> Result<Ensemble> {
    check_start(spec, x)?;
    let stepper = Stepper::new(spec, sched, config);
    let shards = drive(n, lineage, |_, rng| {
        let mut y = x.to_vec();
        let ok = stepper.run(&mut y, rng, &mut ())?;
        Ok((y, ok))
    })?;
    let mut states = Vec::with_capacity(n * spec.dim);
    let mut divergent = 0;
    for (y, ok) in shards.into_iter().flatten() {
        divergent += usize::from(!ok);
        states.extend(y);
    }
    check_blowup(divergent, n)?;
    Ok(Ensemble {
        start_time: sched.start,
        end_time: sched.end,
        start: x.to_vec(),
        dim: spec.dim,
        lineage: *lineage,
        states,
        log_weights: None,
        divergent,
    })
}

fn check_start(spec: &OperatorSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.dim {
        return Err(Error::precondition(format!(
            "starting point has dimension {}, spec has {}",
            x.len(),
            spec.dim
        )));
    }
    Ok(())
}

/// `n` Euler-Maruyama paths from `x` at clock `t` down to clock `s`.
pub fn simulate(
    spec: &OperatorSpec,
    s: f64,
    t: f64,
    x: &[f64],
    n: usize,
    config: &PathConfig,
    lineage: &SeedLineage,
) -> Result<Ensemble> {
    let sched = Schedule::uniform(spec, t, s, config.step)?;
    simulate_on(spec, &sched, x, n, config, lineage)
}

/// Full trajectories (state after every step, starting point first) for
/// diagnostics; `n x (steps + 1) x d`, row-major.
pub fn simulate_trajectories(
    spec: &OperatorSpec,
    s: f64,
    t: f64,
    x: &[f64],
    n: usize,
    config: &PathConfig,
    lineage: &SeedLineage,
) -> Result<Vec<Vec<f64>>> {
    check_start(spec, x)?;
    struct Record(Vec<f64>);
    impl Visitor for Record {
        fn visit(&mut self, _k: usize, _tau: f64, _h: f64, x: &[f64], _dw: &[f64]) -> Result<()> {
            self.0.extend_from_slice(x);
            Ok(())
        }
    }
    let sched = Schedule::uniform(spec, t, s, config.step)?;
    let stepper = Stepper::new(spec, &sched, config);
    let shards = drive(n, lineage, |_, rng| {
        let mut y = x.to_vec();
        let mut rec = Record(Vec::with_capacity((sched.steps.len() + 1) * x.len()));
        stepper.run(&mut y, rng, &mut rec)?;
        rec.0.extend_from_slice(&y);
        Ok(rec.0)
    })?;
    Ok(shards.into_iter().flatten().collect())
}

/// Potential `c(τ, x)` integrated along paths.
pub type WeightFn<'a> = dyn Fn(f64, &[f64]) -> f64 + Sync + 'a;

/// Like [`simulate`], with `log_weights[i] = -Σ c(τ_k, X_k) h_k` (left endpoints).
#[allow(clippy::too_many_arguments)]
pub fn simulate_weighted(
    spec: &OperatorSpec,
    c: &WeightFn<'_>,
    s: f64,
    t: f64,
    x: &[f64],
    n: usize,
    config: &PathConfig,
    lineage: &SeedLineage,
) -> Result<Ensemble> {
    check_start(spec, x)?;
    struct Weight<'c>(f64, &'c WeightFn<'c>);
    impl Visitor for Weight<'_> {
        fn visit(&mut self, _k: usize, tau: f64, h: f64, x: &[f64], _dw: &[f64]) -> Result<()> {
            self.0 -= (self.1)(tau, x) * h;
            Ok(())
        }
    }
    let sched = Schedule::uniform(spec, t, s, config.step)?;
    let stepper = Stepper::new(spec, &sched, config);
    let shards = drive(n, lineage, |_, rng| {
        let mut y = x.to_vec();
        let mut w = Weight(0.0, c);
        let ok = stepper.run(&mut y, rng, &mut w)?;
        Ok((y, w.0, ok))
    })?;
    let mut states = Vec::with_capacity(n * spec.dim);
    let mut logw = Vec::with_capacity(n);
    let mut divergent = 0;
    for (y, w, ok) in shards.into_iter().flatten() {
        divergent += usize::from(!ok);
        states.extend(y);
        logw.push(w);
    }
    check_blowup(divergent, n)?;
    Ok(Ensemble {
        start_time: t,
        end_time: s,
        start: x.to_vec(),
        dim: spec.dim,
        lineage: *lineage,
        states,
        log_weights: Some(logw),
        divergent,
    })
}

/// Moves every particle of `points` (row-major, `d` columns) from clock `t`
/// to clock `s` with one path each; particle `i` uses path index `i`.
pub fn propagate(
    spec: &OperatorSpec,
    points: &[f64],
    s: f64,
    t: f64,
    config: &PathConfig,
    lineage: &SeedLineage,
) -> Result<Ensemble> {
    propagate_inner(spec, None, points, s, t, config, lineage)
}

/// [`propagate`] with Feynman-Kac log-weights for the potential `c`.
pub fn propagate_weighted(
    spec: &OperatorSpec,
    c: &WeightFn<'_>,
    points: &[f64],
    s: f64,
    t: f64,
    config: &PathConfig,
    lineage: &SeedLineage,
) -> Result<Ensemble> {
    propagate_inner(spec, Some(c), points, s, t, config, lineage)
}

fn propagate_inner(
    spec: &OperatorSpec,
    c: Option<&WeightFn<'_>>,
    points: &[f64],
    s: f64,
    t: f64,
    config: &PathConfig,
    lineage: &SeedLineage,
) -> Result<Ensemble> {
    struct Weight<'c>(f64, Option<&'c WeightFn<'c>>);
    impl Visitor for Weight<'_> {
        fn visit(&mut self, _k: usize, tau: f64, h: f64, x: &[f64], _dw: &[f64]) -> Result<()> {
            if let Some(c) = self.1 {
                self.0 -= c(tau, x) * h;
            }
            Ok(())
        }
    }
    let d = spec.dim;
    let n = points.len() / d;
    let sched = Schedule::uniform(spec, t, s, config.step)?;
    let stepper = Stepper::new(spec, &sched, config);
    let shards = drive(n, lineage, |i, rng| {
        let mut y = points[i * d..(i + 1) * d].to_vec();
        if y[0].is_nan() {
            return Ok((y, 0.0, false));
        }
        let mut w = Weight(0.0, c);
        let ok = stepper.run(&mut y, rng, &mut w)?;
        Ok((y, w.0, ok))
    })?;
    let mut states = Vec::with_capacity(n * d);
    let mut logw = Vec::with_capacity(n);
    let mut divergent = 0;
    for (y, w, ok) in shards.into_iter().flatten() {
        divergent += usize::from(!ok);
        states.extend(y);
        logw.push(w);
    }
    check_blowup(divergent, n)?;
    Ok(Ensemble {
        start_time: t,
        end_time: s,
        start: vec![f64::NAN; d],
        dim: d,
        lineage: *lineage,
        states,
        log_weights: c.map(|_| logw),
        divergent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_length_interval_returns_start() {
        let spec = OperatorSpec::ou(1.0, 1.0, 2);
        let e = simulate(
            &spec,
            1.0,
            1.0,
            &[0.5, -0.25],
            10,
            &PathConfig::default(),
            &SeedLineage::new(1),
        )
        .unwrap();
        assert!(e.finite_states().all(|y| y == [0.5, -0.25]));
    }

    #[test]
    fn same_lineage_is_bit_identical() {
        let spec = OperatorSpec::power(4.0, 1);
        let cfg = PathConfig::with_step(1e-2);
        let a = simulate(&spec, 0.0, 1.0, &[0.3], 3000, &cfg, &SeedLineage::new(5)).unwrap();
        let b = simulate(&spec, 0.0, 1.0, &[0.3], 3000, &cfg, &SeedLineage::new(5)).unwrap();
        assert_eq!(a, b);
        let c = simulate(&spec, 0.0, 1.0, &[0.3], 3000, &cfg, &SeedLineage::new(6)).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn shard_ranges_merge_to_the_full_run() {
        let spec = OperatorSpec::ou(1.0, 1.0, 1);
        let cfg = PathConfig::with_step(1e-2);
        let lin = SeedLineage::new(11);
        let full = simulate(&spec, 0.0, 1.0, &[0.0], 4 * SHARD_SIZE, &cfg, &lin).unwrap();
        let a = simulate(&spec, 0.0, 1.0, &[0.0], 2 * SHARD_SIZE, &cfg, &lin).unwrap();
        let b = simulate(
            &spec,
            0.0,
            1.0,
            &[0.0],
            2 * SHARD_SIZE,
            &cfg,
            &lin.offset_shards(2),
        )
        .unwrap();
        assert_eq!(&full.states[..2 * SHARD_SIZE], &a.states[..]);
        assert_eq!(&full.states[2 * SHARD_SIZE..], &b.states[..]);
        let f = |y: &[f64]| y[0] * y[0];
        let mut m = merge(&a.shard_accumulators(|_, y| f(y)));
        m.merge(&merge(&b.shard_accumulators(|_, y| f(y))));
        let whole = full.estimate(f);
        assert!((m.mean() - whole.value).abs() <= 1e-12 * whole.value.abs());
    }

    #[test]
    fn step_larger_than_interval_is_rejected() {
        let spec = OperatorSpec::ou(1.0, 1.0, 1);
        let r = simulate(
            &spec,
            0.0,
            0.01,
            &[0.0],
            10,
            &PathConfig::with_step(0.1),
            &SeedLineage::new(1),
        );
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn explosive_drift_is_reported() {
        let mut spec = OperatorSpec::ou(1.0, 1.0, 1);
        spec.drift = std::sync::Arc::new(crate::operator::LinearDrift {
            theta: std::sync::Arc::new(|_| -50.0),
            dim: 1,
            time_dependent: false,
            label: "-50".into(),
        });
        let r = simulate(
            &spec,
            0.0,
            1.0,
            &[1.0],
            200,
            &PathConfig::with_step(1e-2),
            &SeedLineage::new(1),
        );
        assert!(matches!(r, Err(Error::Blowup { .. })));
    }
}
