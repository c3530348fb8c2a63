//! Operator families `Tr(Q(t) D²) + <b(t,x), ∇>` and their structural constants.

mod config;
mod hypotheses;
mod lyapunov;
mod potential;
mod presets;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::expr::VectorExpr;
use crate::numdiff;
use crate::{Error, Result};

pub use config::{load_config, parse_config, ConfigFile};
pub use hypotheses::{
    annulus_grid, check_convex_lyapunov, check_dissipativity, check_ellipticity, check_lyapunov,
    classify_regime, minimal_lyapunov_offset, probe_points, ConvexLyapunov, HypothesisReport,
    RadialGrid, RegimeClassification,
};
pub use lyapunov::{LyapunovFamily, LyapunovSpec};
pub use potential::PotentialSpec;
pub use presets::{catalog, PresetInfo};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type Field = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// The vector field `b(t, x)`.
pub trait Drift: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()>;

    /// `out[(i, j)] = ∂b_i/∂x_j`. Central differences with step `1e-5 (1 + |x|)`
    /// unless overridden.
    fn jacobian(&self, t: f64, x: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        let d = self.dim();
        let h = numdiff::gradient_step(x);
        let mut y = x.to_vec();
        let mut bp = vec![0.0; d];
        let mut bm = vec![0.0; d];
        for j in 0..d {
            y[j] = x[j] + h;
            self.eval(t, &y, &mut bp)?;
            y[j] = x[j] - h;
            self.eval(t, &y, &mut bm)?;
            y[j] = x[j];
            for i in 0..d {
                out[(i, j)] = (bp[i] - bm[i]) / (2.0 * h);
            }
        }
        Ok(())
    }

    /// Whether the drift grows faster than linearly, which turns on the tamed
    /// increment in the path simulator.
    fn superlinear(&self) -> bool {
        false
    }

    fn depends_on_time(&self) -> bool {
        false
    }

    /// `U(r)` when `b(x) = -∇U(x)` with `U` radial and time-independent.
    fn radial_potential(&self, _r: f64) -> Option<f64> {
        None
    }

    /// `θ` when `b(t,x) = -θ(t) x`, with whether it depends on time.
    fn linear_rate(&self) -> Option<(ScalarFn, bool)> {
        None
    }

    fn describe(&self) -> String;
}

/// `b(t,x) = -θ(t) x`.
pub struct LinearDrift {
    pub theta: ScalarFn,
    pub dim: usize,
    pub time_dependent: bool,
    pub label: String,
}

impl Drift for LinearDrift {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let th = (self.theta)(t);
        for (o, v) in out.iter_mut().zip(x) {
            *o = -th * v;
        }
        Ok(())
    }

    fn jacobian(&self, t: f64, _x: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        out.fill(0.0);
        out.fill_diagonal(-(self.theta)(t));
        Ok(())
    }

    fn depends_on_time(&self) -> bool {
        self.time_dependent
    }

    fn radial_potential(&self, r: f64) -> Option<f64> {
        (!self.time_dependent).then(|| 0.5 * (self.theta)(0.0) * r * r)
    }

    fn linear_rate(&self) -> Option<(ScalarFn, bool)> {
        Some((self.theta.clone(), self.time_dependent))
    }

    fn describe(&self) -> String {
        format!("-({}) x", self.label)
    }
}

/// `b(x) = -a x - k |x|^(κ-2) x`.
pub struct PowerDrift {
    pub linear: f64,
    pub coeff: f64,
    pub exponent: f64,
    pub dim: usize,
}

impl Drift for PowerDrift {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let r2 = x.iter().map(|v| v * v).sum::<f64>();
        let e = 0.5 * (self.exponent - 2.0);
        let g = if r2 == 0.0 {
            0.0
        } else if e.fract() == 0.0 && e.abs() < 32.0 {
            r2.powi(e as i32)
        } else {
            r2.powf(e)
        };
        let c = self.linear + self.coeff * g;
        for (o, v) in out.iter_mut().zip(x) {
            *o = -c * v;
        }
        Ok(())
    }

    fn jacobian(&self, _t: f64, x: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        let r2 = x.iter().map(|v| v * v).sum::<f64>();
        out.fill(0.0);
        if r2 == 0.0 {
            out.fill_diagonal(-self.linear);
            return Ok(());
        }
        let k = self.exponent;
        let g = r2.powf(0.5 * (k - 2.0));
        out.fill_diagonal(-self.linear - self.coeff * g);
        let w = self.coeff * (k - 2.0) * g / r2;
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[(i, j)] -= w * x[i] * x[j];
            }
        }
        Ok(())
    }

    fn superlinear(&self) -> bool {
        self.exponent > 2.0
    }

    fn radial_potential(&self, r: f64) -> Option<f64> {
        Some(0.5 * self.linear * r * r + self.coeff * r.powf(self.exponent) / self.exponent)
    }

    fn describe(&self) -> String {
        format!(
            "-{} x - {} |x|^{} x",
            self.linear,
            self.coeff,
            self.exponent - 2.0
        )
    }
}

/// `b(x) = -a x - k x (log(1 + |x|²))^α`.
pub struct LogPowerDrift {
    pub linear: f64,
    pub coeff: f64,
    pub log_exponent: f64,
    pub dim: usize,
}

impl Drift for LogPowerDrift {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let r2 = x.iter().map(|v| v * v).sum::<f64>();
        let c = self.linear + self.coeff * r2.ln_1p().powf(self.log_exponent);
        for (o, v) in out.iter_mut().zip(x) {
            *o = -c * v;
        }
        Ok(())
    }

    fn jacobian(&self, _t: f64, x: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        let r2 = x.iter().map(|v| v * v).sum::<f64>();
        out.fill(0.0);
        if r2 == 0.0 {
            out.fill_diagonal(-self.linear);
            return Ok(());
        }
        let a = self.log_exponent;
        let l = r2.ln_1p();
        let la = l.powf(a);
        out.fill_diagonal(-self.linear - self.coeff * la);
        let w = self.coeff * a * (la / l) * 2.0 / (1.0 + r2);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[(i, j)] -= w * x[i] * x[j];
            }
        }
        Ok(())
    }

    fn superlinear(&self) -> bool {
        true
    }

    fn describe(&self) -> String {
        format!(
            "-{} x - {} x log(1+|x|^2)^{}",
            self.linear, self.coeff, self.log_exponent
        )
    }
}

/// Drift given by user expressions, one per coordinate.
pub struct ExprDrift {
    pub field: VectorExpr,
    pub superlinear: bool,
}

impl Drift for ExprDrift {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        Ok(self.field.eval_into(t, x, out)?)
    }

    fn superlinear(&self) -> bool {
        self.superlinear
    }

    fn depends_on_time(&self) -> bool {
        self.field.depends_on_time()
    }

    fn describe(&self) -> String {
        self.field.pretty()
    }
}

/// `Q(t)`, either `q(t)` times the identity or a full matrix function.
#[derive(Clone)]
pub enum Diffusion {
    Scalar {
        q: ScalarFn,
        constant: Option<f64>,
    },
    Matrix {
        q: Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>,
        constant: Option<DMatrix<f64>>,
    },
}

impl fmt::Debug for Diffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diffusion::Scalar { constant, .. } => write!(f, "Scalar({constant:?})"),
            Diffusion::Matrix { constant, .. } => write!(f, "Matrix({constant:?})"),
        }
    }
}

/// How the Brownian increment enters one Euler step: `sqrt(2 Q)`.
#[derive(Debug, Clone)]
pub enum NoiseFactor {
    Scalar(f64),
    Matrix(DMatrix<f64>),
}

impl Diffusion {
    pub fn constant_scalar(q: f64) -> Self {
        Diffusion::Scalar {
            q: Arc::new(move |_| q),
            constant: Some(q),
        }
    }

    pub fn scalar_fn(q: ScalarFn) -> Self {
        Diffusion::Scalar { q, constant: None }
    }

    pub fn constant_matrix(m: DMatrix<f64>) -> Self {
        let c = m.clone();
        Diffusion::Matrix {
            q: Arc::new(move |_| c.clone()),
            constant: Some(m),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Diffusion::Scalar { constant, .. } => constant.is_some(),
            Diffusion::Matrix { constant, .. } => constant.is_some(),
        }
    }

    /// `Q(t)` as a `d x d` matrix, without symmetrization.
    pub fn matrix(&self, t: f64, dim: usize) -> DMatrix<f64> {
        match self {
            Diffusion::Scalar { q, .. } => DMatrix::identity(dim, dim) * q(t),
            Diffusion::Matrix { q, .. } => q(t),
        }
    }

    pub fn trace(&self, t: f64, dim: usize) -> f64 {
        match self {
            Diffusion::Scalar { q, .. } => q(t) * dim as f64,
            Diffusion::Matrix { q, .. } => q(t).trace(),
        }
    }

    /// `sqrt(2 Q(t))` through the eigendecomposition of the symmetrized matrix.
    pub fn noise_factor(&self, t: f64, dim: usize) -> NoiseFactor {
        match self {
            Diffusion::Scalar { q, .. } => NoiseFactor::Scalar((2.0 * q(t)).max(0.0).sqrt()),
            Diffusion::Matrix { q, .. } => {
                let m = q(t);
                let sym = (&m + m.transpose()) * 0.5;
                let eig = SymmetricEigen::new(sym);
                let root = eig.eigenvalues.map(|v| (2.0 * v).max(0.0).sqrt());
                let v = &eig.eigenvectors;
                NoiseFactor::Matrix(v * DMatrix::from_diagonal(&root) * v.transpose())
            }
        }
        .shrink(dim)
    }
}

impl NoiseFactor {
    fn shrink(self, dim: usize) -> Self {
        match self {
            NoiseFactor::Matrix(m) if dim == 1 => NoiseFactor::Scalar(m[(0, 0)]),
            other => other,
        }
    }

    /// `out = factor * z`.
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        match self {
            NoiseFactor::Scalar(s) => {
                for (o, v) in out.iter_mut().zip(z) {
                    *o = s * v;
                }
            }
            NoiseFactor::Matrix(m) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..z.len()).map(|j| m[(i, j)] * z[j]).sum();
                }
            }
        }
    }
}

/// Drift growth regime, strongest first in the implication ladder
/// ultracontractive ⇒ ultrabounded ⇒ supercontractive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    /// `<b,x> <= -coeff |x|^exponent` for `|x| >= radius`, `exponent > 2`.
    Ultracontractive {
        coeff: f64,
        exponent: f64,
        radius: f64,
    },
    /// `<b,x> <= -coeff |x|² (log|x|)^log_exponent` for `|x| >= radius`, `log_exponent > 1`.
    Ultrabounded {
        coeff: f64,
        log_exponent: f64,
        radius: f64,
    },
    /// `<b,x> <= -coeff |x|² log|x|` for `|x| >= radius`.
    Supercontractive {
        coeff: f64,
        radius: f64,
    },
    Unclassified,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Ultracontractive { .. } => "ultracontractive",
            Regime::Ultrabounded { .. } => "ultrabounded",
            Regime::Supercontractive { .. } => "supercontractive",
            Regime::Unclassified => "unclassified",
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Regime::Ultracontractive { .. } => 3,
            Regime::Ultrabounded { .. } => 2,
            Regime::Supercontractive { .. } => 1,
            Regime::Unclassified => 0,
        }
    }

    /// Whether this regime implies `other` (e.g. ultracontractive implies ultrabounded).
    pub fn implies(&self, other: &Regime) -> bool {
        self.rank() >= other.rank()
    }

    /// Names of all properties implied by this regime.
    pub fn ladder(&self) -> Vec<&'static str> {
        ["supercontractive", "ultrabounded", "ultracontractive"]
            .into_iter()
            .take(self.rank() as usize)
            .collect()
    }

    pub fn is_ultracontractive(&self) -> bool {
        matches!(self, Regime::Ultracontractive { .. })
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Ultracontractive {
                coeff,
                exponent,
                radius,
            } => {
                write!(
                    f,
                    "ultracontractive(coeff={coeff}, exponent={exponent}, radius={radius})"
                )
            }
            Regime::Ultrabounded {
                coeff,
                log_exponent,
                radius,
            } => {
                write!(
                    f,
                    "ultrabounded(coeff={coeff}, log_exponent={log_exponent}, radius={radius})"
                )
            }
            Regime::Supercontractive { coeff, radius } => {
                write!(f, "supercontractive(coeff={coeff}, radius={radius})")
            }
            Regime::Unclassified => f.write_str("unclassified"),
        }
    }
}

/// A full description of the operator plus the constants it is certified with.
#[derive(Clone)]
pub struct OperatorSpec {
    pub name: String,
    pub dim: usize,
    pub diffusion: Diffusion,
    pub drift: Arc<dyn Drift>,
    /// Lower ellipticity bound: `<Q(t)ξ,ξ> >= eta0 |ξ|²`.
    pub eta0: f64,
    /// Upper ellipticity bound: `<Q(t)ξ,ξ> <= lambda_max |ξ|²`.
    pub lambda_max: f64,
    /// One-sided Lipschitz bound of the drift, `<∇b ξ,ξ> <= r0 |ξ|²`, negative.
    pub r0: f64,
    pub regime: Regime,
    pub time_window: (f64, f64),
    /// First 8 bytes of the SHA-256 of the configuration text; 0 for specs built in code.
    pub spec_hash: u64,
}

impl fmt::Debug for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("diffusion", &self.diffusion)
            .field("drift", &self.drift.describe())
            .field("eta0", &self.eta0)
            .field("lambda_max", &self.lambda_max)
            .field("r0", &self.r0)
            .field("regime", &self.regime)
            .field("time_window", &self.time_window)
            .finish()
    }
}

impl OperatorSpec {
    /// Validates the scalar invariants: `0 < eta0 <= lambda_max`, `r0 < 0`,
    /// matching dimensions.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        if self.drift.dim() != self.dim {
            return Err(Error::Config(format!(
                "drift has dimension {}, spec has {}",
                self.drift.dim(),
                self.dim
            )));
        }
        if !(self.eta0 > 0.0 && self.eta0 <= self.lambda_max) {
            return Err(Error::Config(format!(
                "ellipticity bounds must satisfy 0 < eta0 <= lambda, got {} and {}",
                self.eta0, self.lambda_max
            )));
        }
        if !(self.r0 < 0.0) {
            return Err(Error::Config(format!(
                "r0 must be negative, got {}",
                self.r0
            )));
        }
        if !(self.time_window.0 <= self.time_window.1) {
            return Err(Error::Config("time window is empty".into()));
        }
        Ok(())
    }

    pub fn drift_at(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.drift.eval(t, x, &mut out)?;
        Ok(out)
    }

    /// `Tr(Q(t) H) + <b(t,x), g>` for a function with gradient `g` and Hessian `H` at `x`.
    pub fn generator_from_derivatives(
        &self,
        t: f64,
        x: &[f64],
        grad: &[f64],
        hess: &DMatrix<f64>,
    ) -> Result<f64> {
        let b = self.drift_at(t, x)?;
        let second = match &self.diffusion {
            Diffusion::Scalar { q, .. } => q(t) * hess.trace(),
            Diffusion::Matrix { q, .. } => (q(t) * hess).trace(),
        };
        Ok(second + numdiff::dot(&b, grad))
    }

    /// `A(t)f(x)` using central differences for the derivatives of `f`.
    pub fn generator_fd<F: Fn(&[f64]) -> f64 + ?Sized>(
        &self,
        f: &F,
        t: f64,
        x: &[f64],
    ) -> Result<f64> {
        let mut g = vec![0.0; self.dim];
        numdiff::gradient(f, x, &mut g);
        let h = numdiff::hessian(f, x);
        self.generator_from_derivatives(t, x, &g, &h)
    }

    /// `sup_t |b(t, 0)|` over a grid of the time window.
    pub fn drift_at_origin_sup(&self) -> Result<f64> {
        let zero = vec![0.0; self.dim];
        let mut best: f64 = 0.0;
        for t in time_samples(
            self.time_window,
            if self.drift.depends_on_time() { 257 } else { 1 },
        ) {
            best = best.max(numdiff::norm(&self.drift_at(t, &zero)?));
        }
        Ok(best)
    }
}

/// `n` equispaced points covering the closed window.
pub fn time_samples(window: (f64, f64), n: usize) -> Vec<f64> {
    if n <= 1 || window.0 == window.1 {
        return vec![window.0];
    }
    (0..n)
        .map(|i| window.0 + (window.1 - window.0) * i as f64 / (n - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let scale = a.amax().max(1.0);
        (a - b).amax() / scale
    }

    struct Fd<'a>(&'a dyn Drift);
    impl Drift for Fd<'_> {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
            self.0.eval(t, x, out)
        }
        fn describe(&self) -> String {
            String::new()
        }
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let drifts: Vec<Box<dyn Drift>> = vec![
            Box::new(PowerDrift {
                linear: 1.0,
                coeff: 1.0,
                exponent: 4.0,
                dim: 2,
            }),
            Box::new(PowerDrift {
                linear: 0.5,
                coeff: 2.0,
                exponent: 3.0,
                dim: 3,
            }),
            Box::new(LogPowerDrift {
                linear: 1.0,
                coeff: 1.0,
                log_exponent: 2.0,
                dim: 2,
            }),
            Box::new(LogPowerDrift {
                linear: 1.0,
                coeff: 1.0,
                log_exponent: 1.0,
                dim: 1,
            }),
        ];
        let probes: [&[f64]; 4] = [
            &[0.3, -1.1, 0.4],
            &[2.5, 0.1, -3.0],
            &[-0.01, 0.02, 0.0],
            &[7.0, -4.0, 1.0],
        ];
        for b in &drifts {
            let d = b.dim();
            for p in probes {
                let x = &p[..d];
                let mut a = DMatrix::zeros(d, d);
                let mut n = DMatrix::zeros(d, d);
                b.jacobian(0.0, x, &mut a).unwrap();
                Fd(b.as_ref()).jacobian(0.0, x, &mut n).unwrap();
                assert!(max_rel_err(&a, &n) < 1e-6, "{} at {x:?}", b.describe());
            }
        }
    }

    #[test]
    fn noise_factor_squares_to_twice_q() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let diff = Diffusion::constant_matrix(q.clone());
        match diff.noise_factor(0.0, 2) {
            NoiseFactor::Matrix(s) => assert!((&s * &s - q * 2.0).amax() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn regime_ladder() {
        let u = Regime::Ultracontractive {
            coeff: 1.0,
            exponent: 4.0,
            radius: 2.0,
        };
        assert_eq!(
            u.ladder(),
            vec!["supercontractive", "ultrabounded", "ultracontractive"]
        );
        assert!(u.implies(&Regime::Supercontractive {
            coeff: 1.0,
            radius: 2.0
        }));
        assert!(Regime::Unclassified.ladder().is_empty());
    }
}
