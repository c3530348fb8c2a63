//! Test functions and the parametrized families the inequality checkers
//! maximize over.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::expr::Compiled;
use crate::numdiff;
use crate::{Error, Result};

/// Functions whose Gaussian expectation is known in closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum ClosedForm {
    Constant(f64),
    /// `Σ c_k y_j^k` in one coordinate `j`, degree at most 4.
    Polynomial {
        coord: usize,
        coeffs: Vec<f64>,
    },
    /// `scale · exp(-a |y - z|²) + offset`.
    Gaussian {
        a: f64,
        center: Vec<f64>,
        scale: f64,
        offset: f64,
    },
    /// `Π_j cos(ω_j y_j + φ_j)`.
    CosineProduct {
        freq: Vec<f64>,
        phase: Vec<f64>,
    },
}

pub trait TestFunction: Send + Sync {
    fn eval(&self, x: &[f64]) -> f64;

    /// Central differences with step `1e-5 (1 + |x|)` unless overridden.
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        numdiff::gradient(&|y: &[f64]| self.eval(y), x, out)
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        numdiff::hessian(&|y: &[f64]| self.eval(y), x)
    }

    /// `Some(c)` when the function is identically `c`.
    fn constant_value(&self) -> Option<f64> {
        None
    }

    /// `sup |f|` for bounded functions.
    fn sup_abs(&self) -> Option<f64> {
        None
    }

    fn closed_form(&self) -> Option<ClosedForm> {
        None
    }

    fn name(&self) -> String;
}

pub type SharedFn = Arc<dyn TestFunction>;

impl fmt::Debug for dyn TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

pub fn grad_norm(f: &dyn TestFunction, x: &[f64]) -> f64 {
    let mut g = vec![0.0; x.len()];
    f.gradient(x, &mut g);
    numdiff::norm(&g)
}

#[derive(Debug, Clone)]
pub struct Constant(pub f64);

impl TestFunction for Constant {
    fn eval(&self, _x: &[f64]) -> f64 {
        self.0
    }
    fn gradient(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
    fn constant_value(&self) -> Option<f64> {
        Some(self.0)
    }
    fn sup_abs(&self) -> Option<f64> {
        Some(self.0.abs())
    }
    fn closed_form(&self) -> Option<ClosedForm> {
        Some(ClosedForm::Constant(self.0))
    }
    fn name(&self) -> String {
        format!("const({})", self.0)
    }
}

/// `scale · exp(-a |x - z|²) + offset`.
#[derive(Debug, Clone)]
pub struct GaussianBump {
    pub a: f64,
    pub center: Vec<f64>,
    pub scale: f64,
    pub offset: f64,
}

impl GaussianBump {
    pub fn new(a: f64, center: Vec<f64>) -> Self {
        GaussianBump {
            a,
            center,
            scale: 1.0,
            offset: 0.0,
        }
    }

    fn core(&self, x: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(u, z)| (u - z).powi(2))
            .sum();
        (-self.a * r2).exp()
    }
}

impl TestFunction for GaussianBump {
    fn eval(&self, x: &[f64]) -> f64 {
        self.scale * self.core(x) + self.offset
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let e = self.scale * self.core(x);
        for ((o, u), z) in out.iter_mut().zip(x).zip(&self.center) {
            *o = -2.0 * self.a * (u - z) * e;
        }
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let e = self.scale * self.core(x);
        DMatrix::from_fn(d, d, |i, j| {
            let di = x[i] - self.center[i];
            let dj = x[j] - self.center[j];
            e * (4.0 * self.a * self.a * di * dj - if i == j { 2.0 * self.a } else { 0.0 })
        })
    }
    fn constant_value(&self) -> Option<f64> {
        (self.scale == 0.0).then_some(self.offset)
    }
    fn sup_abs(&self) -> Option<f64> {
        Some(self.scale.abs() + self.offset.abs())
    }
    fn closed_form(&self) -> Option<ClosedForm> {
        Some(ClosedForm::Gaussian {
            a: self.a,
            center: self.center.clone(),
            scale: self.scale,
            offset: self.offset,
        })
    }
    fn name(&self) -> String {
        let z: Vec<String> = self.center.iter().map(|v| format!("{v}")).collect();
        let mut s = format!("gauss(a={}, z=[{}])", self.a, z.join(","));
        if self.scale != 1.0 {
            s = format!("{}*{s}", self.scale);
        }
        if self.offset != 0.0 {
            s = format!("{s}+{}", self.offset);
        }
        s
    }
}

/// `Π_j cos(ω_j x_j + φ_j)`.
#[derive(Debug, Clone)]
pub struct CosineProduct {
    pub freq: Vec<f64>,
    pub phase: Vec<f64>,
}

impl CosineProduct {
    /// `cos(x_1)` in dimension `d`.
    pub fn first_coordinate(dim: usize) -> Self {
        let mut freq = vec![0.0; dim];
        freq[0] = 1.0;
        CosineProduct {
            freq,
            phase: vec![0.0; dim],
        }
    }
}

impl TestFunction for CosineProduct {
    fn eval(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.freq)
            .zip(&self.phase)
            .map(|((u, w), p)| (w * u + p).cos())
            .product()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let c: Vec<f64> = x
            .iter()
            .zip(&self.freq)
            .zip(&self.phase)
            .map(|((u, w), p)| (w * u + p).cos())
            .collect();
        for i in 0..x.len() {
            let rest: f64 = c
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, v)| v)
                .product();
            out[i] = -self.freq[i] * (self.freq[i] * x[i] + self.phase[i]).sin() * rest;
        }
    }
    fn constant_value(&self) -> Option<f64> {
        self.freq
            .iter()
            .all(|w| *w == 0.0)
            .then(|| self.phase.iter().map(|p| p.cos()).product())
    }
    fn sup_abs(&self) -> Option<f64> {
        Some(1.0)
    }
    fn closed_form(&self) -> Option<ClosedForm> {
        Some(ClosedForm::CosineProduct {
            freq: self.freq.clone(),
            phase: self.phase.clone(),
        })
    }
    fn name(&self) -> String {
        let parts: Vec<String> = self
            .freq
            .iter()
            .zip(&self.phase)
            .enumerate()
            .filter(|(_, (w, _))| **w != 0.0)
            .map(|(i, (w, p))| {
                if *p == 0.0 {
                    format!("cos({w}*x{})", i + 1)
                } else {
                    format!("cos({w}*x{}+{p})", i + 1)
                }
            })
            .collect();
        if parts.is_empty() {
            format!("const({})", self.constant_value().unwrap_or(1.0))
        } else {
            parts.join("*")
        }
    }
}

/// `Σ c_k x_j^k`; unbounded, used for moment checks.
#[derive(Debug, Clone)]
pub struct Polynomial {
    pub coord: usize,
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn monomial(coord: usize, degree: usize) -> Self {
        let mut coeffs = vec![0.0; degree + 1];
        coeffs[degree] = 1.0;
        Polynomial { coord, coeffs }
    }

    fn horner(c: &[f64], y: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, v| acc * y + v)
    }
}

impl TestFunction for Polynomial {
    fn eval(&self, x: &[f64]) -> f64 {
        Self::horner(&self.coeffs, x[self.coord])
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let d: Vec<f64> = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| k as f64 * c)
            .collect();
        out[self.coord] = Self::horner(&d, x[self.coord]);
    }
    fn constant_value(&self) -> Option<f64> {
        self.coeffs
            .iter()
            .skip(1)
            .all(|c| *c == 0.0)
            .then(|| self.coeffs.first().copied().unwrap_or(0.0))
    }
    fn closed_form(&self) -> Option<ClosedForm> {
        (self.coeffs.len() <= 5).then(|| ClosedForm::Polynomial {
            coord: self.coord,
            coeffs: self.coeffs.clone(),
        })
    }
    fn name(&self) -> String {
        let terms: Vec<String> = self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(k, c)| match k {
                0 => format!("{c}"),
                1 => format!("{c}*x{}", self.coord + 1),
                _ => format!("{c}*x{}^{k}", self.coord + 1),
            })
            .collect();
        if terms.is_empty() {
            "0".into()
        } else {
            terms.join("+")
        }
    }
}

/// Smooth radial cutoff equal to 1 on `|x| <= r` and 0 on `|x| >= 2r`.
fn cutoff(u: f64) -> (f64, f64) {
    // ψ(u) = e(2-u) / (e(2-u) + e(u-1)), e(v) = exp(-1/v) for v > 0.
    let e = |v: f64| if v > 0.0 { (-1.0 / v).exp() } else { 0.0 };
    let de = |v: f64| {
        if v > 0.0 {
            (-1.0 / v).exp() / (v * v)
        } else {
            0.0
        }
    };
    if u <= 1.0 {
        return (1.0, 0.0);
    }
    if u >= 2.0 {
        return (0.0, 0.0);
    }
    let (a, b) = (e(2.0 - u), e(u - 1.0));
    let (da, db) = (-de(2.0 - u), de(u - 1.0));
    let s = a + b;
    (a / s, (da * s - a * (da + db)) / (s * s))
}

/// `p(x_j) ψ(|x|/r)` with `ψ` a smooth cutoff; bounded.
#[derive(Debug, Clone)]
pub struct PolyCutoff {
    pub poly: Polynomial,
    pub radius: f64,
}

impl TestFunction for PolyCutoff {
    fn eval(&self, x: &[f64]) -> f64 {
        let (psi, _) = cutoff(numdiff::norm(x) / self.radius);
        if psi == 0.0 {
            0.0
        } else {
            self.poly.eval(x) * psi
        }
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let r = numdiff::norm(x);
        let (psi, dpsi) = cutoff(r / self.radius);
        self.poly.gradient(x, out);
        let p = self.poly.eval(x);
        for (o, v) in out.iter_mut().zip(x) {
            *o *= psi;
            if r > 0.0 {
                *o += p * dpsi / self.radius * v / r;
            }
        }
    }
    fn constant_value(&self) -> Option<f64> {
        self.poly.constant_value().filter(|c| *c == 0.0)
    }
    fn sup_abs(&self) -> Option<f64> {
        let r = 2.0 * self.radius;
        Some(
            (0..=400)
                .map(|k| self.poly.eval_scalar(-r + 2.0 * r * k as f64 / 400.0).abs())
                .fold(0.0, f64::max),
        )
    }
    fn name(&self) -> String {
        format!("({})*cutoff({})", self.poly.name(), self.radius)
    }
}

impl Polynomial {
    fn eval_scalar(&self, y: f64) -> f64 {
        Self::horner(&self.coeffs, y)
    }
}

/// Logistic smoothing of the indicator of the ball `B(center, radius)`.
#[derive(Debug, Clone)]
pub struct SmoothIndicator {
    pub center: Vec<f64>,
    pub radius: f64,
    pub width: f64,
}

impl TestFunction for SmoothIndicator {
    fn eval(&self, x: &[f64]) -> f64 {
        let r: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(u, z)| (u - z).powi(2))
            .sum::<f64>()
            .sqrt();
        1.0 / (1.0 + ((r - self.radius) / self.width).exp())
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let r: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(u, z)| (u - z).powi(2))
            .sum::<f64>()
            .sqrt();
        let s = 1.0 / (1.0 + ((r - self.radius) / self.width).exp());
        let ds = -s * (1.0 - s) / self.width;
        for ((o, u), z) in out.iter_mut().zip(x).zip(&self.center) {
            *o = if r > 0.0 { ds * (u - z) / r } else { 0.0 };
        }
    }
    fn sup_abs(&self) -> Option<f64> {
        Some(1.0)
    }
    fn name(&self) -> String {
        format!("ind(r={}, w={})", self.radius, self.width)
    }
}

/// `scale / (1 + |x - z|²)`.
#[derive(Debug, Clone)]
pub struct Lorentzian {
    pub center: Vec<f64>,
    pub scale: f64,
}

impl TestFunction for Lorentzian {
    fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(u, z)| (u - z).powi(2))
            .sum();
        self.scale / (1.0 + r2)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let r2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(u, z)| (u - z).powi(2))
            .sum();
        let k = -2.0 * self.scale / (1.0 + r2).powi(2);
        for ((o, u), z) in out.iter_mut().zip(x).zip(&self.center) {
            *o = k * (u - z);
        }
    }
    fn sup_abs(&self) -> Option<f64> {
        Some(self.scale.abs())
    }
    fn name(&self) -> String {
        format!("lorentz(scale={})", self.scale)
    }
}

/// `<c, x> + c0`; unbounded.
#[derive(Debug, Clone)]
pub struct Linear {
    pub coeffs: Vec<f64>,
    pub intercept: f64,
}

impl TestFunction for Linear {
    fn eval(&self, x: &[f64]) -> f64 {
        numdiff::dot(&self.coeffs, x) + self.intercept
    }
    fn gradient(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.coeffs);
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
    fn constant_value(&self) -> Option<f64> {
        self.coeffs
            .iter()
            .all(|c| *c == 0.0)
            .then_some(self.intercept)
    }
    fn closed_form(&self) -> Option<ClosedForm> {
        let nz: Vec<usize> = (0..self.coeffs.len())
            .filter(|&i| self.coeffs[i] != 0.0)
            .collect();
        match nz.as_slice() {
            [] => Some(ClosedForm::Constant(self.intercept)),
            [j] => Some(ClosedForm::Polynomial {
                coord: *j,
                coeffs: vec![self.intercept, self.coeffs[*j]],
            }),
            _ => None,
        }
    }
    fn name(&self) -> String {
        let terms: Vec<String> = self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, c)| format!("{c}*x{}", i + 1))
            .collect();
        let mut s = if terms.is_empty() {
            "0".to_string()
        } else {
            terms.join("+")
        };
        if self.intercept != 0.0 {
            s = format!("{s}+{}", self.intercept);
        }
        s
    }
}

/// `c · f`.
#[derive(Clone)]
pub struct Scaled {
    pub inner: SharedFn,
    pub factor: f64,
}

impl TestFunction for Scaled {
    fn eval(&self, x: &[f64]) -> f64 {
        self.factor * self.inner.eval(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.inner.gradient(x, out);
        out.iter_mut().for_each(|v| *v *= self.factor);
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        self.inner.hessian(x) * self.factor
    }
    fn constant_value(&self) -> Option<f64> {
        self.inner.constant_value().map(|c| c * self.factor)
    }
    fn sup_abs(&self) -> Option<f64> {
        self.inner.sup_abs().map(|s| s * self.factor.abs())
    }
    fn closed_form(&self) -> Option<ClosedForm> {
        Some(match self.inner.closed_form()? {
            ClosedForm::Constant(c) => ClosedForm::Constant(c * self.factor),
            ClosedForm::Polynomial { coord, coeffs } => ClosedForm::Polynomial {
                coord,
                coeffs: coeffs.iter().map(|c| c * self.factor).collect(),
            },
            ClosedForm::Gaussian {
                a,
                center,
                scale,
                offset,
            } => ClosedForm::Gaussian {
                a,
                center,
                scale: scale * self.factor,
                offset: offset * self.factor,
            },
            ClosedForm::CosineProduct { .. } => return None,
        })
    }
    fn name(&self) -> String {
        format!("{}*{}", self.factor, self.inner.name())
    }
}

/// A function given by an expression in `x1..xd` (no `t`).
pub struct ExprFunction {
    code: Compiled,
    source: String,
}

impl ExprFunction {
    pub fn parse(source: &str, dim: usize) -> Result<Self> {
        let tree = crate::expr::parse(source, dim)?;
        if tree.depends_on_time() {
            return Err(Error::Config(format!(
                "test function {source:?} may not depend on t"
            )));
        }
        Ok(ExprFunction {
            code: Compiled::new(tree),
            source: source.to_string(),
        })
    }
}

impl TestFunction for ExprFunction {
    fn eval(&self, x: &[f64]) -> f64 {
        self.code.eval(0.0, x).unwrap_or(f64::NAN)
    }
    fn constant_value(&self) -> Option<f64> {
        (!self.code.tree().depends_on_state()).then(|| self.eval(&[]))
    }
    fn name(&self) -> String {
        self.source.clone()
    }
}

/// Named bounded families with a seeded parameter draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    Gaussian,
    Trig,
    PolyCutoff,
    Indicator,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 4] = [
        FamilyKind::Gaussian,
        FamilyKind::Trig,
        FamilyKind::PolyCutoff,
        FamilyKind::Indicator,
    ];

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "gaussian" => FamilyKind::Gaussian,
            "trig" => FamilyKind::Trig,
            "polycutoff" => FamilyKind::PolyCutoff,
            "indicator" => FamilyKind::Indicator,
            other => {
                return Err(Error::Config(format!(
                    "unknown test function family {other:?}"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::Gaussian => "gaussian",
            FamilyKind::Trig => "trig",
            FamilyKind::PolyCutoff => "polycutoff",
            FamilyKind::Indicator => "indicator",
        }
    }
}

/// A finite set of test functions standing in for "every bounded C¹ function".
#[derive(Clone)]
pub struct Family {
    pub name: String,
    pub members: Vec<SharedFn>,
}

impl fmt::Debug for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Family")
            .field("name", &self.name)
            .field("members", &self.members.len())
            .finish()
    }
}

impl Family {
    /// `size` members of each requested kind, parameters drawn from `seed`.
    /// The first member of each kind uses fixed canonical parameters.
    pub fn build(kinds: &[FamilyKind], dim: usize, size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut members: Vec<SharedFn> = Vec::new();
        for kind in kinds {
            for k in 0..size {
                let canonical = k == 0;
                let center: Vec<f64> = (0..dim)
                    .map(|_| {
                        if canonical {
                            0.0
                        } else {
                            rng.random_range(-1.5..1.5)
                        }
                    })
                    .collect();
                let f: SharedFn = match kind {
                    FamilyKind::Gaussian => {
                        let a = if canonical {
                            1.0
                        } else {
                            rng.random_range(0.2..3.0)
                        };
                        let offset = if canonical {
                            0.1
                        } else {
                            rng.random_range(0.05..0.5)
                        };
                        Arc::new(GaussianBump {
                            a,
                            center,
                            scale: 1.0,
                            offset,
                        })
                    }
                    FamilyKind::Trig => {
                        let freq: Vec<f64> = (0..dim)
                            .map(|_| {
                                if canonical {
                                    1.0
                                } else {
                                    rng.random_range(0.3..2.5)
                                }
                            })
                            .collect();
                        let phase: Vec<f64> = (0..dim)
                            .map(|_| {
                                if canonical {
                                    0.0
                                } else {
                                    rng.random_range(0.0..2.0 * PI)
                                }
                            })
                            .collect();
                        Arc::new(CosineProduct { freq, phase })
                    }
                    FamilyKind::PolyCutoff => {
                        let coeffs = if canonical {
                            vec![1.0, 0.0, 1.0]
                        } else {
                            (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()
                        };
                        let radius = if canonical {
                            2.0
                        } else {
                            rng.random_range(1.0..3.0)
                        };
                        Arc::new(PolyCutoff {
                            poly: Polynomial { coord: 0, coeffs },
                            radius,
                        })
                    }
                    FamilyKind::Indicator => {
                        let radius = if canonical {
                            1.0
                        } else {
                            rng.random_range(0.3..2.0)
                        };
                        let width = if canonical {
                            0.2
                        } else {
                            rng.random_range(0.05..0.5)
                        };
                        Arc::new(SmoothIndicator {
                            center,
                            radius,
                            width,
                        })
                    }
                };
                members.push(f);
            }
        }
        let names: Vec<&str> = kinds.iter().map(FamilyKind::name).collect();
        Family {
            name: names.join("+"),
            members,
        }
    }

    /// The default family: every kind, `size` members each.
    pub fn standard(dim: usize, size: usize, seed: u64) -> Self {
        Self::build(&FamilyKind::ALL, dim, size, seed)
    }

    /// Gaussian bumps `exp(-a|x - c e_1|²)` for every center `c` on the first
    /// axis and every width parameter `a`.
    pub fn bump_grid(dim: usize, centers: &[f64], widths: &[f64]) -> Self {
        let mut members: Vec<SharedFn> = Vec::with_capacity(centers.len() * widths.len());
        for &c in centers {
            for &a in widths {
                let mut center = vec![0.0; dim];
                center[0] = c;
                members.push(Arc::new(GaussianBump::new(a, center)));
            }
        }
        Family {
            name: "bump_grid".into(),
            members,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_gradient(f: &dyn TestFunction, x: &[f64]) {
        let mut a = vec![0.0; x.len()];
        let mut n = vec![0.0; x.len()];
        f.gradient(x, &mut a);
        numdiff::gradient(&|y: &[f64]| f.eval(y), x, &mut n);
        for (u, v) in a.iter().zip(&n) {
            assert!(
                (u - v).abs() < 1e-6 * (1.0 + u.abs()),
                "{} at {x:?}: {a:?} vs {n:?}",
                f.name()
            );
        }
    }

    #[test]
    fn analytic_gradients() {
        let fam = Family::standard(2, 4, 3);
        for f in &fam.members {
            for x in [[0.3, -0.7], [1.9, 0.4], [-2.6, 1.1], [0.0, 0.05]] {
                check_gradient(f.as_ref(), &x);
            }
        }
        check_gradient(
            &Lorentzian {
                center: vec![0.5],
                scale: 2.0,
            },
            &[0.1],
        );
        check_gradient(
            &Polynomial {
                coord: 0,
                coeffs: vec![1.0, -2.0, 0.5, 0.1, 0.3],
            },
            &[1.3],
        );
    }

    #[test]
    fn gaussian_hessian() {
        let g = GaussianBump {
            a: 0.7,
            center: vec![0.2, -0.1],
            scale: 1.5,
            offset: 0.0,
        };
        let x = [0.4, 0.9];
        let h = g.hessian(&x);
        let n = numdiff::hessian(&|y: &[f64]| g.eval(y), &x);
        assert!((&h - &n).amax() < 1e-5);
    }

    #[test]
    fn cutoff_is_smooth_and_bounded() {
        let f = PolyCutoff {
            poly: Polynomial {
                coord: 0,
                coeffs: vec![1.0, 0.0, 1.0],
            },
            radius: 2.0,
        };
        assert_eq!(f.eval(&[4.0]), 0.0);
        assert_eq!(f.eval(&[1.0]), 2.0);
        assert!(f.sup_abs().unwrap() >= f.eval(&[2.5]).abs());
        check_gradient(&f, &[3.1]);
    }

    #[test]
    fn constants_are_recognized() {
        assert_eq!(Constant(3.7).constant_value(), Some(3.7));
        assert_eq!(
            ExprFunction::parse("2*3", 1).unwrap().constant_value(),
            Some(6.0)
        );
        assert_eq!(ExprFunction::parse("x1", 1).unwrap().constant_value(), None);
        assert_eq!(
            Linear {
                coeffs: vec![0.0],
                intercept: 2.0
            }
            .constant_value(),
            Some(2.0)
        );
    }

    #[test]
    fn family_is_seeded() {
        let a = Family::standard(1, 3, 9);
        let b = Family::standard(1, 3, 9);
        let names_a: Vec<String> = a.members.iter().map(|f| f.name()).collect();
        let names_b: Vec<String> = b.members.iter().map(|f| f.name()).collect();
        assert_eq!(names_a, names_b);
        assert_eq!(a.len(), 12);
    }
}
