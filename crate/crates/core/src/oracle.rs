//! Closed-form reference for diagonal Ornstein-Uhlenbeck operators
//! `q(t)Δ - θ(t)<x, ∇>`.
//!
//! `G(t,s)f(x) = E f(Y)` with `Y ~ N(x e^{-∫_s^t θ}, v)` per coordinate and
//! `v = 2∫_s^t q(r) e^{-2∫_s^r θ} dr`.

use std::sync::Arc;

use crate::functions::{ClosedForm, TestFunction};
use crate::operator::{time_samples, Diffusion, OperatorSpec, ScalarFn};
use crate::{Error, Result};

/// Tolerance of the adaptive Simpson rule.
pub const QUAD_TOL: f64 = 1e-10;
const MAX_DEPTH: u32 = 48;

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if !diff.is_finite() {
        return Err(Error::QuadratureFailure { a, b });
    }
    if diff.abs() <= 15.0 * tol {
        return Ok(left + right + diff / 15.0);
    }
    if depth == 0 {
        return Err(Error::QuadratureFailure { a, b });
    }
    Ok(
        simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
            + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?,
    )
}

#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    Function(ScalarFn),
}

impl Coefficient {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Function(f) => f(t),
        }
    }

    fn constant(&self) -> Option<f64> {
        match self {
            Coefficient::Constant(c) => Some(*c),
            Coefficient::Function(_) => None,
        }
    }

    fn as_fn(&self) -> ScalarFn {
        match self {
            Coefficient::Constant(c) => {
                let c = *c;
                Arc::new(move |_| c)
            }
            Coefficient::Function(f) => f.clone(),
        }
    }
}

impl std::fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coefficient::Constant(c) => write!(f, "{c}"),
            Coefficient::Function(_) => f.write_str("<fn>"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OuSpec {
    pub theta: Coefficient,
    pub q: Coefficient,
    pub dim: usize,
    /// Window on which positivity of time-dependent coefficients was checked.
    pub window: (f64, f64),
}

impl OuSpec {
    pub fn constant(theta: f64, q: f64, dim: usize) -> Result<Self> {
        if !(theta > 0.0 && q > 0.0) {
            return Err(Error::precondition(format!(
                "need theta > 0 and q > 0, got {theta} and {q}"
            )));
        }
        Ok(OuSpec {
            theta: Coefficient::Constant(theta),
            q: Coefficient::Constant(q),
            dim,
            window: (f64::NEG_INFINITY, f64::INFINITY),
        })
    }

    /// Time-dependent coefficients; positivity is checked on 1025 points of `window`.
    pub fn time_dependent(
        theta: ScalarFn,
        q: ScalarFn,
        dim: usize,
        window: (f64, f64),
    ) -> Result<Self> {
        for t in time_samples(window, 1025) {
            if !(theta(t) > 0.0 && q(t) > 0.0) {
                return Err(Error::precondition(format!(
                    "coefficients must be positive, fails at t = {t}"
                )));
            }
        }
        Ok(OuSpec {
            theta: Coefficient::Function(theta),
            q: Coefficient::Function(q),
            dim,
            window,
        })
    }

    /// Recovers `θ` and `q` from an operator with linear drift `-θ(t) x` and
    /// scalar diffusion.
    pub fn from_operator(spec: &OperatorSpec) -> Result<Self> {
        let not_ou = || {
            Error::precondition(format!(
                "operator '{}' is not of Ornstein-Uhlenbeck form",
                spec.name
            ))
        };
        let (theta, td) = spec.drift.linear_rate().ok_or_else(not_ou)?;
        let Diffusion::Scalar { q, constant } = &spec.diffusion else {
            return Err(not_ou());
        };
        match (td, constant) {
            (false, Some(c)) => Self::constant(theta(0.0), *c, spec.dim),
            _ => Self::time_dependent(theta, q.clone(), spec.dim, spec.time_window),
        }
    }

    /// The matching operator for the simulation engine.
    pub fn operator(&self) -> OperatorSpec {
        match (self.theta.constant(), self.q.constant()) {
            (Some(th), Some(q)) => OperatorSpec::ou(th, q, self.dim),
            _ => {
                let w = if self.window.0.is_finite() {
                    self.window
                } else {
                    (0.0, 10.0)
                };
                OperatorSpec::ou_time_dependent(
                    self.theta.as_fn(),
                    self.q.as_fn(),
                    self.dim,
                    w,
                    "oracle",
                )
            }
        }
    }

    fn theta_integral(&self, a: f64, b: f64) -> Result<f64> {
        match &self.theta {
            Coefficient::Constant(th) => Ok(th * (b - a)),
            Coefficient::Function(f) => adaptive_simpson(&|r| f(r), a, b, QUAD_TOL),
        }
    }
}

/// `e^{-∫_s^t θ}`, the derivative of the mean with respect to the start.
pub fn ou_contraction(ou: &OuSpec, s: f64, t: f64) -> Result<f64> {
    Ok((-ou.theta_integral(s, t)?).exp())
}

/// Mean vector and per-coordinate variance of the transition from `x`.
pub fn ou_mean_var(ou: &OuSpec, s: f64, t: f64, x: &[f64]) -> Result<(Vec<f64>, f64)> {
    if t < s {
        return Err(Error::precondition(format!(
            "need t >= s, got t = {t}, s = {s}"
        )));
    }
    let decay = ou_contraction(ou, s, t)?;
    let mean = x.iter().map(|v| v * decay).collect();
    let var = match (ou.theta.constant(), ou.q.constant()) {
        (Some(th), Some(q)) => q / th * -(-2.0 * th * (t - s)).exp_m1(),
        _ => {
            let integrand = |r: f64| -> f64 {
                match ou.theta_integral(s, r) {
                    Ok(i) => 2.0 * ou.q.at(r) * (-2.0 * i).exp(),
                    Err(_) => f64::NAN,
                }
            };
            adaptive_simpson(&integrand, s, t, QUAD_TOL)?
        }
    };
    Ok((mean, var))
}

/// `E f(Y)` for `Y ~ N(mean, var I)` and `f` with a closed form.
pub fn gaussian_expectation(f: &ClosedForm, mean: &[f64], var: f64) -> Result<f64> {
    Ok(match f {
        ClosedForm::Constant(c) => *c,
        ClosedForm::Polynomial { coord, coeffs } => {
            if coeffs.len() > 5 {
                return Err(Error::UnsupportedFunction(format!(
                    "polynomial of degree {}",
                    coeffs.len() - 1
                )));
            }
            let m = mean[*coord];
            let v = var;
            let moments = [
                1.0,
                m,
                m * m + v,
                m.powi(3) + 3.0 * m * v,
                m.powi(4) + 6.0 * m * m * v + 3.0 * v * v,
            ];
            coeffs.iter().zip(moments).map(|(c, mk)| c * mk).sum()
        }
        ClosedForm::Gaussian {
            a,
            center,
            scale,
            offset,
        } => {
            let denom = 1.0 + 2.0 * a * var;
            let prod: f64 = mean
                .iter()
                .zip(center)
                .map(|(m, z)| (-a * (m - z).powi(2) / denom).exp() / denom.sqrt())
                .product();
            scale * prod + offset
        }
        ClosedForm::CosineProduct { freq, phase } => mean
            .iter()
            .zip(freq.iter().zip(phase))
            .map(|(m, (w, p))| (-0.5 * w * w * var).exp() * (w * m + p).cos())
            .product(),
    })
}

/// Exact `(G(t,s)f)(x)`.
pub fn ou_apply(ou: &OuSpec, f: &dyn TestFunction, s: f64, t: f64, x: &[f64]) -> Result<f64> {
    let form = f
        .closed_form()
        .ok_or_else(|| Error::UnsupportedFunction(f.name()))?;
    let (mean, var) = ou_mean_var(ou, s, t, x)?;
    gaussian_expectation(&form, &mean, var)
}

/// Transition density `g_{t,s}(x, y)` with respect to Lebesgue measure.
pub fn ou_density(ou: &OuSpec, s: f64, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    let (mean, var) = ou_mean_var(ou, s, t, x)?;
    Ok(mean
        .iter()
        .zip(y)
        .map(|(m, v)| {
            (-(v - m).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
        })
        .product())
}

/// Per-coordinate variance `q/θ` of the invariant Gaussian.
pub fn ou_invariant(ou: &OuSpec) -> Result<f64> {
    match (ou.theta.constant(), ou.q.constant()) {
        (Some(th), Some(q)) => Ok(q / th),
        _ => Err(Error::NotConstantCoefficient),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpMoment {
    Finite(f64),
    Divergent,
}

/// `E e^{λ|Y|^power}` for `Y ~ N(0, σ²)`.
pub fn ou_gauss_exp_moment(sigma2: f64, lambda: f64, power: u32) -> Result<ExpMoment> {
    if !(sigma2 > 0.0) {
        return Err(Error::precondition("sigma2 must be positive"));
    }
    if lambda == 0.0 {
        return Ok(ExpMoment::Finite(1.0));
    }
    match power {
        2 if 2.0 * lambda * sigma2 >= 1.0 => Ok(ExpMoment::Divergent),
        2 => Ok(ExpMoment::Finite((1.0 - 2.0 * lambda * sigma2).powf(-0.5))),
        1 => {
            let sigma = sigma2.sqrt();
            Ok(ExpMoment::Finite(
                2.0 * (0.5 * lambda * lambda * sigma2).exp() * normal_cdf(lambda * sigma),
            ))
        }
        p => Err(Error::precondition(format!(
            "power must be 1 or 2, got {p}"
        ))),
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{Constant, CosineProduct, GaussianBump, Polynomial};

    fn unit() -> OuSpec {
        OuSpec::constant(1.0, 1.0, 1).unwrap()
    }

    #[test]
    fn constant_coefficients() {
        let (m, v) = ou_mean_var(&unit(), 0.0, 1.0, &[0.5]).unwrap();
        assert!((m[0] - 0.5 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
        assert_eq!(
            ou_mean_var(&unit(), 2.0, 2.0, &[0.5]).unwrap(),
            (vec![0.5], 0.0)
        );
    }

    #[test]
    fn quadratic_and_cosine() {
        let y2 = Polynomial::monomial(0, 2);
        let e = ou_apply(&unit(), &y2, 0.0, 1.0, &[0.5]).unwrap();
        let m = 0.5 * (-1.0f64).exp();
        assert!((e - (m * m + 1.0 - (-2.0f64).exp())).abs() < 1e-14);
        assert!((e - 0.898499).abs() < 1e-6);
        assert_eq!(
            ou_apply(&unit(), &Constant(3.7), 0.0, 1.0, &[0.5]).unwrap(),
            3.7
        );
        // Stationary start: mean 0, variance 1.
        let form = CosineProduct::first_coordinate(1).closed_form().unwrap();
        assert!(
            (gaussian_expectation(&form, &[0.0], 1.0).unwrap() - (-0.5f64).exp()).abs() < 1e-15
        );
    }

    #[test]
    fn gaussian_bump_matches_quadrature() {
        let ou = unit();
        let f = GaussianBump::new(1.3, vec![0.4]);
        let exact = ou_apply(&ou, &f, 0.0, 0.7, &[-0.2]).unwrap();
        let (m, v) = ou_mean_var(&ou, 0.0, 0.7, &[-0.2]).unwrap();
        let dens = |y: f64| {
            (-(y - m[0]).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
        };
        let quad =
            adaptive_simpson(&|y| f.eval(&[y]) * dens(y), m[0] - 12.0, m[0] + 12.0, 1e-12).unwrap();
        assert!((exact - quad).abs() < 1e-9);
    }

    #[test]
    fn time_dependent_variance_solves_its_ode() {
        // v(s) = 2∫_s^t q(r) e^{-2∫_s^r θ} dr satisfies dv/ds = -2q(s) + 2θ(s) v(s).
        let ou = OuSpec::time_dependent(
            Arc::new(|t: f64| 2.0 + t.sin()),
            Arc::new(|t: f64| 1.0 + 0.5 * t.cos()),
            1,
            (0.0, 10.0),
        )
        .unwrap();
        let (t, s, h) = (3.0, 0.5, 1e-4);
        let v = |s: f64| ou_mean_var(&ou, s, t, &[0.0]).unwrap().1;
        let dv = (v(s + h) - v(s - h)) / (2.0 * h);
        let rhs = -2.0 * (1.0 + 0.5 * s.cos()) + 2.0 * (2.0 + s.sin()) * v(s);
        assert!((dv - rhs).abs() < 1e-6, "{dv} vs {rhs}");
    }

    #[test]
    fn backward_equation_in_the_start_time() {
        // d/ds G(t,s)f = -G(t,s)A(s)f for f(y) = y², where A(s)f = 2q(s) - 2θ(s)y².
        let theta = |t: f64| 2.0 + t.sin();
        let q = |t: f64| 1.0 + 0.5 * t.cos();
        let ou = OuSpec::time_dependent(Arc::new(theta), Arc::new(q), 1, (0.0, 10.0)).unwrap();
        let f = Polynomial::monomial(0, 2);
        let (t, s, x, h) = (2.0, 0.3, [0.8], 1e-4);
        let g = |s: f64| ou_apply(&ou, &f, s, t, &x).unwrap();
        let lhs = (g(s + h) - g(s - h)) / (2.0 * h);
        let af = Polynomial {
            coord: 0,
            coeffs: vec![2.0 * q(s), 0.0, -2.0 * theta(s)],
        };
        let rhs = -ou_apply(&ou, &af, s, t, &x).unwrap();
        assert!((lhs - rhs).abs() < 1e-6, "{lhs} vs {rhs}");
    }

    #[test]
    fn exp_moments() {
        let v = |l, p| ou_gauss_exp_moment(1.0, l, p).unwrap();
        assert!(matches!(v(0.3, 2), ExpMoment::Finite(x) if (x - 0.4f64.powf(-0.5)).abs() < 1e-14));
        assert!((0.4f64.powf(-0.5) - 1.58114).abs() < 1e-5);
        assert_eq!(v(0.5, 2), ExpMoment::Divergent);
        assert_eq!(v(0.0, 2), ExpMoment::Finite(1.0));
        let ExpMoment::Finite(one) = v(1.0, 1) else {
            panic!()
        };
        let quad = adaptive_simpson(
            &|y: f64| (y.abs() - 0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            -40.0,
            40.0,
            1e-12,
        )
        .unwrap();
        assert!((one - quad).abs() < 1e-9, "{one} vs {quad}");
        assert!(matches!(ou_invariant(&OuSpec::constant(2.0, 1.0, 1).unwrap()), Ok(v) if v == 0.5));
    }

    #[test]
    fn monotone_below_threshold() {
        let mut prev = 0.0;
        for k in 0..50 {
            let ExpMoment::Finite(v) = ou_gauss_exp_moment(1.0, 0.0099 * k as f64, 2).unwrap()
            else {
                panic!()
            };
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn rejects_unsupported() {
        let f = crate::functions::Lorentzian {
            center: vec![0.0],
            scale: 1.0,
        };
        assert!(matches!(
            ou_apply(&unit(), &f, 0.0, 1.0, &[0.0]),
            Err(Error::UnsupportedFunction(_))
        ));
        assert!(OuSpec::constant(1.0, 0.0, 1).is_err());
    }
}
