//! Lyapunov functions: the three radial families plus user-supplied ones.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::OperatorSpec;
use crate::numdiff;
use crate::{Error, Result};

pub type PhiFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Radial families are written as `exp(F(|x|²))`; custom ones are arbitrary
/// positive functions differentiated numerically.
#[derive(Clone)]
pub enum LyapunovFamily {
    /// `exp(λ |x|²)`.
    Quadratic {
        lambda: f64,
    },
    /// `exp(λ |x|² (log |x|²)^δ)`, defined for `|x| > radius >= 1`.
    LogPower {
        lambda: f64,
        delta: f64,
        radius: f64,
    },
    /// `exp(δ |x|^κ)`.
    PowerExp {
        delta: f64,
        kappa: f64,
    },
    Custom {
        label: String,
        phi: PhiFn,
    },
}

impl fmt::Debug for LyapunovFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LyapunovFamily::Quadratic { lambda } => write!(f, "Quadratic(lambda={lambda})"),
            LyapunovFamily::LogPower {
                lambda,
                delta,
                radius,
            } => {
                write!(
                    f,
                    "LogPower(lambda={lambda}, delta={delta}, radius={radius})"
                )
            }
            LyapunovFamily::PowerExp { delta, kappa } => {
                write!(f, "PowerExp(delta={delta}, kappa={kappa})")
            }
            LyapunovFamily::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

/// Values of the exponent `F(u)` and its first two derivatives, `u = |x|²`.
struct Radial {
    f: f64,
    f1: f64,
    f2: f64,
}

impl LyapunovFamily {
    fn radial(&self, u: f64) -> Result<Option<Radial>> {
        Ok(Some(match *self {
            LyapunovFamily::Quadratic { lambda } => Radial {
                f: lambda * u,
                f1: lambda,
                f2: 0.0,
            },
            LyapunovFamily::LogPower {
                lambda,
                delta,
                radius,
            } => {
                if u <= radius * radius || u <= 1.0 {
                    return Err(Error::Domain(format!(
                        "log-power Lyapunov function is only defined for |x| > {}",
                        radius.max(1.0)
                    )));
                }
                let l = u.ln();
                let ld = l.powf(delta);
                Radial {
                    f: lambda * u * ld,
                    f1: lambda * (ld + delta * ld / l),
                    f2: lambda * delta * (ld / l + (delta - 1.0) * ld / (l * l)) / u,
                }
            }
            LyapunovFamily::PowerExp { delta, kappa } => {
                let h = 0.5 * kappa;
                if u == 0.0 {
                    // F'(0) vanishes for κ > 2; the F'' x xᵀ term is dropped at the origin.
                    let f1 = if kappa > 2.0 {
                        0.0
                    } else if kappa == 2.0 {
                        delta
                    } else {
                        return Err(Error::Domain(
                            "exp(δ|x|^κ) with κ < 2 is not differentiable at 0".into(),
                        ));
                    };
                    Radial {
                        f: 0.0,
                        f1,
                        f2: 0.0,
                    }
                } else {
                    Radial {
                        f: delta * u.powf(h),
                        f1: delta * h * u.powf(h - 1.0),
                        f2: delta * h * (h - 1.0) * u.powf(h - 2.0),
                    }
                }
            }
            LyapunovFamily::Custom { .. } => return Ok(None),
        }))
    }

    /// `log φ(x)`; for the radial families this avoids overflow.
    pub fn log_value(&self, x: &[f64]) -> Result<f64> {
        let u = x.iter().map(|v| v * v).sum::<f64>();
        match self.radial(u)? {
            Some(r) => Ok(r.f),
            None => Ok(self.value(x)?.ln()),
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        match self {
            LyapunovFamily::Custom { phi, .. } => Ok(phi(x)),
            _ => Ok(self.log_value(x)?.exp()),
        }
    }

    /// `(φ, ∇φ, D²φ)` at `x`; analytic for the radial families, central
    /// differences (Hessian step `1e-4 (1 + |x|)`) for custom functions.
    pub fn derivatives(&self, x: &[f64]) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
        let d = x.len();
        let u = x.iter().map(|v| v * v).sum::<f64>();
        match self.radial(u)? {
            Some(r) => {
                let phi = r.f.exp();
                let grad = x.iter().map(|v| phi * 2.0 * r.f1 * v).collect();
                let mut hess = DMatrix::identity(d, d) * (2.0 * r.f1 * phi);
                let w = 4.0 * (r.f2 + r.f1 * r.f1) * phi;
                for i in 0..d {
                    for j in 0..d {
                        hess[(i, j)] += w * x[i] * x[j];
                    }
                }
                Ok((phi, grad, hess))
            }
            None => {
                let LyapunovFamily::Custom { phi, .. } = self else {
                    unreachable!()
                };
                let f = |y: &[f64]| phi(y);
                let mut g = vec![0.0; d];
                numdiff::gradient(&f, x, &mut g);
                Ok((f(x), g, numdiff::hessian(&f, x)))
            }
        }
    }

    /// `A(t)φ(x) / φ(x)`, computed without forming `φ` for the radial families.
    pub fn generator_ratio(&self, spec: &OperatorSpec, t: f64, x: &[f64]) -> Result<f64> {
        let u = x.iter().map(|v| v * v).sum::<f64>();
        match self.radial(u)? {
            Some(r) => {
                let q = spec.diffusion.matrix(t, spec.dim);
                let qxx: f64 = (0..spec.dim)
                    .map(|i| (0..spec.dim).map(|j| q[(i, j)] * x[i] * x[j]).sum::<f64>())
                    .sum();
                let b = spec.drift_at(t, x)?;
                Ok(2.0 * r.f1 * q.trace()
                    + 4.0 * (r.f2 + r.f1 * r.f1) * qxx
                    + 2.0 * r.f1 * numdiff::dot(&b, x))
            }
            None => {
                let (phi, g, h) = self.derivatives(x)?;
                Ok(spec.generator_from_derivatives(t, x, &g, &h)? / phi)
            }
        }
    }

    /// `A(t)φ(x)`.
    pub fn generator(&self, spec: &OperatorSpec, t: f64, x: &[f64]) -> Result<f64> {
        match self {
            LyapunovFamily::Custom { .. } => {
                let (_, g, h) = self.derivatives(x)?;
                spec.generator_from_derivatives(t, x, &g, &h)
            }
            _ => Ok(self.generator_ratio(spec, t, x)? * self.value(x)?),
        }
    }
}

/// A Lyapunov function together with the constants `(a, γ)` of
/// `A(t)φ <= a - γ φ`.
#[derive(Debug, Clone)]
pub struct LyapunovSpec {
    pub family: LyapunovFamily,
    pub a: f64,
    pub gamma: f64,
}

impl LyapunovSpec {
    /// Checks positivity and growth along the radial probe sequence
    /// `|x| = 2^k`, `k = 0..40`, in each coordinate direction.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.a > 0.0 && self.gamma > 0.0) {
            return Err(Error::Config(format!(
                "Lyapunov constants must be positive, got a = {}, gamma = {}",
                self.a, self.gamma
            )));
        }
        let start = match self.family {
            LyapunovFamily::LogPower { radius, .. } => radius.max(1.0) * 1.01,
            _ => 1.0,
        };
        for axis in 0..dim {
            let mut logs = Vec::new();
            for k in 0..=40 {
                let mut x = vec![0.0; dim];
                x[axis] = start * 2f64.powi(k);
                let v = self.family.log_value(&x)?;
                if v.is_nan() || v == f64::NEG_INFINITY {
                    return Err(Error::Config(format!(
                        "Lyapunov function is not positive at {x:?}"
                    )));
                }
                logs.push(v);
            }
            let tail = &logs[20..];
            let increasing = tail.windows(2).all(|w| w[1] >= w[0]);
            if !increasing || tail[tail.len() - 1] < logs[0] + 6.0 * std::f64::consts::LN_10 {
                return Err(Error::Config(
                    "Lyapunov function does not blow up along radial probes".into(),
                ));
            }
        }
        Ok(())
    }
}
