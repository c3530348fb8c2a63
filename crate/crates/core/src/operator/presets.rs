//! Built-in operator families.

use std::sync::Arc;

use serde::Serialize;

use super::{
    time_samples, Diffusion, LinearDrift, LogPowerDrift, OperatorSpec, PowerDrift, Regime, ScalarFn,
};

/// Radius from which the built-in growth conditions are certified.
pub const PRESET_RADIUS: f64 = 2.0;

const DEFAULT_WINDOW: (f64, f64) = (0.0, 10.0);

#[derive(Debug, Clone, Serialize)]
pub struct PresetInfo {
    pub name: &'static str,
    pub parameters: &'static str,
    pub drift: &'static str,
    pub regime: Regime,
}

/// The preset catalogue with default parameters.
pub fn catalog() -> Vec<PresetInfo> {
    vec![
        PresetInfo {
            name: "ou",
            parameters: "theta = 1 (or theta_expr), q = 1",
            drift: "-theta(t) x",
            regime: OperatorSpec::ou(1.0, 1.0, 1).regime,
        },
        PresetInfo {
            name: "power",
            parameters: "kappa = 4, a = 1, k = 1",
            drift: "-a x - k |x|^(kappa-2) x",
            regime: OperatorSpec::power(4.0, 1).regime,
        },
        PresetInfo {
            name: "logpower",
            parameters: "alpha = 2, a = 1, k = 1",
            drift: "-a x - k x log(1+|x|^2)^alpha",
            regime: OperatorSpec::logpower(2.0, 1).regime,
        },
        PresetInfo {
            name: "loglin",
            parameters: "a = 1, k = 1",
            drift: "-a x - k x log(1+|x|^2)",
            regime: OperatorSpec::logpower(1.0, 1).regime,
        },
    ]
}

impl OperatorSpec {
    /// Ornstein-Uhlenbeck operator `q Δ - θ <x, ∇>`.
    pub fn ou(theta: f64, q: f64, dim: usize) -> Self {
        OperatorSpec {
            name: format!("ou(theta={theta}, q={q})"),
            dim,
            diffusion: Diffusion::constant_scalar(q),
            drift: Arc::new(LinearDrift {
                theta: Arc::new(move |_| theta),
                dim,
                time_dependent: false,
                label: theta.to_string(),
            }),
            eta0: q,
            lambda_max: q,
            r0: -theta,
            regime: Regime::Unclassified,
            time_window: DEFAULT_WINDOW,
            spec_hash: 0,
        }
    }

    /// Ornstein-Uhlenbeck operator with time-dependent coefficients; the
    /// structural constants are the extrema over a fine grid of `window`.
    pub fn ou_time_dependent(
        theta: ScalarFn,
        q: ScalarFn,
        dim: usize,
        window: (f64, f64),
        label: &str,
    ) -> Self {
        let grid = time_samples(window, 4097);
        let qmin = grid.iter().map(|&t| q(t)).fold(f64::INFINITY, f64::min);
        let qmax = grid.iter().map(|&t| q(t)).fold(f64::NEG_INFINITY, f64::max);
        let thmin = grid.iter().map(|&t| theta(t)).fold(f64::INFINITY, f64::min);
        OperatorSpec {
            name: format!("ou({label})"),
            dim,
            diffusion: Diffusion::scalar_fn(q),
            drift: Arc::new(LinearDrift {
                theta,
                dim,
                time_dependent: true,
                label: label.to_string(),
            }),
            eta0: qmin,
            lambda_max: qmax,
            r0: -thmin,
            regime: Regime::Unclassified,
            time_window: window,
            spec_hash: 0,
        }
    }

    /// `Δ - <x + |x|^(κ-2) x, ∇>`.
    pub fn power(kappa: f64, dim: usize) -> Self {
        Self::power_with(kappa, 1.0, 1.0, dim)
    }

    pub fn power_with(kappa: f64, linear: f64, coeff: f64, dim: usize) -> Self {
        let regime = if kappa > 2.0 {
            Regime::Ultracontractive {
                coeff,
                exponent: kappa,
                radius: PRESET_RADIUS,
            }
        } else {
            Regime::Unclassified
        };
        OperatorSpec {
            name: format!("power(kappa={kappa})"),
            dim,
            diffusion: Diffusion::constant_scalar(1.0),
            drift: Arc::new(PowerDrift {
                linear,
                coeff,
                exponent: kappa,
                dim,
            }),
            eta0: 1.0,
            lambda_max: 1.0,
            r0: -linear,
            regime,
            time_window: DEFAULT_WINDOW,
            spec_hash: 0,
        }
    }

    /// `Δ - <x + x log(1+|x|²)^α, ∇>`.
    pub fn logpower(alpha: f64, dim: usize) -> Self {
        Self::logpower_with(alpha, 1.0, 1.0, dim)
    }

    pub fn logpower_with(alpha: f64, linear: f64, coeff: f64, dim: usize) -> Self {
        // log(1+r²) >= 2 log r, so <b,x> <= -coeff 2^α r² (log r)^α.
        let c = coeff * 2f64.powf(alpha);
        let regime = if alpha > 1.0 {
            Regime::Ultrabounded {
                coeff: c,
                log_exponent: alpha,
                radius: PRESET_RADIUS,
            }
        } else if alpha == 1.0 {
            Regime::Supercontractive {
                coeff: c,
                radius: PRESET_RADIUS,
            }
        } else {
            Regime::Unclassified
        };
        OperatorSpec {
            name: format!("logpower(alpha={alpha})"),
            dim,
            diffusion: Diffusion::constant_scalar(1.0),
            drift: Arc::new(LogPowerDrift {
                linear,
                coeff,
                log_exponent: alpha,
                dim,
            }),
            eta0: 1.0,
            lambda_max: 1.0,
            r0: -linear,
            regime,
            time_window: DEFAULT_WINDOW,
            spec_hash: 0,
        }
    }

    /// Replace the diffusion by `q` times the identity.
    pub fn with_scalar_diffusion(mut self, q: f64) -> Self {
        self.diffusion = Diffusion::constant_scalar(q);
        self.eta0 = q;
        self.lambda_max = q;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalogue_contents() {
        let c = catalog();
        let names: Vec<_> = c.iter().map(|p| p.name).collect();
        assert!(names.contains(&"ou") && names.contains(&"power") && names.contains(&"logpower"));
        let power = c.iter().find(|p| p.name == "power").unwrap();
        assert!(power.regime.is_ultracontractive());
        let ou = c.iter().find(|p| p.name == "ou").unwrap();
        assert_eq!(ou.regime, Regime::Unclassified);
    }

    #[test]
    fn presets_validate() {
        for s in [
            OperatorSpec::ou(2.0, 0.5, 2),
            OperatorSpec::power(4.0, 1),
            OperatorSpec::logpower(2.0, 3),
        ] {
            s.validate().unwrap();
        }
    }
}
