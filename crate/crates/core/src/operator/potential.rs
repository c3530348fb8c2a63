//! Zeroth-order terms `-c(t,x)` of the operator, realized as Feynman-Kac weights.

use std::fmt;

use super::{Field, OperatorSpec};
use crate::{Error, Result};

#[derive(Clone)]
pub enum PotentialSpec {
    /// `c ≡ c0`: the weight `exp(-c0 (t-s))` factors out of every path.
    Constant(f64),
    /// A general potential with its certified infimum.
    Field { c: Field, c0: f64, label: String },
}

impl fmt::Debug for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PotentialSpec::Constant(c) => write!(f, "Constant({c})"),
            PotentialSpec::Field { c0, label, .. } => write!(f, "Field({label}, c0={c0})"),
        }
    }
}

impl PotentialSpec {
    pub fn infimum(&self) -> f64 {
        match self {
            PotentialSpec::Constant(c) => *c,
            PotentialSpec::Field { c0, .. } => *c0,
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            PotentialSpec::Constant(c) => *c,
            PotentialSpec::Field { c, .. } => c(t, x),
        }
    }

    /// Verifies `c(t,x) >= c0` on the given sample points; returns the smallest
    /// observed value.
    pub fn validate(&self, points: &[(f64, Vec<f64>)]) -> Result<f64> {
        let c0 = self.infimum();
        let mut min = f64::INFINITY;
        for (t, x) in points {
            let v = self.eval(*t, x);
            if !(v >= c0 - 1e-12 * (1.0 + c0.abs())) {
                return Err(Error::Config(format!(
                    "potential value {v} at t = {t}, x = {x:?} is below the certified infimum {c0}"
                )));
            }
            min = min.min(v);
        }
        Ok(min)
    }

    /// Default validation grid: the time window times a box of radius 10.
    pub fn validate_on_grid(&self, spec: &OperatorSpec) -> Result<f64> {
        let mut pts = Vec::new();
        for t in super::time_samples(spec.time_window, 9) {
            for k in 0..=40 {
                let r = -10.0 + 0.5 * k as f64;
                for axis in 0..spec.dim {
                    let mut x = vec![0.0; spec.dim];
                    x[axis] = r;
                    pts.push((t, x));
                }
            }
        }
        self.validate(&pts)
    }
}
