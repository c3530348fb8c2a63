//! TOML operator configuration.
//!
//! ```toml
//! dimension = 1
//!
//! [diffusion]          # exactly one of q, q_expr, matrix, matrix_expr
//! q = 1.0
//!
//! [drift]              # a preset with parameters, or expr = "-x1^3"
//! preset = "power"
//! kappa = 4
//!
//! [constants]          # all optional for presets; r0 is required for expr drifts
//! time_window = [0.0, 10.0]
//! regime = "auto"
//!
//! [lyapunov]
//! family = "quadratic"
//! lambda = 0.1
//! a = 2.0
//! gamma = 1.0
//!
//! [potential]
//! expr = "1 + x1^2"
//! c0 = 1.0
//! ```

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::hypotheses::{classify_regime, RadialGrid};
use super::presets::PRESET_RADIUS;
use super::{
    time_samples, Diffusion, ExprDrift, LyapunovFamily, LyapunovSpec, OperatorSpec, PotentialSpec,
    Regime, ScalarFn,
};
use crate::expr::{parse, Compiled, VectorExpr};
use crate::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    dimension: usize,
    diffusion: RawDiffusion,
    drift: RawDrift,
    #[serde(default)]
    constants: RawConstants,
    lyapunov: Option<RawLyapunov>,
    potential: Option<RawPotential>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiffusion {
    q: Option<f64>,
    q_expr: Option<String>,
    matrix: Option<Vec<Vec<f64>>>,
    matrix_expr: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDrift {
    preset: Option<String>,
    expr: Option<String>,
    theta: Option<f64>,
    theta_expr: Option<String>,
    kappa: Option<f64>,
    alpha: Option<f64>,
    a: Option<f64>,
    k: Option<f64>,
    tamed: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstants {
    eta0: Option<f64>,
    lambda: Option<f64>,
    r0: Option<f64>,
    time_window: Option<[f64; 2]>,
    regime: Option<String>,
    k: Option<f64>,
    exponent: Option<f64>,
    radius: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLyapunov {
    family: String,
    lambda: Option<f64>,
    delta: Option<f64>,
    kappa: Option<f64>,
    radius: Option<f64>,
    expr: Option<String>,
    a: f64,
    gamma: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPotential {
    c: Option<f64>,
    expr: Option<String>,
    c0: Option<f64>,
}

/// A parsed configuration file.
#[derive(Debug, Clone)]
pub struct ConfigFile {
    pub spec: OperatorSpec,
    pub lyapunov: Option<LyapunovSpec>,
    pub potential: Option<PotentialSpec>,
    /// First 8 bytes of the SHA-256 of the text, big-endian.
    pub hash: u64,
    pub text: String,
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.as_ref().display())))?;
    parse_config(&text)
}

pub fn content_hash(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn cfg(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// A time-only expression as a scalar function (evaluation errors become NaN,
/// which validation rejects).
fn time_fn(src: &str, dim: usize, what: &str) -> Result<(ScalarFn, Compiled)> {
    let tree = parse(src, dim)?;
    if tree.depends_on_state() {
        return Err(cfg(format!("{what} may depend on t only, got {src:?}")));
    }
    let c = Compiled::new(tree);
    let inner = c.clone();
    let zero = vec![0.0; dim];
    Ok((
        Arc::new(move |t| inner.eval(t, &zero).unwrap_or(f64::NAN)),
        c,
    ))
}

fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym).eigenvalues;
    (e.min(), e.max())
}

fn build_diffusion(
    raw: &RawDiffusion,
    dim: usize,
    window: (f64, f64),
) -> Result<(Diffusion, f64, f64)> {
    let given = [
        raw.q.is_some(),
        raw.q_expr.is_some(),
        raw.matrix.is_some(),
        raw.matrix_expr.is_some(),
    ];
    if given.iter().filter(|g| **g).count() != 1 {
        return Err(cfg(
            "[diffusion] needs exactly one of q, q_expr, matrix, matrix_expr",
        ));
    }
    let check_shape = |rows: usize, cols: &[usize]| {
        if rows != dim || cols.iter().any(|c| *c != dim) {
            Err(cfg(format!("diffusion matrix must be {dim}x{dim}")))
        } else {
            Ok(())
        }
    };
    let diffusion = if let Some(q) = raw.q {
        Diffusion::constant_scalar(q)
    } else if let Some(src) = &raw.q_expr {
        let (f, c) = time_fn(src, dim, "q_expr")?;
        if c.depends_on_time() {
            Diffusion::scalar_fn(f)
        } else {
            Diffusion::constant_scalar(f(0.0))
        }
    } else if let Some(rows) = &raw.matrix {
        check_shape(rows.len(), &rows.iter().map(Vec::len).collect::<Vec<_>>())?;
        Diffusion::constant_matrix(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
    } else {
        let rows = raw
            .matrix_expr
            .as_ref()
            .expect("one diffusion form is present");
        check_shape(rows.len(), &rows.iter().map(Vec::len).collect::<Vec<_>>())?;
        let mut entries = Vec::with_capacity(dim * dim);
        let mut time_dependent = false;
        for row in rows {
            for src in row {
                let (f, c) = time_fn(src, dim, "matrix_expr entry")?;
                time_dependent |= c.depends_on_time();
                entries.push(f);
            }
        }
        let q = Arc::new(move |t: f64| DMatrix::from_fn(dim, dim, |i, j| entries[i * dim + j](t)));
        if time_dependent {
            Diffusion::Matrix { q, constant: None }
        } else {
            Diffusion::constant_matrix(q(0.0))
        }
    };
    let times = time_samples(window, if diffusion.is_constant() { 1 } else { 4097 });
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &t in &times {
        let m = diffusion.matrix(t, dim);
        if m.iter().any(|v| !v.is_finite()) {
            return Err(cfg(format!("diffusion is not finite at t = {t}")));
        }
        let (a, b) = eigen_range(&m);
        lo = lo.min(a);
        hi = hi.max(b);
    }
    Ok((diffusion, lo, hi))
}

/// Superlinear growth test for expression drifts: `|b(x)|/|x|` at `|x| = 1e4`
/// against `|x| = 1e2`.
fn grows_superlinearly(field: &VectorExpr, t: f64) -> bool {
    let d = field.dim();
    let mut out = vec![0.0; d];
    let mut rate = |r: f64| {
        let mut best: f64 = 0.0;
        for i in 0..d {
            let mut x = vec![0.0; d];
            x[i] = r;
            if field.eval_into(t, &x, &mut out).is_ok() {
                best = best.max(crate::numdiff::norm(&out) / r);
            }
        }
        best
    };
    let (near, far) = (rate(1e2), rate(1e4));
    !far.is_finite() || far > 1.5 * near
}

fn regime_from(raw: &RawConstants, preset: Regime) -> Result<Option<Regime>> {
    let radius = raw.radius.unwrap_or(PRESET_RADIUS);
    let need =
        |v: Option<f64>, key: &str| v.ok_or_else(|| cfg(format!("regime needs constants.{key}")));
    Ok(match raw.regime.as_deref().unwrap_or("auto") {
        "auto" => None,
        "preset" => Some(preset),
        "ultracontractive" => {
            let exponent = need(raw.exponent, "exponent")?;
            if !(exponent > 2.0) {
                return Err(cfg("ultracontractive exponent must exceed 2"));
            }
            Some(Regime::Ultracontractive {
                coeff: need(raw.k, "k")?,
                exponent,
                radius,
            })
        }
        "ultrabounded" => {
            let log_exponent = need(raw.exponent, "exponent")?;
            if !(log_exponent > 1.0) {
                return Err(cfg("ultrabounded log exponent must exceed 1"));
            }
            Some(Regime::Ultrabounded {
                coeff: need(raw.k, "k")?,
                log_exponent,
                radius,
            })
        }
        "supercontractive" => Some(Regime::Supercontractive {
            coeff: need(raw.k, "k")?,
            radius,
        }),
        "unclassified" => Some(Regime::Unclassified),
        other => return Err(cfg(format!("unknown regime {other:?}"))),
    })
}

fn build_lyapunov(raw: &RawLyapunov, dim: usize) -> Result<LyapunovSpec> {
    let need =
        |v: Option<f64>, key: &str| v.ok_or_else(|| cfg(format!("lyapunov family needs {key}")));
    let family = match raw.family.as_str() {
        "quadratic" => LyapunovFamily::Quadratic {
            lambda: need(raw.lambda, "lambda")?,
        },
        "logpower" => LyapunovFamily::LogPower {
            lambda: need(raw.lambda, "lambda")?,
            delta: need(raw.delta, "delta")?,
            radius: raw.radius.unwrap_or(PRESET_RADIUS),
        },
        "powerexp" => LyapunovFamily::PowerExp {
            delta: need(raw.delta, "delta")?,
            kappa: need(raw.kappa, "kappa")?,
        },
        "custom" => {
            let src = raw
                .expr
                .as_ref()
                .ok_or_else(|| cfg("custom lyapunov family needs expr"))?;
            let tree = parse(src, dim)?;
            if tree.depends_on_time() {
                return Err(cfg("lyapunov expression may not depend on t"));
            }
            let c = Compiled::new(tree);
            LyapunovFamily::Custom {
                label: src.clone(),
                phi: Arc::new(move |x: &[f64]| c.eval(0.0, x).unwrap_or(f64::NAN)),
            }
        }
        other => return Err(cfg(format!("unknown lyapunov family {other:?}"))),
    };
    let spec = LyapunovSpec {
        family,
        a: raw.a,
        gamma: raw.gamma,
    };
    spec.validate(dim)?;
    Ok(spec)
}

fn build_potential(raw: &RawPotential, spec: &OperatorSpec) -> Result<PotentialSpec> {
    let pot = match (raw.c, &raw.expr) {
        (Some(c), None) => PotentialSpec::Constant(c),
        (None, Some(src)) => {
            let tree = parse(src, spec.dim)?;
            if !tree.depends_on_state() && !tree.depends_on_time() {
                PotentialSpec::Constant(tree.eval(0.0, &vec![0.0; spec.dim])?)
            } else {
                let c0 = raw
                    .c0
                    .ok_or_else(|| cfg("a non-constant potential needs its infimum c0"))?;
                let c = Compiled::new(tree);
                PotentialSpec::Field {
                    c: Arc::new(move |t, x: &[f64]| c.eval(t, x).unwrap_or(f64::NAN)),
                    c0,
                    label: src.clone(),
                }
            }
        }
        _ => return Err(cfg("[potential] needs exactly one of c, expr")),
    };
    if let (PotentialSpec::Constant(c), Some(c0)) = (&pot, raw.c0) {
        if c0 > *c {
            return Err(cfg(format!("c0 = {c0} exceeds the constant potential {c}")));
        }
    }
    pot.validate_on_grid(spec)?;
    Ok(pot)
}

pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| cfg(e.to_string()))?;
    let dim = raw.dimension;
    if dim == 0 {
        return Err(cfg("dimension must be positive"));
    }
    let c = &raw.constants;
    let window = c.time_window.map(|w| (w[0], w[1])).unwrap_or((0.0, 10.0));
    let (diffusion, eig_lo, eig_hi) = build_diffusion(&raw.diffusion, dim, window)?;

    let d = &raw.drift;
    let mut spec = match (d.preset.as_deref(), &d.expr) {
        (Some(preset), None) => {
            let unused = |keys: &[(&str, bool)]| -> Result<()> {
                match keys.iter().find(|(_, present)| *present) {
                    Some((k, _)) => Err(cfg(format!(
                        "drift parameter {k} does not apply to preset {preset:?}"
                    ))),
                    None => Ok(()),
                }
            };
            let a = d.a.unwrap_or(1.0);
            let k = d.k.unwrap_or(1.0);
            match preset {
                "ou" => {
                    unused(&[
                        ("kappa", d.kappa.is_some()),
                        ("alpha", d.alpha.is_some()),
                        ("a", d.a.is_some()),
                        ("k", d.k.is_some()),
                    ])?;
                    match (d.theta, &d.theta_expr) {
                        (_, Some(src)) if d.theta.is_none() => {
                            let (theta, _) = time_fn(src, dim, "theta_expr")?;
                            let q = diffusion.scalar_fn_or_nan(dim);
                            OperatorSpec::ou_time_dependent(theta, q, dim, window, src)
                        }
                        (th, None) => OperatorSpec::ou(th.unwrap_or(1.0), 1.0, dim),
                        _ => return Err(cfg("give either theta or theta_expr")),
                    }
                }
                "power" => {
                    unused(&[
                        ("alpha", d.alpha.is_some()),
                        ("theta", d.theta.is_some()),
                        ("theta_expr", d.theta_expr.is_some()),
                    ])?;
                    OperatorSpec::power_with(d.kappa.unwrap_or(4.0), a, k, dim)
                }
                "logpower" | "loglin" => {
                    unused(&[
                        ("kappa", d.kappa.is_some()),
                        ("theta", d.theta.is_some()),
                        ("theta_expr", d.theta_expr.is_some()),
                    ])?;
                    let alpha = if preset == "loglin" {
                        if d.alpha.is_some() {
                            return Err(cfg("preset loglin fixes alpha = 1"));
                        }
                        1.0
                    } else {
                        d.alpha.unwrap_or(2.0)
                    };
                    OperatorSpec::logpower_with(alpha, a, k, dim)
                }
                other => return Err(cfg(format!("unknown drift preset {other:?}"))),
            }
        }
        (None, Some(src)) => {
            if d.theta.is_some()
                || d.theta_expr.is_some()
                || d.kappa.is_some()
                || d.alpha.is_some()
                || d.a.is_some()
                || d.k.is_some()
            {
                return Err(cfg(
                    "preset parameters are not allowed with an expression drift",
                ));
            }
            let field = VectorExpr::parse(src, dim)?;
            let superlinear = d
                .tamed
                .unwrap_or_else(|| grows_superlinearly(&field, window.0));
            let r0 =
                c.r0.ok_or_else(|| cfg("an expression drift needs constants.r0"))?;
            let mut s = OperatorSpec::ou(1.0, 1.0, dim);
            s.name = format!("expr({src})");
            s.drift = Arc::new(ExprDrift { field, superlinear });
            s.r0 = r0;
            s
        }
        _ => return Err(cfg("[drift] needs exactly one of preset, expr")),
    };
    if let (Some(tamed), Some(_)) = (d.tamed, &d.preset) {
        if tamed != spec.drift.superlinear() {
            return Err(cfg("tamed can only be overridden for expression drifts"));
        }
    }
    if let Some(name) = &raw.name {
        spec.name = name.clone();
    }
    spec.diffusion = diffusion;
    spec.eta0 = c.eta0.unwrap_or(eig_lo);
    spec.lambda_max = c.lambda.unwrap_or(eig_hi);
    if let Some(r0) = c.r0 {
        spec.r0 = r0;
    }
    spec.time_window = window;
    let hash = content_hash(text);
    spec.spec_hash = hash;
    spec.validate()?;

    match regime_from(c, spec.regime)? {
        Some(r) => spec.regime = r,
        None if d.expr.is_some() => {
            spec.regime = classify_regime(&spec, &RadialGrid::default())?.regime
        }
        None => {}
    }

    let lyapunov = raw
        .lyapunov
        .as_ref()
        .map(|l| build_lyapunov(l, dim))
        .transpose()?;
    let potential = raw
        .potential
        .as_ref()
        .map(|p| build_potential(p, &spec))
        .transpose()?;
    Ok(ConfigFile {
        spec,
        lyapunov,
        potential,
        hash,
        text: text.to_string(),
    })
}

impl Diffusion {
    /// The scalar `q(t)`; NaN for matrix diffusions, which validation rejects.
    fn scalar_fn_or_nan(&self, _dim: usize) -> ScalarFn {
        match self {
            Diffusion::Scalar { q, .. } => q.clone(),
            Diffusion::Matrix { .. } => Arc::new(|_| f64::NAN),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_preset() {
        let c = parse_config(
            "dimension = 1\n[diffusion]\nq = 1\n[drift]\npreset = \"power\"\nkappa = 4\n",
        )
        .unwrap();
        assert!(c.spec.regime.is_ultracontractive());
        assert_eq!(
            (c.spec.eta0, c.spec.lambda_max, c.spec.r0),
            (1.0, 1.0, -1.0)
        );
        assert!(c.spec.drift.superlinear());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config(
            "dimension = 1\n[diffusion]\nq = 1\nsigma = 2\n[drift]\npreset = \"ou\"\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(m) if m.contains("sigma")));
        assert!(parse_config(
            "dimension = 1\nfoo = 1\n[diffusion]\nq = 1\n[drift]\npreset = \"ou\"\n"
        )
        .is_err());
    }

    #[test]
    fn expression_drift_is_classified() {
        let text = "dimension = 1\n[diffusion]\nq = 1\n[drift]\nexpr = \"-x1 - x1^3\"\n[constants]\nr0 = -1\n";
        let c = parse_config(text).unwrap();
        assert!(
            matches!(c.spec.regime, Regime::Ultracontractive { exponent, .. } if exponent == 4.0)
        );
        assert!(c.spec.drift.superlinear());
        assert_ne!(c.hash, 0);
    }

    #[test]
    fn time_dependent_ou() {
        let text = "dimension = 2\n[diffusion]\nq_expr = \"1 + 0.5*sin(t)\"\n[drift]\npreset = \"ou\"\ntheta_expr = \"2 + sin(t)\"\n";
        let c = parse_config(text).unwrap();
        assert!((c.spec.eta0 - 0.5).abs() < 1e-6 && (c.spec.lambda_max - 1.5).abs() < 1e-6);
        assert!((c.spec.r0 + 1.0).abs() < 1e-6);
        assert!(c.spec.drift.depends_on_time());
    }

    #[test]
    fn constant_potential_expression() {
        let text = "dimension = 1\n[diffusion]\nq = 1\n[drift]\npreset = \"power\"\n[potential]\nexpr = \"2*0.5\"\n";
        assert!(
            matches!(parse_config(text).unwrap().potential, Some(PotentialSpec::Constant(c)) if c == 1.0)
        );
        let text = "dimension = 1\n[diffusion]\nq = 1\n[drift]\npreset = \"power\"\n[potential]\nexpr = \"1 + x1^2\"\nc0 = 1\n";
        assert!(matches!(
            parse_config(text).unwrap().potential,
            Some(PotentialSpec::Field { .. })
        ));
    }

    #[test]
    fn lyapunov_section() {
        let text = "dimension = 1\n[diffusion]\nq = 1\n[drift]\npreset = \"ou\"\n[lyapunov]\nfamily = \"custom\"\nexpr = \"x1^2\"\na = 2\ngamma = 2\n";
        assert!(parse_config(text).unwrap().lyapunov.is_some());
    }

    #[test]
    fn bad_expression_reports_offset() {
        let text = "dimension = 1\n[diffusion]\nq = 1\n[drift]\nexpr = \"-x1 +* 2\"\n[constants]\nr0 = -1\n";
        assert!(matches!(parse_config(text), Err(Error::Expr(_))));
    }
}
