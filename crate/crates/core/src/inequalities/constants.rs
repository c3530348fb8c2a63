//! Closed-form constants appearing on the right-hand sides of the checked
//! inequalities. All functions here are pure.

use crate::{Error, Result};

fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::precondition(msg))
    }
}

/// `C_κ` with `sup_{y>=0} (2λΛy² - (k/2) y^κ) = C_κ λ^{κ/(κ-2)}`; independent of λ.
///
/// With `u = y²` the maximizer is `u* = (8λΛ/(kκ))^{2/(κ-2)}` and the maximum
/// `2λΛu*(1 - 2/κ)`, evaluated here at `λ = 1`.
pub fn c_kappa(kappa: f64, coeff: f64, lambda_max: f64) -> f64 {
    let u = (8.0 * lambda_max / (coeff * kappa)).powf(2.0 / (kappa - 2.0));
    2.0 * lambda_max * u * (1.0 - 2.0 / kappa)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MTilde {
    pub c_kappa: f64,
    pub c1: f64,
    pub c2: f64,
    pub k0: f64,
    /// Upper bound for `sup_{t-s>=δ} sup_x G(t,s)e^{λ|x|²}`.
    pub bound: f64,
    /// `log` of the bound, finite even when the bound overflows.
    pub log_bound: f64,
}

/// `exp(max{K0 δ^{2/(2-κ)} λ, (C1 λ^{κ²/(2(κ-2))} + C2 λ^{κ/2})^{2/κ}})` with
/// `K0 = [(κ-2)k/4]^{2/(2-κ)}`, `C1 = 4C_κ/k`, `C2 = 4Λd/k`.
pub fn mtilde_bound(
    kappa: f64,
    coeff: f64,
    lambda_max: f64,
    dim: usize,
    delta: f64,
    lambda: f64,
) -> Result<MTilde> {
    require(kappa > 2.0, "kappa must exceed 2")?;
    require(
        coeff > 0.0 && lambda_max > 0.0 && delta > 0.0 && lambda > 0.0 && dim > 0,
        "constants must be positive",
    )?;
    let ck = c_kappa(kappa, coeff, lambda_max);
    let c1 = 4.0 * ck / coeff;
    let c2 = 4.0 * lambda_max * dim as f64 / coeff;
    let k0 = ((kappa - 2.0) * coeff / 4.0).powf(2.0 / (2.0 - kappa));
    let first = k0 * delta.powf(2.0 / (2.0 - kappa)) * lambda;
    let second = (c1 * lambda.powf(kappa * kappa / (2.0 * (kappa - 2.0)))
        + c2 * lambda.powf(kappa / 2.0))
    .powf(2.0 / kappa);
    let log_bound = first.max(second);
    Ok(MTilde {
        c_kappa: ck,
        c1,
        c2,
        k0,
        bound: log_bound.exp(),
        log_bound,
    })
}

/// `c1 = (2/(κδ))^{2/(κ-2)} (κ-2)/κ`, so that `δ t^κ - λ t² >= -c1 λ^{κ/(κ-2)}`.
pub fn c1_coefficient(kappa: f64, delta: f64) -> Result<f64> {
    require(kappa > 2.0 && delta > 0.0, "need kappa > 2 and delta > 0")?;
    Ok((2.0 / (kappa * delta)).powf(2.0 / (kappa - 2.0)) * (kappa - 2.0) / kappa)
}

/// `(M1, M2)` of the defective log-Sobolev inequality obtained from the
/// `L^p -> L^q` norm `c_tilde` of `G(t,s)`:
/// `M1 = 2Λp(q-1)/(|r0|(q-p)) (1 - e^{2 r0 Δ})`, `M2 = pq/(2(q-p)) log c_tilde`.
pub fn super_lsi_constants(
    p: f64,
    q: f64,
    dt: f64,
    c_tilde: f64,
    lambda_max: f64,
    r0: f64,
) -> Result<(f64, f64)> {
    if !(q > p && p > 1.0) {
        return Err(Error::DegenerateExponents { p, q });
    }
    require(dt >= 0.0, "need t >= s")?;
    require(c_tilde >= 1.0, "norm estimate must be at least 1")?;
    require(r0 < 0.0, "r0 must be negative")?;
    let m1 = 2.0 * lambda_max * p * (q - 1.0) / (r0.abs() * (q - p)) * -(2.0 * r0 * dt).exp_m1();
    let m2 = p * q / (2.0 * (q - p)) * c_tilde.ln();
    Ok((m1, m2))
}

/// `p^2 Λ/|r0| (1 - e^{2 r0 Δ})`, the gradient constant of the kernel log-Sobolev inequality.
pub fn kernel_lsi_constant(p: f64, lambda_max: f64, r0: f64, dt: f64) -> f64 {
    p * p * lambda_max / r0.abs() * -(2.0 * r0 * dt).exp_m1()
}

/// Target exponent `q(t) = e^{2η0Δ/ε}(p-1) + 1` of the hypercontractive recursion.
pub fn hypercontractive_exponent(p: f64, eps: f64, eta0: f64, dt: f64) -> f64 {
    (2.0 * eta0 * dt / eps).exp() * (p - 1.0) + 1.0
}

/// `λ0 = q / (2η0(p-1)Δ)` at which `‖φ_λ0‖_1` enters `C_{p,q}`.
pub fn cpq_lambda0(p: f64, q: f64, eta0: f64, dt: f64) -> f64 {
    q / (2.0 * eta0 * (p - 1.0) * dt)
}

/// `C_{p,q}(Δ) = 2^q exp(R²/(2η0(p-1)Δ)) ‖φ_λ0‖_1`, returned as a logarithm.
pub fn log_cpq(p: f64, q: f64, eta0: f64, dt: f64, radius: f64, log_phi_norm: f64) -> f64 {
    q * std::f64::consts::LN_2 + radius * radius / (2.0 * eta0 * (p - 1.0) * dt) + log_phi_norm
}

/// `C_{2,∞}(Δ) = 2 e^{R/(2η0Δ)} M` with `M` a bound for
/// `sup_x G e^{λ|x|²}` at `λ = 1/(2η0Δ)` over intervals of length `Δ/2`;
/// returned as a logarithm.
pub fn log_c2_inf(eta0: f64, dt: f64, radius: f64, log_m: f64) -> f64 {
    std::f64::consts::LN_2 + radius / (2.0 * eta0 * dt) + log_m
}

/// `λ = 1/(2η0Δ)` at which `M` enters `C_{2,∞}(Δ)`.
pub fn c2_inf_lambda(eta0: f64, dt: f64) -> f64 {
    1.0 / (2.0 * eta0 * dt)
}

/// `(C/r) ‖φ_{2λ0}‖_1^{1/2}` with `C = 2 e^{R²/(η0Δ)}`, `λ0 = 1/(η0Δ)`.
pub fn ui_envelope(eta0: f64, dt: f64, radius: f64, r: f64, phi_norm: f64) -> f64 {
    2.0 * (radius * radius / (eta0 * dt)).exp() / r * phi_norm.sqrt()
}

/// `λ0 = 1/(η0Δ)` of the uniform-integrability domination.
pub fn ui_lambda0(eta0: f64, dt: f64) -> f64 {
    1.0 / (eta0 * dt)
}

/// `max(0, sup_{y>=R} y²(2λΛ - (k/2)(log y)^α))`, the offset used when
/// `<b,x> <= -k|x|²(log|x|)^α` is turned into a convex Lyapunov bound.
pub fn ultrabounded_offset(
    coeff: f64,
    alpha: f64,
    lambda: f64,
    lambda_max: f64,
    radius: f64,
) -> f64 {
    let f =
        |y: f64| y * y * (2.0 * lambda * lambda_max - 0.5 * coeff * y.ln().max(0.0).powf(alpha));
    // The bracket vanishes at log y = (4λΛ/k)^{1/α}; beyond it f < 0.
    let w_end = (4.0 * lambda * lambda_max / coeff).powf(1.0 / alpha);
    let w_lo = radius.max(1.0).ln();
    if w_end <= w_lo {
        return 0.0;
    }
    let n = 2000;
    let mut best = (0.0f64, w_lo);
    for k in 0..=n {
        let w = w_lo + (w_end - w_lo) * k as f64 / n as f64;
        let v = f(w.exp());
        if v > best.0 {
            best = (v, w);
        }
    }
    if best.0 <= 0.0 {
        return 0.0;
    }
    let step = (w_end - w_lo) / n as f64;
    let (mut a, mut b) = ((best.1 - step).max(w_lo), (best.1 + step).min(w_end));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c.exp()) > f(d.exp()) {
            b = d;
        } else {
            a = c;
        }
    }
    best.0.max(f((0.5 * (a + b)).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartic_constants() {
        let m = mtilde_bound(4.0, 1.0, 1.0, 1, 1.0, 0.5).unwrap();
        assert!((m.c_kappa - 2.0).abs() < 1e-12);
        assert!((m.k0 - 2.0).abs() < 1e-12);
        assert!((c1_coefficient(4.0, 1.0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn small_lambda_limit() {
        let a = mtilde_bound(4.0, 1.0, 1.0, 1, 1.0, 1e-3).unwrap().bound;
        let b = mtilde_bound(4.0, 1.0, 1.0, 1, 1.0, 1e-6).unwrap().bound;
        assert!(b <= a && (1.0..1.01).contains(&b));
    }

    #[test]
    fn super_lsi_examples() {
        let (m1, _) = super_lsi_constants(2.0, 3.0, 1e3, 1.0, 1.0, -1.0).unwrap();
        assert!((m1 - 8.0).abs() < 1e-12);
        let (m1, m2) = super_lsi_constants(2.0, 3.0, 0.0, 1.0, 1.0, -1.0).unwrap();
        assert_eq!((m1, m2), (0.0, 0.0));
        assert!(matches!(
            super_lsi_constants(2.0, 2.0, 1.0, 1.0, 1.0, -1.0),
            Err(Error::DegenerateExponents { .. })
        ));
    }

    #[test]
    fn recursion_exponent() {
        let q = hypercontractive_exponent(2.0, 2.0, 1.0, 1.0);
        assert!((q - (1f64.exp() + 1.0)).abs() < 1e-15);
        assert_eq!(hypercontractive_exponent(2.0, 2.0, 1.0, 0.0), 2.0);
    }

    #[test]
    fn offset_vanishes_for_strong_drift() {
        assert_eq!(ultrabounded_offset(100.0, 2.0, 0.1, 1.0, 2.0), 0.0);
        let c = ultrabounded_offset(1.0, 2.0, 0.5, 1.0, 2.0);
        assert!(c > 0.0);
    }
}
