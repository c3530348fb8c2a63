//! Central finite differences with steps scaled to the evaluation point.

use nalgebra::DMatrix;

/// Step used for first derivatives: `1e-5 (1 + |x|)`.
pub fn gradient_step(x: &[f64]) -> f64 {
    1e-5 * (1.0 + norm(x))
}

/// Step used for second derivatives: `1e-4 (1 + |x|)`.
pub fn hessian_step(x: &[f64]) -> f64 {
    1e-4 * (1.0 + norm(x))
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn gradient<F: Fn(&[f64]) -> f64 + ?Sized>(f: &F, x: &[f64], out: &mut [f64]) {
    let h = gradient_step(x);
    let mut y = x.to_vec();
    for i in 0..x.len() {
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        out[i] = (fp - fm) / (2.0 * h);
    }
}

pub fn hessian<F: Fn(&[f64]) -> f64 + ?Sized>(f: &F, x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let h = hessian_step(x);
    let mut y = x.to_vec();
    let f0 = f(x);
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        out[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                y[i] = x[i] + si * h;
                y[j] = x[j] + sj * h;
                let v = f(&y);
                y[i] = x[i];
                y[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * h * h);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_derivatives() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[0] * x[1] - x[1] * x[1];
        let x = [0.7, -1.2];
        let mut g = [0.0; 2];
        gradient(&f, &x, &mut g);
        assert!((g[0] - (2.0 * 0.7 + 3.0 * -1.2)).abs() < 1e-8);
        assert!((g[1] - (3.0 * 0.7 + 2.4)).abs() < 1e-8);
        let h = hessian(&f, &x);
        assert!((h[(0, 0)] - 2.0).abs() < 1e-5);
        assert!((h[(0, 1)] - 3.0).abs() < 1e-5);
        assert!((h[(1, 1)] + 2.0).abs() < 1e-5);
    }
}
