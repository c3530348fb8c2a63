//! Gaussian kernel density estimates of transition densities `g_{t,s}(x, ·)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{simulate, PathConfig, SeedLineage};
use crate::operator::OperatorSpec;
use crate::{Error, Result};

/// Largest dimension for which density estimates are attempted.
pub const MAX_KDE_DIM: usize = 3;

/// Kernel support used when summing: points beyond this many bandwidths in
/// the first coordinate contribute less than `e^{-32}` and are skipped.
const WINDOW: f64 = 8.0;

/// Relative curvature bias `h² |g''| / (2g)` above which a sup is flagged.
const BIAS_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Bandwidth {
    /// `σ_j (4 / ((d + 2) n))^{1/(d+4)}` per coordinate.
    Silverman,
    Fixed(Vec<f64>),
}

/// Product Gaussian kernel estimate over a point cloud.
#[derive(Debug, Clone)]
pub struct KernelDensity {
    dim: usize,
    /// Row-major, sorted by the first coordinate.
    points: Vec<f64>,
    first: Vec<f64>,
    h: Vec<f64>,
    norm: f64,
}

impl KernelDensity {
    /// Builds the estimate from row-major points; rows containing NaN are dropped.
    pub fn from_points(points: &[f64], dim: usize, rule: &Bandwidth) -> Result<Self> {
        if dim > MAX_KDE_DIM {
            return Err(Error::DimensionTooHigh(dim));
        }
        let mut rows: Vec<&[f64]> = points
            .chunks_exact(dim)
            .filter(|r| r.iter().all(|v| v.is_finite()))
            .collect();
        let n = rows.len();
        if n < 2 {
            return Err(Error::precondition(
                "density estimate needs at least two finite points",
            ));
        }
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let h = match rule {
            Bandwidth::Fixed(h) => {
                if h.len() != dim || h.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::precondition(
                        "fixed bandwidth needs one positive value per coordinate",
                    ));
                }
                h.clone()
            }
            Bandwidth::Silverman => {
                let factor = (4.0 / ((dim as f64 + 2.0) * n as f64)).powf(1.0 / (dim as f64 + 4.0));
                (0..dim)
                    .map(|j| {
                        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
                        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>()
                            / (n - 1) as f64;
                        (var.sqrt() * factor).max(f64::MIN_POSITIVE)
                    })
                    .collect()
            }
        };
        let norm = 1.0
            / (n as f64
                * h.iter()
                    .map(|hj| hj * (2.0 * std::f64::consts::PI).sqrt())
                    .product::<f64>());
        Ok(KernelDensity {
            dim,
            first: rows.iter().map(|r| r[0]).collect(),
            points: rows.concat(),
            h,
            norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.h
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        let lo = self
            .first
            .partition_point(|v| *v < y[0] - WINDOW * self.h[0]);
        let hi = self
            .first
            .partition_point(|v| *v <= y[0] + WINDOW * self.h[0]);
        let mut sum = 0.0;
        for i in lo..hi {
            let p = &self.points[i * self.dim..(i + 1) * self.dim];
            let mut e = 0.0;
            for j in 0..self.dim {
                let z = (y[j] - p[j]) / self.h[j];
                e += z * z;
            }
            sum += (-0.5 * e).exp();
        }
        sum * self.norm
    }
}

/// Tensor grid of query points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryGrid {
    pub axes: Vec<Vec<f64>>,
}

impl QueryGrid {
    /// Default resolution per dimension: 401, 81, 31 points.
    pub fn default_points(dim: usize) -> usize {
        match dim {
            1 => 401,
            2 => 81,
            _ => 31,
        }
    }

    pub fn uniform(lo: &[f64], hi: &[f64], points: usize) -> Self {
        let axes = lo
            .iter()
            .zip(hi)
            .map(|(a, b)| {
                (0..points)
                    .map(|k| a + (b - a) * k as f64 / (points - 1) as f64)
                    .collect()
            })
            .collect();
        QueryGrid { axes }
    }

    /// `mean ± half_width·sd` per coordinate of the point cloud.
    pub fn covering(points: &[f64], dim: usize, half_width: f64, n_points: usize) -> Self {
        let rows: Vec<&[f64]> = points
            .chunks_exact(dim)
            .filter(|r| r.iter().all(|v| v.is_finite()))
            .collect();
        let n = rows.len().max(2) as f64;
        let mut lo = Vec::with_capacity(dim);
        let mut hi = Vec::with_capacity(dim);
        for j in 0..dim {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let sd = (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            lo.push(mean - half_width * sd);
            hi.push(mean + half_width * sd);
        }
        Self::uniform(&lo, &hi, n_points)
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Point `k` in row-major (last axis fastest) order.
    pub fn point(&self, mut k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.axes.len()];
        for (j, axis) in self.axes.iter().enumerate().rev() {
            out[j] = axis[k % axis.len()];
            k /= axis.len();
        }
        out
    }

    /// Tensor trapezoid rule over values in [`QueryGrid::point`] order.
    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        let mut acc = values.to_vec();
        for axis in self.axes.iter().rev() {
            let m = axis.len();
            acc = acc
                .chunks_exact(m)
                .map(|row| {
                    (1..m)
                        .map(|i| 0.5 * (row[i] + row[i - 1]) * (axis[i] - axis[i - 1]))
                        .sum::<f64>()
                })
                .collect();
        }
        acc[0]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityEstimate {
    pub grid: QueryGrid,
    pub values: Vec<f64>,
    pub sup: f64,
    pub argsup: Vec<f64>,
    /// Trapezoid integral of the estimate over the grid.
    pub mass: f64,
    /// Set when the kernel's smoothing bias at the maximum may exceed 5%
    /// (always set for `d > 1`, where the curvature is not estimated).
    pub bias_flag: bool,
    pub bandwidth: Vec<f64>,
    pub n: usize,
}

impl DensityEstimate {
    pub fn evaluate(kde: &KernelDensity, grid: QueryGrid) -> Self {
        let values: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|k| kde.eval(&grid.point(k)))
            .collect();
        let (imax, sup) =
            values
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                });
        let bias_flag = if kde.dim() == 1 && imax > 0 && imax + 1 < values.len() {
            let axis = &grid.axes[0];
            let dx = axis[1] - axis[0];
            let curv = (values[imax - 1] - 2.0 * values[imax] + values[imax + 1]) / (dx * dx);
            0.5 * kde.h[0] * kde.h[0] * curv.abs() / sup > BIAS_THRESHOLD
        } else {
            true
        };
        DensityEstimate {
            mass: grid.trapezoid(&values),
            argsup: grid.point(imax),
            grid,
            values,
            sup,
            bias_flag,
            bandwidth: kde.bandwidth().to_vec(),
            n: kde.len(),
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Density of `X` for paths from `x` at clock `t` to clock `s`, on a grid
/// spanning ±8 sample standard deviations.
#[allow(clippy::too_many_arguments)]
pub fn kernel_density(
    spec: &OperatorSpec,
    s: f64,
    t: f64,
    x: &[f64],
    n: usize,
    rule: &Bandwidth,
    config: &PathConfig,
    lineage: &SeedLineage,
) -> Result<DensityEstimate> {
    if spec.dim > MAX_KDE_DIM {
        return Err(Error::DimensionTooHigh(spec.dim));
    }
    let ens = simulate(spec, s, t, x, n, config, lineage)?;
    let kde = KernelDensity::from_points(&ens.states, spec.dim, rule)?;
    let grid = QueryGrid::covering(
        &ens.states,
        spec.dim,
        8.0,
        QueryGrid::default_points(spec.dim),
    );
    Ok(DensityEstimate::evaluate(&kde, grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_points(n: usize, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }

    #[test]
    fn mass_and_peak_2d() {
        let pts = normal_points(20_000, 2, 3);
        let kde = KernelDensity::from_points(&pts, 2, &Bandwidth::Silverman).unwrap();
        let est = DensityEstimate::evaluate(&kde, QueryGrid::covering(&pts, 2, 8.0, 81));
        assert!((est.mass - 1.0).abs() < 0.01, "{}", est.mass);
        let peak = 1.0 / (2.0 * std::f64::consts::PI);
        assert!((est.sup / peak - 1.0).abs() < 0.1);
        assert!(est.bias_flag);
    }

    #[test]
    fn dimension_guard() {
        assert!(matches!(
            KernelDensity::from_points(&[0.0; 8], 4, &Bandwidth::Silverman),
            Err(Error::DimensionTooHigh(4))
        ));
    }

    #[test]
    fn window_matches_full_sum() {
        let pts = normal_points(3000, 1, 5);
        let kde = KernelDensity::from_points(&pts, 1, &Bandwidth::Fixed(vec![0.3])).unwrap();
        for y in [-2.0, 0.0, 0.7, 3.5] {
            let full: f64 = pts
                .iter()
                .map(|p| (-0.5 * ((y - p) / 0.3f64).powi(2)).exp())
                .sum::<f64>()
                / (3000.0 * 0.3 * (2.0 * std::f64::consts::PI).sqrt());
            assert!((kde.eval(&[y]) - full).abs() < 1e-12);
        }
    }

    #[test]
    fn trapezoid_is_exact_for_bilinear() {
        let grid = QueryGrid::uniform(&[0.0, 0.0], &[1.0, 2.0], 5);
        let values: Vec<f64> = (0..grid.len())
            .map(|k| {
                let p = grid.point(k);
                1.0 + p[0] + p[1] + p[0] * p[1]
            })
            .collect();
        assert!((grid.trapezoid(&values) - (2.0 + 1.0 + 2.0 + 1.0)).abs() < 1e-12);
    }
}
