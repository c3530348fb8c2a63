//! Monte Carlo estimates and the reductions that produce them.
//!
//! Every estimator in the crate returns a [`McEstimate`]. Reductions run
//! per shard with Welford updates and are merged in shard order with Chan's
//! pairwise formula, so the result depends only on the shard layout and never
//! on how many workers produced the shards.

use serde::{Deserialize, Serialize};

/// A Monte Carlo value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    /// Sample standard deviation over `sqrt(n)`.
    pub stderr: f64,
    pub n: usize,
}

impl McEstimate {
    /// An exactly known quantity (closed form, pure formula).
    pub fn exact(value: f64) -> Self {
        McEstimate {
            value,
            stderr: 0.0,
            n: usize::MAX,
        }
    }

    pub fn new(value: f64, stderr: f64, n: usize) -> Self {
        McEstimate { value, stderr, n }
    }

    pub fn from_samples<I: IntoIterator<Item = f64>>(samples: I) -> Self {
        let mut acc = Accumulator::default();
        for v in samples {
            acc.push(v);
        }
        acc.estimate()
    }

    pub fn scale(self, c: f64) -> Self {
        McEstimate {
            value: self.value * c,
            stderr: self.stderr * c.abs(),
            n: self.n,
        }
    }

    /// `|value|^p` with delta-method error.
    pub fn abs_pow(self, p: f64) -> Self {
        let a = self.value.abs();
        let value = a.powf(p);
        let stderr = if self.stderr == 0.0 {
            0.0
        } else {
            p * a.powf(p - 1.0) * self.stderr
        };
        McEstimate {
            value,
            stderr,
            n: self.n,
        }
    }

    /// `v log v` with delta-method error; the argument is floored at 1e-300.
    pub fn x_log_x(self) -> Self {
        let v = self.value;
        let value = v * v.max(LOG_FLOOR).ln();
        let stderr = self.stderr * (v.max(LOG_FLOOR).ln() + 1.0).abs();
        McEstimate {
            value,
            stderr,
            n: self.n,
        }
    }

    /// Sum of two estimates treated as independent.
    pub fn plus(self, other: McEstimate) -> Self {
        McEstimate {
            value: self.value + other.value,
            stderr: self.stderr.hypot(other.stderr),
            n: self.n.min(other.n),
        }
    }

    pub fn minus(self, other: McEstimate) -> Self {
        McEstimate {
            value: self.value - other.value,
            stderr: self.stderr.hypot(other.stderr),
            n: self.n.min(other.n),
        }
    }

    /// Ratio with delta-method error (independent numerator and denominator).
    pub fn ratio(self, den: McEstimate) -> Self {
        let value = self.value / den.value;
        let rel = (self.stderr / self.value).hypot(den.stderr / den.value);
        let stderr = if self.stderr == 0.0 && den.stderr == 0.0 {
            0.0
        } else {
            (value * rel).abs()
        };
        McEstimate {
            value,
            stderr,
            n: self.n.min(den.n),
        }
    }

    /// Absolute value; stderr unchanged.
    pub fn abs(self) -> Self {
        McEstimate {
            value: self.value.abs(),
            ..self
        }
    }
}

/// Floor applied inside logarithms of estimates.
pub const LOG_FLOOR: f64 = 1e-300;

/// Running mean and centred second moment (Welford), mergeable with Chan's
/// formula.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Accumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let w = other.n as f64 / n as f64;
        self.mean += delta * w;
        self.m2 += other.m2 + delta * delta * self.n as f64 * w;
        self.n = n;
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn estimate(&self) -> McEstimate {
        McEstimate {
            value: self.mean,
            stderr: (self.variance() / self.n.max(1) as f64).sqrt(),
            n: self.n,
        }
    }
}

/// Reduce `values` in blocks of `block` with a Welford accumulator per block,
/// merging the blocks left to right.
pub fn blocked_estimate<I: IntoIterator<Item = f64>>(values: I, block: usize) -> McEstimate {
    let mut total = Accumulator::default();
    let mut cur = Accumulator::default();
    for v in values {
        cur.push(v);
        if cur.count() == block {
            total.merge(&cur);
            cur = Accumulator::default();
        }
    }
    total.merge(&cur);
    total.estimate()
}

/// `value` with the standard error of the per-sample linearization
/// `Σ_j grad[j] columns[j][i]` (delta method for smooth functions of means
/// estimated on the same samples).
pub fn linearized(value: f64, grad: &[f64], columns: &[&[f64]]) -> McEstimate {
    let n = columns.first().map_or(0, |c| c.len());
    let lin = (0..n).map(|i| grad.iter().zip(columns).map(|(g, c)| g * c[i]).sum::<f64>());
    let e = blocked_estimate(lin, crate::engine::SHARD_SIZE);
    McEstimate {
        value,
        stderr: e.stderr,
        n,
    }
}

/// Arithmetic mean; NaN for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut s = CompensatedSum::default();
    for v in values {
        s.add(v);
    }
    s.value()
}

/// Numerically stable `log(sum(exp(v)))`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s = compensated_sum(values.iter().map(|v| (v - max).exp()));
    max + s.ln()
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, residual sum of squares)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    (intercept, slope, rss)
}

/// Empirical quantile by order statistic: the `ceil(p n)`-th smallest value.
pub fn order_statistic(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_samples_have_zero_error() {
        let e = McEstimate::from_samples(std::iter::repeat_n(3.7, 1000));
        assert_eq!(e.value, 3.7);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn stderr_matches_textbook_formula() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let e = McEstimate::from_samples(xs);
        // sample sd = sqrt(5/3)
        assert!((e.stderr - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(e.value, 2.5);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 2.0 * v).collect();
        let (a, b, rss) = linear_fit(&x, &y);
        assert!((a - 1.5).abs() < 1e-14 && (b + 2.0).abs() < 1e-14 && rss < 1e-24);
    }

    #[test]
    fn log_sum_exp_handles_large_exponents() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn merged_blocks_agree_with_single_pass(xs in prop::collection::vec(-1e3f64..1e3, 2..400), split in 1usize..64) {
            let single = McEstimate::from_samples(xs.iter().copied());
            let blocked = blocked_estimate(xs.iter().copied(), split);
            prop_assert!((single.value - blocked.value).abs() <= 1e-10 * (1.0 + single.value.abs()));
            prop_assert!((single.stderr - blocked.stderr).abs() <= 1e-9 * (1.0 + single.stderr));
        }
    }
}
