//! Monte Carlo summaries and small regressions.

use serde::Serialize;

/// A Monte Carlo value with its standard error.
///
/// With antithetic sampling the error is computed from pair averages, which
/// are the independent units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl McEstimate {
    pub fn exact(value: f64, n_paths: usize, seed: u64) -> Self {
        McEstimate {
            value,
            std_error: 0.0,
            n_paths,
            seed,
        }
    }

    pub fn from_samples(samples: &[f64], antithetic: bool, seed: u64) -> Self {
        let (value, std_error) = mean_se(samples, antithetic);
        McEstimate {
            value,
            std_error,
            n_paths: samples.len(),
            seed,
        }
    }

    pub fn combined_se(&self, other: &McEstimate) -> f64 {
        self.std_error.hypot(other.std_error)
    }

    /// `|value − target| ≤ k·SE` (with a rounding allowance for exact estimates).
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error + 1e-12 * target.abs().max(1e-300)
    }

    pub fn scaled(&self, c: f64) -> Self {
        McEstimate {
            value: self.value * c,
            std_error: self.std_error * c.abs(),
            ..*self
        }
    }
}

fn units(samples: &[f64], antithetic: bool) -> Vec<f64> {
    if antithetic {
        samples
            .chunks(2)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    } else {
        samples.to_vec()
    }
}

/// Mean and standard error, summed in index order.
pub fn mean_se(samples: &[f64], antithetic: bool) -> (f64, f64) {
    let u = units(samples, antithetic);
    let n = u.len() as f64;
    let mean = u.iter().sum::<f64>() / n;
    if u.len() < 2 {
        return (mean, 0.0);
    }
    let var = u.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Ratio of two means computed on the same paths, with a delta-method error.
pub fn ratio_se(num: &[f64], den: &[f64], antithetic: bool) -> (f64, f64) {
    let a = units(num, antithetic);
    let b = units(den, antithetic);
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let r = ma / mb;
    if a.len() < 2 {
        return (r, 0.0);
    }
    // residuals of the linearized ratio
    let var = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - r * y).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    (r, (var / n).sqrt() / mb.abs())
}

/// Ordinary least squares `y ≈ slope·x + intercept`; returns `(slope, intercept, r²)`.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 {
        (sxy * sxy) / (sxx * syy)
    } else {
        1.0
    };
    (slope, intercept, r2)
}
