//! Small statistical helpers shared by the estimators.

use serde::{Deserialize, Serialize};

/// Point estimate with standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn new(value: f64, std_error: f64) -> Self {
        Estimate { value, std_error }
    }

    pub fn exact(value: f64) -> Self {
        Estimate { value, std_error: 0.0 }
    }

    /// `|self - other| <= z * sqrt(se1^2 + se2^2)`.
    pub fn agrees_with(&self, other: &Estimate, z: f64) -> bool {
        (self.value - other.value).abs() <= z * self.std_error.hypot(other.std_error)
    }
}

/// Welford running mean and variance.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanAccumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl MeanAccumulator {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate::new(self.mean(), self.std_error())
    }
}

pub fn mean_estimate(xs: &[f64]) -> Estimate {
    let mut acc = MeanAccumulator::default();
    xs.iter().for_each(|&x| acc.push(x));
    acc.estimate()
}

/// Delete-a-group jackknife for the mean of `xs`, with contiguous groups.
/// Falls back to the plain standard error when there are too few values.
pub fn grouped_jackknife_mean(xs: &[f64], groups: usize) -> Estimate {
    let n = xs.len();
    if n == 0 {
        return Estimate::new(f64::NAN, f64::NAN);
    }
    let g = groups.min(n);
    if g < 2 {
        return mean_estimate(xs);
    }
    let mut sums = vec![0.0; g];
    let mut counts = vec![0usize; g];
    for (i, &x) in xs.iter().enumerate() {
        let j = i * g / n;
        sums[j] += x;
        counts[j] += 1;
    }
    let total: f64 = sums.iter().sum();
    let mean = total / n as f64;
    let loo: Vec<f64> = (0..g).map(|j| (total - sums[j]) / (n - counts[j]) as f64).collect();
    let loo_mean = loo.iter().sum::<f64>() / g as f64;
    let var = loo.iter().map(|v| (v - loo_mean).powi(2)).sum::<f64>() * (g - 1) as f64 / g as f64;
    Estimate::new(mean, var.sqrt())
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    ks_distance_sorted(&x, &y)
}

pub fn ks_distance_sorted(x: &[f64], y: &[f64]) -> f64 {
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let t = if x[i] <= y[j] { x[i] } else { y[j] };
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Linear-interpolated empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    quantile_sorted(xs, 0.5)
}
