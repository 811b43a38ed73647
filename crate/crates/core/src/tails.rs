//! Tail index and tail constant estimation from sample batches.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::parallel_map;
use crate::stats::{ks_distance, median, quantile_sorted, Estimate};
use crate::stream::StreamKey;

pub const DEFAULT_BAND: (f64, f64) = (0.99, 0.9995);
pub const DEFAULT_BOOTSTRAP: u64 = 200;
pub const DEFAULT_KS_THRESHOLD: f64 = 0.02;
pub const MIN_PLATEAU_POINTS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TailError {
    #[error("need 2 <= k < n, got k = {k} with n = {n}")]
    BadK { k: usize, n: usize },
    #[error("nonpositive value {0} inside the tail window")]
    NonPositive(f64),
    #[error("only {found} points in the quantile band, need {needed}")]
    TooFewPoints { found: usize, needed: usize },
    #[error("quantile band ({0}, {1}) must satisfy 0.9 < lo < hi < 0.9999")]
    BadBand(f64, f64),
    #[error("alpha must be positive, got {0}")]
    BadAlpha(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPoint {
    pub t: f64,
    pub fraction: f64,
    pub std_error: f64,
}

/// Empirical `P(R > t)` with binomial standard errors.
pub fn survival_points(sorted: &[f64], grid: &[f64]) -> Vec<SurvivalPoint> {
    let n = sorted.len() as f64;
    grid.iter()
        .map(|&t| {
            let above = sorted.len() - sorted.partition_point(|&x| x <= t);
            let p = above as f64 / n;
            SurvivalPoint { t, fraction: p, std_error: (p * (1.0 - p) / n).sqrt() }
        })
        .collect()
}

/// Log-spaced grid from the median to the maximum of the data.
pub fn survival_grid(sorted: &[f64], points: usize) -> Vec<f64> {
    let lo = quantile_sorted(sorted, 0.5).max(f64::MIN_POSITIVE);
    let hi = sorted.last().copied().unwrap_or(lo).max(lo);
    if points < 2 || hi <= lo {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points).map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp()).collect()
}

pub fn default_k(n: usize) -> usize {
    ((n as f64).powf(0.6).floor() as usize).clamp(2, n.saturating_sub(1).max(2))
}

/// Hill estimator over the `k` largest values of ascending `sorted` data.
pub fn hill_sorted(sorted: &[f64], k: usize) -> Result<Estimate, TailError> {
    let n = sorted.len();
    if k < 2 || k >= n {
        return Err(TailError::BadK { k, n });
    }
    let threshold = sorted[n - k - 1];
    if threshold <= 0.0 {
        return Err(TailError::NonPositive(threshold));
    }
    let lt = threshold.ln();
    let s: f64 = sorted[n - k..].iter().map(|x| x.ln() - lt).sum();
    let alpha = k as f64 / s;
    Ok(Estimate::new(alpha, alpha / (k as f64).sqrt()))
}

pub fn hill(values: &[f64], k: usize) -> Result<Estimate, TailError> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    hill_sorted(&sorted, k)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HillPoint {
    pub k: usize,
    pub alpha: f64,
    pub std_error: f64,
}

/// Hill estimates on a log-spaced `k` grid from 10 to `n / 2`.
pub fn hill_sweep(sorted: &[f64], points: usize) -> Vec<HillPoint> {
    let n = sorted.len();
    let hi = (n / 2).max(2);
    let lo = 10.min(hi);
    let mut ks: Vec<usize> = (0..points.max(2))
        .map(|i| {
            let f = i as f64 / (points.max(2) - 1) as f64;
            ((lo as f64).ln() + f * ((hi as f64).ln() - (lo as f64).ln())).exp().round() as usize
        })
        .collect();
    ks.dedup();
    ks.into_iter()
        .filter_map(|k| hill_sorted(sorted, k).ok().map(|e| HillPoint { k, alpha: e.value, std_error: e.std_error }))
        .collect()
}

/// Compares the Hill estimate at `k0` with the one at `k0 / 16`; a drift
/// larger than both 20% and three relative standard errors means no plateau.
pub fn hill_slope_flag(sorted: &[f64], k0: usize) -> bool {
    let small = (k0 / 16).max(2);
    match (hill_sorted(sorted, k0), hill_sorted(sorted, small)) {
        (Ok(a), Ok(b)) => {
            let drift = (a.value - b.value).abs() / a.value;
            let rel_se = (1.0 / k0 as f64 + 1.0 / small as f64).sqrt();
            drift > (3.0 * rel_se).max(0.2)
        }
        _ => true,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauEstimate {
    pub value: f64,
    pub ci: (f64, f64),
    pub t_range: (f64, f64),
    pub points: usize,
    pub band: (f64, f64),
    pub alpha: f64,
    pub resamples: u64,
}

fn band_ranks(n: usize, band: (f64, f64)) -> (usize, usize) {
    let lo = (band.0 * n as f64).ceil() as usize;
    let hi = ((band.1 * n as f64).floor() as usize).min(n);
    (lo, hi.max(lo))
}

/// Median of `t^alpha P(R > t)` over the order statistics inside `band`.
fn plateau_value(sorted: &[f64], alpha: f64, band: (f64, f64)) -> Option<f64> {
    let n = sorted.len();
    let (lo, hi) = band_ranks(n, band);
    if hi <= lo {
        return None;
    }
    let mut vals: Vec<f64> = Vec::with_capacity(hi - lo);
    let mut r = lo;
    while r < hi {
        let t = sorted[r];
        let le = sorted.partition_point(|&x| x <= t);
        let p = (n - le) as f64 / n as f64;
        let end = le.min(hi);
        for _ in r..end {
            vals.push(t.powf(alpha) * p);
        }
        r = end.max(r + 1);
    }
    Some(median(&mut vals))
}

/// Plateau estimate of `H` with a percentile bootstrap over replications.
pub fn plateau_h(
    sorted: &[f64],
    alpha: f64,
    band: (f64, f64),
    resamples: u64,
    key: StreamKey,
    workers: usize,
) -> Result<PlateauEstimate, TailError> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(TailError::BadAlpha(alpha));
    }
    if !(band.0 > 0.9 && band.0 < band.1 && band.1 < 0.9999) {
        return Err(TailError::BadBand(band.0, band.1));
    }
    let n = sorted.len();
    let (lo, hi) = band_ranks(n, band);
    if hi - lo < MIN_PLATEAU_POINTS {
        return Err(TailError::TooFewPoints { found: hi - lo, needed: MIN_PLATEAU_POINTS });
    }
    let value = plateau_value(sorted, alpha, band).expect("band is nonempty");

    // each resample is a multinomial count vector over the original order statistics
    let boots: Vec<f64> = parallel_map(resamples, workers, |b| {
        let mut rng = key.child(b).rng();
        let mut counts = vec![0u32; n];
        for _ in 0..n {
            counts[rng.gen_range(0..n)] += 1;
        }
        let mut vals = Vec::with_capacity(hi - lo);
        let mut cum = 0usize;
        for (j, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let start = cum;
            cum += c as usize;
            if cum <= lo {
                continue;
            }
            if start >= hi {
                break;
            }
            let p = (n - cum) as f64 / n as f64;
            let copies = cum.min(hi) - start.max(lo);
            let v = sorted[j].powf(alpha) * p;
            vals.extend(std::iter::repeat_n(v, copies));
        }
        median(&mut vals)
    });
    let mut boots = boots;
    boots.sort_by(f64::total_cmp);
    let ci = if boots.is_empty() { (value, value) } else { (quantile_sorted(&boots, 0.025), quantile_sorted(&boots, 0.975)) };
    Ok(PlateauEstimate { value, ci, t_range: (sorted[lo], sorted[hi - 1]), points: hi - lo, band, alpha, resamples })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub ks: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// KS distance between batches at two depths.
pub fn stability_diagnostic(a: &[f64], b: &[f64], threshold: f64) -> StabilityReport {
    let ks = ks_distance(a, b);
    StabilityReport { ks, threshold, pass: ks <= threshold }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailSettings {
    pub k: Option<usize>,
    pub band: (f64, f64),
    pub bootstrap: u64,
    pub survival_points: usize,
    pub workers: usize,
    pub seed: u64,
}

impl Default for TailSettings {
    fn default() -> Self {
        TailSettings {
            k: None,
            band: DEFAULT_BAND,
            bootstrap: DEFAULT_BOOTSTRAP,
            survival_points: 60,
            workers: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailStability {
    pub hill_slope_flag: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_ks: Option<StabilityReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub n: usize,
    pub alpha_hat: Estimate,
    pub k_used: usize,
    /// Exponent used for the plateau: the Cramér root when known, else the Hill estimate.
    pub plateau_alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plateau_h: Option<PlateauEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plateau_error: Option<String>,
    pub survival_points: Vec<SurvivalPoint>,
    pub stability: TailStability,
}

/// Hill estimate, plateau `H` and survival curve of one batch.
pub fn analyze(values: &[f64], alpha: Option<f64>, settings: &TailSettings) -> Result<TailReport, TailError> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = settings.k.unwrap_or_else(|| default_k(n));
    let alpha_hat = hill_sorted(&sorted, k)?;
    let plateau_alpha = alpha.unwrap_or(alpha_hat.value);
    let key = StreamKey::replication(settings.seed, 0).derive("plateau-bootstrap");
    let (plateau, plateau_error) = match plateau_h(&sorted, plateau_alpha, settings.band, settings.bootstrap, key, settings.workers) {
        Ok(p) => (Some(p), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let grid = survival_grid(&sorted, settings.survival_points);
    Ok(TailReport {
        n,
        alpha_hat,
        k_used: k,
        plateau_alpha,
        plateau_h: plateau,
        plateau_error,
        survival_points: survival_points(&sorted, &grid),
        stability: TailStability { hill_slope_flag: hill_slope_flag(&sorted, k), depth_ks: None },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn pareto(alpha: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = StreamKey::replication(seed, 0).rng();
        (0..n).map(|_| (1.0 - rng.gen::<f64>()).powf(-1.0 / alpha)).collect()
    }

    #[test]
    fn survival_of_constant_batch() {
        let ones = vec![1.0; 100];
        let pts = survival_points(&ones, &[0.5, 1.0, 2.0]);
        assert_eq!(pts[0].fraction, 1.0);
        assert_eq!(pts[1].fraction, 0.0);
        assert_eq!(pts[2].fraction, 0.0);
    }

    #[test]
    fn survival_matches_direct_counting() {
        let xs: Vec<f64> = (0..100).map(|i| f64::from((i * 37) % 100) / 10.0).collect();
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        let grid = [0.0, 0.05, 3.3, 5.0, 9.9, 10.0];
        for p in survival_points(&sorted, &grid) {
            let direct = xs.iter().filter(|&&x| x > p.t).count() as f64 / 100.0;
            assert_eq!(p.fraction, direct);
        }
    }

    #[test]
    fn hill_on_pareto() {
        let mut x = pareto(2.0, 1_000_000, 1);
        x.sort_by(f64::total_cmp);
        let a = hill_sorted(&x, 10_000).unwrap();
        assert!((a.value - 2.0).abs() < 0.1, "{a:?}");
        let mut y = pareto(1.0, 1_000_000, 2);
        y.sort_by(f64::total_cmp);
        let b = hill_sorted(&y, 10_000).unwrap();
        assert!((b.value - 1.0).abs() < 0.05, "{b:?}");
        assert!(!hill_slope_flag(&x, default_k(x.len())));
    }

    #[test]
    fn survival_on_pareto() {
        let mut x = pareto(2.0, 1_000_000, 5);
        x.sort_by(f64::total_cmp);
        let p = survival_points(&x, &[10.0])[0];
        assert!((p.fraction - 0.01).abs() <= 3.0 * p.std_error);
    }

    #[test]
    fn exponential_data_raises_slope_flag() {
        let mut rng = StreamKey::replication(3, 0).rng();
        let mut x: Vec<f64> = (0..1_000_000).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        x.sort_by(f64::total_cmp);
        assert!(hill_slope_flag(&x, default_k(x.len())));
    }

    #[test]
    fn hill_rejects_bad_windows() {
        assert!(matches!(hill_sorted(&[1.0, 2.0, 3.0], 3), Err(TailError::BadK { .. })));
        assert!(matches!(hill_sorted(&[0.0, 0.0, 2.0, 3.0], 2), Err(TailError::NonPositive(_))));
    }

    #[test]
    fn plateau_on_pareto_is_one() {
        let mut x = pareto(2.0, 200_000, 4);
        x.sort_by(f64::total_cmp);
        let p = plateau_h(&x, 2.0, DEFAULT_BAND, 50, StreamKey::from_raw(9), 1).unwrap();
        assert!((p.value - 1.0).abs() < 0.1, "{p:?}");
        assert!(p.ci.0 <= 1.0 && 1.0 <= p.ci.1, "{p:?}");
    }

    #[test]
    fn plateau_scales_with_data() {
        let mut x = pareto(1.5, 50_000, 6);
        x.sort_by(f64::total_cmp);
        let s = 3.7f64;
        let y: Vec<f64> = x.iter().map(|v| v * s).collect();
        let a = plateau_h(&x, 1.5, DEFAULT_BAND, 0, StreamKey::from_raw(1), 1).unwrap();
        let b = plateau_h(&y, 1.5, DEFAULT_BAND, 0, StreamKey::from_raw(1), 1).unwrap();
        assert!((b.value / a.value - s.powf(1.5)).abs() < 1e-12 * s.powf(1.5));
    }

    #[test]
    fn plateau_needs_points() {
        let x = pareto(2.0, 1000, 7);
        let mut s = x.clone();
        s.sort_by(f64::total_cmp);
        assert!(matches!(plateau_h(&s, 2.0, DEFAULT_BAND, 10, StreamKey::from_raw(1), 1), Err(TailError::TooFewPoints { .. })));
        assert!(matches!(plateau_h(&s, 2.0, (0.5, 0.9), 10, StreamKey::from_raw(1), 1), Err(TailError::BadBand(..))));
    }

    #[test]
    fn identical_batches_have_zero_ks() {
        let x = pareto(2.0, 1000, 8);
        let r = stability_diagnostic(&x, &x, DEFAULT_KS_THRESHOLD);
        assert_eq!(r.ks, 0.0);
        assert!(r.pass);
    }
}
