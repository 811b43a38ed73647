//! The tilted one-step measure `eta(du) = e^(alpha u) E[sum 1(log C_j in du)]`
//! and a two-sided Monte Carlo check that the level-`n` tree measure is its
//! `n`-fold convolution.

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{parallel_map, walk_tree, DEFAULT_BUDGET};
use crate::model::{phi, phi_prime, VectorModel, WeightLaw};
use crate::stats::{Estimate, MeanAccumulator};
use crate::stream::StreamKey;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenewalError {
    #[error("tilted mass phi(alpha) = {0} is not 1 within 1e-10")]
    NotNormalized(f64),
    #[error("weight law has no tilt: {0}")]
    Unsupported(String),
    #[error("level must be in 1..=4, got {0}")]
    BadLevel(u32),
    #[error("tree replication exceeded the node budget")]
    Truncated,
}

#[derive(Clone, Debug)]
enum TiltSampler {
    Normal(Normal<f64>),
    /// `u = ln b + ln U / (alpha + 1)`
    Uniform { ln_b: f64, exponent: f64 },
    Beta { beta: Beta<f64>, ln_scale: f64 },
    Point(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    ClosedFormTilt,
}

/// Probability measure of the tilted log-weight.
#[derive(Clone, Debug)]
pub struct TiltedMeasure {
    pub alpha: f64,
    pub total_mass: f64,
    pub mean: f64,
    pub sampler_kind: SamplerKind,
    sampler: TiltSampler,
}

impl TiltedMeasure {
    pub fn new(model: &VectorModel, alpha: f64) -> Result<Self, RenewalError> {
        let total_mass = phi(model, alpha).value().unwrap_or(f64::INFINITY);
        if (total_mass - 1.0).abs() > 1e-10 {
            return Err(RenewalError::NotNormalized(total_mass));
        }
        let ln_s = model.c_scale.ln();
        let bad = |e: rand_distr::NormalError| RenewalError::Unsupported(e.to_string());
        let sampler = match model.c_law {
            WeightLaw::Lognormal { mu, sigma2 } => {
                TiltSampler::Normal(Normal::new(mu + ln_s + alpha * sigma2, sigma2.sqrt()).map_err(bad)?)
            }
            WeightLaw::Uniform { b } => TiltSampler::Uniform { ln_b: b.ln() + ln_s, exponent: 1.0 / (alpha + 1.0) },
            WeightLaw::BetaScaled { a, b, scale } => TiltSampler::Beta {
                beta: Beta::new(a + alpha, b).map_err(|e| RenewalError::Unsupported(e.to_string()))?,
                ln_scale: scale.ln() + ln_s,
            },
            WeightLaw::Deterministic { value } => {
                if value <= 0.0 {
                    return Err(RenewalError::Unsupported("zero weights carry no tilted mass".into()));
                }
                TiltSampler::Point(value.ln() + ln_s)
            }
        };
        let mean = phi_prime(model, alpha).value().unwrap_or(f64::NAN);
        Ok(TiltedMeasure { alpha, total_mass, mean, sampler_kind: SamplerKind::ClosedFormTilt, sampler })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.sampler {
            TiltSampler::Normal(n) => n.sample(rng),
            TiltSampler::Uniform { ln_b, exponent } => {
                let u: f64 = 1.0 - rng.gen::<f64>();
                ln_b + exponent * u.ln()
            }
            TiltSampler::Beta { beta, ln_scale } => ln_scale + beta.sample(rng).ln(),
            TiltSampler::Point(u) => *u,
        }
    }
}

pub fn sample_eta<R: Rng + ?Sized>(model: &VectorModel, alpha: f64, rng: &mut R) -> Result<f64, RenewalError> {
    Ok(TiltedMeasure::new(model, alpha)?.sample(rng))
}

/// The fixed family of test functions `g`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum TestFunction {
    Constant,
    Identity,
    /// `1(u <= x)`
    Indicator { x: f64 },
    /// `exp(-|u|)`
    ExpBounded,
}

impl TestFunction {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            TestFunction::Constant => 1.0,
            TestFunction::Identity => u,
            TestFunction::Indicator { x } => f64::from(u8::from(u <= x)),
            TestFunction::ExpBounded => (-u.abs()).exp(),
        }
    }

    pub fn label(self) -> String {
        match self {
            TestFunction::Constant => "constant-1".into(),
            TestFunction::Identity => "identity-u".into(),
            TestFunction::Indicator { x } => format!("indicator(u<={x})"),
            TestFunction::ExpBounded => "exp-bounded".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualEstimateReport {
    pub n: u32,
    pub g_name: String,
    /// `E[sum_{A_n} Pi^alpha g(log Pi)]` from generated trees.
    pub lhs: Estimate,
    /// `E[g(U_1 + ... + U_n)]` from tilted draws; exact for the constant function.
    pub rhs: Estimate,
    pub agree: bool,
}

/// Dual estimate of `int g d mu_n` against `int g d eta^{*n}`.
pub fn verify_product_measure(
    model: &VectorModel,
    alpha: f64,
    n: u32,
    g: TestFunction,
    reps: u64,
    key: StreamKey,
    workers: usize,
) -> Result<DualEstimateReport, RenewalError> {
    if !(1..=4).contains(&n) {
        return Err(RenewalError::BadLevel(n));
    }
    let eta = TiltedMeasure::new(model, alpha)?;

    let tree_key = key.derive("tree");
    let sums: Vec<Option<f64>> = parallel_map(reps, workers, |i| {
        let mut acc = 0.0;
        let mut counts = Vec::new();
        walk_tree(model, tree_key.child(i), Some(n), None, DEFAULT_BUDGET, &mut counts, |v| {
            if v.level == n && v.pi > 0.0 {
                acc += v.pi.powf(alpha) * g.eval(v.pi.ln());
            }
        })
        .ok()
        .map(|_| acc)
    });
    let mut lhs = MeanAccumulator::default();
    for s in sums {
        lhs.push(s.ok_or(RenewalError::Truncated)?);
    }
    let lhs = lhs.estimate();

    let rhs = if g == TestFunction::Constant {
        Estimate::exact(eta.total_mass.powi(n as i32))
    } else {
        let eta_key = key.derive("eta");
        let draws: Vec<f64> = parallel_map(reps, workers, |i| {
            let mut rng = eta_key.child(i).rng();
            let u: f64 = (0..n).map(|_| eta.sample(&mut rng)).sum();
            g.eval(u)
        });
        let mut acc = MeanAccumulator::default();
        draws.iter().for_each(|&d| acc.push(d));
        acc.estimate()
    };
    let combined = lhs.std_error.hypot(rhs.std_error);
    let agree = (lhs.value - rhs.value).abs() <= 3.0 * combined + 1e-12 * rhs.value.abs().max(1.0);
    Ok(DualEstimateReport { n, g_name: g.label(), lhs, rhs, agree })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CountLaw, MarkLaw};
    use crate::presets;

    #[test]
    fn model_a_tilt_is_normal_with_mean_mu() {
        let m = presets::model_a();
        let eta = TiltedMeasure::new(&m, 2.0).unwrap();
        assert!((eta.total_mass - 1.0).abs() < 1e-10);
        let mu = 0.5 * 1.3f64.ln();
        assert!((eta.mean - mu).abs() < 1e-12);
        let key = StreamKey::replication(11, 0);
        let mut acc = MeanAccumulator::default();
        let mut rng = key.rng();
        for _ in 0..1_000_000 {
            acc.push(eta.sample(&mut rng));
        }
        assert!((acc.mean() - mu).abs() <= 3.0 * acc.std_error(), "{} vs {mu}", acc.mean());
    }

    #[test]
    fn uniform_tilt_mean_matches_phi_prime() {
        // N = 2, C ~ U(0, b) with alpha = 1: 2 b / 2 = 1 needs b = 1
        let m = VectorModel::new(
            CountLaw::Deterministic { value: 2 },
            WeightLaw::Uniform { b: 1.0 },
            MarkLaw::Deterministic { value: 1.0 },
            1.0,
        )
        .unwrap();
        let eta = TiltedMeasure::new(&m, 1.0).unwrap();
        let mut rng = StreamKey::from_raw(5).rng();
        let mut acc = MeanAccumulator::default();
        for _ in 0..500_000 {
            acc.push(eta.sample(&mut rng));
        }
        assert!((eta.mean - (-0.5)).abs() < 1e-12);
        assert!((acc.mean() - eta.mean).abs() <= 3.0 * acc.std_error());
    }

    #[test]
    fn unnormalized_tilt_is_rejected() {
        assert!(matches!(TiltedMeasure::new(&presets::model_b(), 1.5), Err(RenewalError::NotNormalized(_))));
    }

    #[test]
    fn constant_function_at_level_one() {
        let m = presets::model_a();
        let r = verify_product_measure(&m, 2.0, 1, TestFunction::Constant, 100_000, StreamKey::from_raw(3), 1).unwrap();
        assert!((r.rhs.value - 1.0).abs() < 1e-10);
        assert_eq!(r.rhs.std_error, 0.0);
        assert!(r.agree, "{r:?}");
    }

    #[test]
    fn bad_level() {
        let m = presets::model_a();
        assert_eq!(
            verify_product_measure(&m, 2.0, 5, TestFunction::Identity, 10, StreamKey::from_raw(3), 1),
            Err(RenewalError::BadLevel(5))
        );
    }
}
