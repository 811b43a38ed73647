//! Parametric laws for the node vector `(Q, N, C_1, ..., C_N)`.
//!
//! Weights are iid and independent of the offspring count, which is what
//! makes every moment functional below available in closed form.

use rand::Rng;
use rand_distr::{Distribution, Geometric, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};
use thiserror::Error;

use crate::stats::MeanAccumulator;
use crate::stream::StreamKey;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown family or preset `{0}`")]
    UnknownFamily(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("P(Q > 0) = 0 is not allowed for the {0} recursion")]
    ZeroQ(RecursionKind),
    #[error("model section is missing `{0}`")]
    Missing(&'static str),
}

/// Which fixed-point equation a model is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecursionKind {
    /// `R = sum C_i R_i + Q`
    Linear,
    /// `R = sum C_i R_i` in the critical case, sampled through the unit-mark martingale.
    Homogeneous,
    /// `R = (max C_i R_i) v Q`
    Max,
    /// `R = (max C_i R_i) + Q`
    MaxPlus,
}

impl RecursionKind {
    pub fn is_nonhomogeneous(self) -> bool {
        !matches!(self, RecursionKind::Homogeneous)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RecursionKind::Linear => "linear",
            RecursionKind::Homogeneous => "homogeneous",
            RecursionKind::Max => "max",
            RecursionKind::MaxPlus => "max-plus",
        }
    }
}

impl std::fmt::Display for RecursionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RecursionKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(RecursionKind::Linear),
            "homogeneous" | "homogeneous-martingale" => Ok(RecursionKind::Homogeneous),
            "max" => Ok(RecursionKind::Max),
            "max-plus" => Ok(RecursionKind::MaxPlus),
            other => Err(ModelError::UnknownFamily(other.to_string())),
        }
    }
}

/// Law of the offspring count `N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CountLaw {
    Deterministic { value: u32 },
    TwoPoint { values: [u32; 2], probs: [f64; 2] },
    /// Number of failures before the first success: `P(N = k) = (1 - p)^k p`.
    Geometric { p: f64 },
    Poisson { lambda: f64 },
}

/// Law of an individual weight `C` before `c_scale` is applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightLaw {
    /// `log C ~ Normal(mu, sigma2)`
    Lognormal { mu: f64, sigma2: f64 },
    /// `C ~ Uniform(0, b)`
    Uniform { b: f64 },
    Deterministic { value: f64 },
    /// `C = scale * Beta(a, b)`
    BetaScaled { a: f64, b: f64, scale: f64 },
}

/// Law of the additive mark `Q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MarkLaw {
    Deterministic { value: f64 },
    Lognormal { mu: f64, sigma2: f64 },
    Uniform { b: f64 },
}

/// Whether the law of `log C` lives on a lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arithmeticity {
    Nonarithmetic,
    Arithmetic,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    MonteCarlo,
}

/// A finite moment functional together with how it was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentFunctionalValue {
    pub value: f64,
    pub method: Method,
    pub std_error: f64,
}

impl MomentFunctionalValue {
    pub fn closed(value: f64) -> Self {
        MomentFunctionalValue { value, method: Method::ClosedForm, std_error: 0.0 }
    }

    pub fn monte_carlo(value: f64, std_error: f64) -> Self {
        MomentFunctionalValue { value, method: Method::MonteCarlo, std_error }
    }
}

/// Finite / infinite / unknown trichotomy for moment functionals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Moment {
    Finite(MomentFunctionalValue),
    Infinite,
    Unknown,
}

impl Moment {
    pub fn value(&self) -> Option<f64> {
        match self {
            Moment::Finite(v) => Some(v.value),
            _ => None,
        }
    }

    pub fn finite(&self) -> Option<MomentFunctionalValue> {
        match self {
            Moment::Finite(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_closed_form(&self) -> bool {
        matches!(self, Moment::Finite(v) if v.method == Method::ClosedForm)
    }
}

/// `E[(sum C_i)^beta]` plus a flag raised when single draws dominate the sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SumMoment {
    pub moment: Moment,
    pub divergence_suspected: bool,
}

impl CountLaw {
    fn validate(&self) -> Result<(), ModelError> {
        match *self {
            CountLaw::Deterministic { .. } => Ok(()),
            CountLaw::TwoPoint { probs, .. } => {
                if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (probs[0] + probs[1] - 1.0).abs() > 1e-12 {
                    return Err(ModelError::InvalidParameter(format!(
                        "two-point probabilities {probs:?} must lie in [0,1] and sum to 1"
                    )));
                }
                Ok(())
            }
            CountLaw::Geometric { p } => {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(ModelError::InvalidParameter(format!("geometric p = {p} must be in (0, 1]")));
                }
                Ok(())
            }
            CountLaw::Poisson { lambda } => {
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(ModelError::InvalidParameter(format!("poisson lambda = {lambda} must be > 0")));
                }
                Ok(())
            }
        }
    }

    /// `P(N = k)`.
    pub fn pmf(&self, k: u32) -> f64 {
        match *self {
            CountLaw::Deterministic { value } => f64::from(u8::from(k == value)),
            CountLaw::TwoPoint { values, probs } => {
                let mut p = 0.0;
                if values[0] == k {
                    p += probs[0];
                }
                if values[1] == k {
                    p += probs[1];
                }
                p
            }
            CountLaw::Geometric { p } => (1.0 - p).powi(k as i32) * p,
            CountLaw::Poisson { lambda } => {
                (f64::from(k) * lambda.ln() - lambda - ln_gamma(f64::from(k) + 1.0)).exp()
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            CountLaw::Deterministic { value } => f64::from(value),
            CountLaw::TwoPoint { values, probs } => f64::from(values[0]) * probs[0] + f64::from(values[1]) * probs[1],
            CountLaw::Geometric { p } => (1.0 - p) / p,
            CountLaw::Poisson { lambda } => lambda,
        }
    }

    /// `E[N (N - 1)]`.
    pub fn second_factorial_moment(&self) -> f64 {
        match *self {
            CountLaw::Deterministic { value } => {
                let n = f64::from(value);
                n * (n - 1.0)
            }
            CountLaw::TwoPoint { values, probs } => values
                .iter()
                .zip(probs)
                .map(|(&v, p)| {
                    let n = f64::from(v);
                    n * (n - 1.0) * p
                })
                .sum(),
            CountLaw::Geometric { p } => 2.0 * (1.0 - p).powi(2) / (p * p),
            CountLaw::Poisson { lambda } => lambda * lambda,
        }
    }

    /// `E[N^x]` for real `x >= 0`; the unbounded families are summed until the
    /// remaining mass is negligible.
    pub fn power_moment(&self, x: f64) -> f64 {
        match *self {
            CountLaw::Deterministic { value } => f64::from(value).powf(x),
            CountLaw::TwoPoint { values, probs } => {
                values.iter().zip(probs).map(|(&v, p)| f64::from(v).powf(x) * p).sum()
            }
            CountLaw::Geometric { .. } | CountLaw::Poisson { .. } => {
                let mut total = 0.0;
                let mut mass = 0.0;
                for k in 1..100_000u32 {
                    let pk = self.pmf(k);
                    mass += pk;
                    let term = f64::from(k).powf(x) * pk;
                    total += term;
                    if k > 10 && term < 1e-18 * total.max(1e-300) && 1.0 - mass - self.pmf(0) < 1e-15 {
                        break;
                    }
                }
                total
            }
        }
    }

    pub fn max_support(&self) -> Option<u32> {
        match *self {
            CountLaw::Deterministic { value } => Some(value),
            CountLaw::TwoPoint { values, probs } => {
                let a = if probs[0] > 0.0 { values[0] } else { 0 };
                let b = if probs[1] > 0.0 { values[1] } else { 0 };
                Some(a.max(b))
            }
            _ => None,
        }
    }
}

impl WeightLaw {
    fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidParameter(msg));
        match *self {
            WeightLaw::Lognormal { mu, sigma2 } => {
                if !(sigma2 > 0.0 && sigma2.is_finite() && mu.is_finite()) {
                    return bad(format!("lognormal weight needs finite mu and sigma2 > 0 (got {mu}, {sigma2})"));
                }
            }
            WeightLaw::Uniform { b } => {
                if !(b > 0.0 && b.is_finite()) {
                    return bad(format!("uniform weight needs b > 0 (got {b})"));
                }
            }
            WeightLaw::Deterministic { value } => {
                if !(value >= 0.0 && value.is_finite()) {
                    return bad(format!("deterministic weight must be >= 0 (got {value})"));
                }
            }
            WeightLaw::BetaScaled { a, b, scale } => {
                if !(a > 0.0 && b > 0.0 && scale > 0.0 && scale.is_finite()) {
                    return bad(format!("beta-scaled weight needs a, b, scale > 0 (got {a}, {b}, {scale})"));
                }
            }
        }
        Ok(())
    }

    /// `E[C^theta]` for the unscaled law.
    pub fn power_moment(&self, theta: f64) -> f64 {
        match *self {
            WeightLaw::Lognormal { mu, sigma2 } => (theta * mu + 0.5 * theta * theta * sigma2).exp(),
            WeightLaw::Uniform { b } => b.powf(theta) / (theta + 1.0),
            WeightLaw::Deterministic { value } => {
                if theta == 0.0 {
                    1.0
                } else {
                    value.powf(theta)
                }
            }
            WeightLaw::BetaScaled { a, b, scale } => {
                scale.powf(theta) * (ln_gamma(a + theta) + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(a + b + theta)).exp()
            }
        }
    }

    /// `E[C^theta log C]` for the unscaled law, with `0^theta log 0 = 0`.
    pub fn log_power_moment(&self, theta: f64) -> f64 {
        match *self {
            WeightLaw::Lognormal { mu, sigma2 } => (mu + theta * sigma2) * self.power_moment(theta),
            WeightLaw::Uniform { b } => b.powf(theta) * (b.ln() - 1.0 / (theta + 1.0)) / (theta + 1.0),
            WeightLaw::Deterministic { value } => {
                if value == 0.0 {
                    0.0
                } else {
                    self.power_moment(theta) * value.ln()
                }
            }
            WeightLaw::BetaScaled { a, b, scale } => {
                self.power_moment(theta) * (scale.ln() + digamma(a + theta) - digamma(a + b + theta))
            }
        }
    }

    pub fn arithmeticity(&self) -> Arithmeticity {
        match self {
            WeightLaw::Deterministic { .. } => Arithmeticity::Arithmetic,
            _ => Arithmeticity::Nonarithmetic,
        }
    }

    pub fn prob_positive(&self) -> f64 {
        match *self {
            WeightLaw::Deterministic { value } => f64::from(u8::from(value > 0.0)),
            _ => 1.0,
        }
    }
}

impl MarkLaw {
    fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidParameter(msg));
        match *self {
            MarkLaw::Deterministic { value } => {
                if !(value >= 0.0 && value.is_finite()) {
                    return bad(format!("deterministic Q must be >= 0 (got {value})"));
                }
            }
            MarkLaw::Lognormal { mu, sigma2 } => {
                if !(sigma2 > 0.0 && sigma2.is_finite() && mu.is_finite()) {
                    return bad(format!("lognormal Q needs finite mu and sigma2 > 0 (got {mu}, {sigma2})"));
                }
            }
            MarkLaw::Uniform { b } => {
                if !(b > 0.0 && b.is_finite()) {
                    return bad(format!("uniform Q needs b > 0 (got {b})"));
                }
            }
        }
        Ok(())
    }

    /// `E[Q^beta]`.
    pub fn power_moment(&self, beta: f64) -> f64 {
        match *self {
            MarkLaw::Deterministic { value } => {
                if beta == 0.0 {
                    1.0
                } else {
                    value.powf(beta)
                }
            }
            MarkLaw::Lognormal { mu, sigma2 } => (beta * mu + 0.5 * beta * beta * sigma2).exp(),
            MarkLaw::Uniform { b } => b.powf(beta) / (beta + 1.0),
        }
    }

    pub fn prob_positive(&self) -> f64 {
        match *self {
            MarkLaw::Deterministic { value } => f64::from(u8::from(value > 0.0)),
            _ => 1.0,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, MarkLaw::Deterministic { .. })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            MarkLaw::Deterministic { value } => value,
            MarkLaw::Lognormal { mu, sigma2 } => {
                let z: f64 = rng.sample(StandardNormal);
                (mu + sigma2.sqrt() * z).exp()
            }
            MarkLaw::Uniform { b } => b * rng.gen::<f64>(),
        }
    }
}

#[derive(Clone, Debug)]
enum CountSampler {
    Fixed(u32),
    TwoPoint { low: u32, high: u32, p_low: f64 },
    Geometric(Geometric),
    Poisson(Poisson<f64>),
}

#[derive(Clone, Debug)]
enum WeightSampler {
    Lognormal(Normal<f64>),
    Uniform(f64),
    Fixed(f64),
    Beta(rand_distr::Beta<f64>, f64),
}

/// Validated law of the generic node vector.
#[derive(Clone, Debug, Serialize)]
pub struct VectorModel {
    pub n_law: CountLaw,
    pub c_law: WeightLaw,
    pub q_law: MarkLaw,
    pub c_scale: f64,
    #[serde(skip)]
    count_sampler: CountSampler,
    #[serde(skip)]
    weight_sampler: WeightSampler,
}

impl PartialEq for VectorModel {
    fn eq(&self, other: &Self) -> bool {
        self.n_law == other.n_law && self.c_law == other.c_law && self.q_law == other.q_law && self.c_scale == other.c_scale
    }
}

impl VectorModel {
    pub fn new(n_law: CountLaw, c_law: WeightLaw, q_law: MarkLaw, c_scale: f64) -> Result<Self, ModelError> {
        n_law.validate()?;
        c_law.validate()?;
        q_law.validate()?;
        if !(c_scale > 0.0 && c_scale.is_finite()) {
            return Err(ModelError::InvalidParameter(format!("c_scale = {c_scale} must be > 0")));
        }
        let count_sampler = match n_law {
            CountLaw::Deterministic { value } => CountSampler::Fixed(value),
            CountLaw::TwoPoint { values, probs } => {
                CountSampler::TwoPoint { low: values[0], high: values[1], p_low: probs[0] }
            }
            CountLaw::Geometric { p } => CountSampler::Geometric(
                Geometric::new(p).map_err(|e| ModelError::InvalidParameter(e.to_string()))?,
            ),
            CountLaw::Poisson { lambda } => CountSampler::Poisson(
                Poisson::new(lambda).map_err(|e| ModelError::InvalidParameter(e.to_string()))?,
            ),
        };
        let ln_scale = c_scale.ln();
        let weight_sampler = match c_law {
            WeightLaw::Lognormal { mu, sigma2 } => WeightSampler::Lognormal(
                Normal::new(mu + ln_scale, sigma2.sqrt()).map_err(|e| ModelError::InvalidParameter(e.to_string()))?,
            ),
            WeightLaw::Uniform { b } => WeightSampler::Uniform(b * c_scale),
            WeightLaw::Deterministic { value } => WeightSampler::Fixed(value * c_scale),
            WeightLaw::BetaScaled { a, b, scale } => WeightSampler::Beta(
                rand_distr::Beta::new(a, b).map_err(|e| ModelError::InvalidParameter(e.to_string()))?,
                scale * c_scale,
            ),
        };
        Ok(VectorModel { n_law, c_law, q_law, c_scale, count_sampler, weight_sampler })
    }

    /// Same tree law with every mark replaced by 1; the homogeneous martingale lives on it.
    pub fn with_unit_marks(&self) -> Self {
        let mut m = self.clone();
        m.q_law = MarkLaw::Deterministic { value: 1.0 };
        m
    }

    pub fn with_c_scale(&self, c_scale: f64) -> Result<Self, ModelError> {
        VectorModel::new(self.n_law.clone(), self.c_law.clone(), self.q_law.clone(), c_scale)
    }

    pub fn with_marks(&self, q_law: MarkLaw) -> Result<Self, ModelError> {
        VectorModel::new(self.n_law.clone(), self.c_law.clone(), q_law, self.c_scale)
    }

    /// `E[C^theta]` including `c_scale`.
    pub fn weight_moment(&self, theta: f64) -> f64 {
        self.c_scale.powf(theta) * self.c_law.power_moment(theta)
    }

    /// `E[C^theta log C]` including `c_scale`.
    pub fn weight_log_moment(&self, theta: f64) -> f64 {
        let s = self.c_scale;
        s.powf(theta) * (s.ln() * self.c_law.power_moment(theta) + self.c_law.log_power_moment(theta))
    }

    pub fn mean_offspring(&self) -> f64 {
        self.n_law.mean()
    }

    pub fn q_moment(&self, beta: f64) -> f64 {
        self.q_law.power_moment(beta)
    }

    pub fn arithmeticity(&self) -> Arithmeticity {
        self.c_law.arithmeticity()
    }

    /// `P(N = 0)`.
    pub fn prob_leaf(&self) -> f64 {
        self.n_law.pmf(0)
    }

    /// `P(#{i <= N : C_i > 0} >= 2)`.
    pub fn prob_effective_branching(&self) -> f64 {
        let p = self.c_law.prob_positive();
        if p == 0.0 {
            return 0.0;
        }
        // 1 - P(N~ = 0) - P(N~ = 1), with N~ | N ~ Binomial(N, p)
        let q = 1.0 - p;
        let mut below_two = 0.0;
        let mut mass = 0.0;
        let limit = self.n_law.max_support().unwrap_or(100_000);
        for k in 0..=limit {
            let pk = self.n_law.pmf(k);
            mass += pk;
            let kf = f64::from(k);
            below_two += pk * (q.powf(kf) + if k >= 1 { kf * p * q.powf(kf - 1.0) } else { 0.0 });
            if 1.0 - mass < 1e-16 && k > 2 {
                break;
            }
        }
        (1.0 - below_two).max(0.0)
    }

    #[inline]
    pub fn sample_q<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.q_law.sample(rng)
    }

    #[inline]
    pub fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match &self.count_sampler {
            CountSampler::Fixed(n) => *n,
            CountSampler::TwoPoint { low, high, p_low } => {
                if rng.gen::<f64>() < *p_low {
                    *low
                } else {
                    *high
                }
            }
            CountSampler::Geometric(g) => g.sample(rng).min(u64::from(u32::MAX)) as u32,
            CountSampler::Poisson(p) => p.sample(rng) as u32,
        }
    }

    #[inline]
    pub fn sample_c<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.weight_sampler {
            WeightSampler::Lognormal(normal) => normal.sample(rng).exp(),
            WeightSampler::Uniform(b) => b * rng.gen::<f64>(),
            WeightSampler::Fixed(c) => *c,
            WeightSampler::Beta(beta, scale) => scale * beta.sample(rng),
        }
    }
}

/// One realisation of the node vector.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeVector {
    pub q: f64,
    pub weights: Vec<f64>,
}

impl NodeVector {
    pub fn n(&self) -> usize {
        self.weights.len()
    }
}

/// Config-file form of a model. A preset supplies defaults that explicit
/// laws override.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<CountLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<WeightLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<MarkLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<String>,
}

/// Builds and validates a model; `intended` rejects zero marks for the
/// nonhomogeneous recursions.
pub fn make_model(spec: &ModelSpec, intended: Option<RecursionKind>) -> Result<VectorModel, ModelError> {
    if let Some(coupling) = &spec.coupling {
        if coupling != "iid-independent" {
            return Err(ModelError::UnknownFamily(format!("coupling `{coupling}`")));
        }
    }
    let base = match &spec.preset {
        Some(name) => Some(crate::presets::by_name(name).ok_or_else(|| ModelError::UnknownFamily(name.clone()))?),
        None => None,
    };
    let n = spec.n.clone().or_else(|| base.as_ref().map(|m| m.n_law.clone())).ok_or(ModelError::Missing("n"))?;
    let c = spec.c.clone().or_else(|| base.as_ref().map(|m| m.c_law.clone())).ok_or(ModelError::Missing("c"))?;
    let q = spec.q.clone().or_else(|| base.as_ref().map(|m| m.q_law.clone())).ok_or(ModelError::Missing("q"))?;
    let c_scale = spec.c_scale.or_else(|| base.as_ref().map(|m| m.c_scale)).unwrap_or(1.0);
    let model = VectorModel::new(n, c, q, c_scale)?;
    if let Some(kind) = intended {
        if kind.is_nonhomogeneous() && model.q_law.prob_positive() == 0.0 {
            return Err(ModelError::ZeroQ(kind));
        }
    }
    Ok(model)
}

/// Draws `(q, n, c_1..c_n)` in that order from one stream.
pub fn sample_vector<R: Rng + ?Sized>(model: &VectorModel, rng: &mut R) -> NodeVector {
    let q = model.sample_q(rng);
    let n = model.sample_n(rng);
    let weights = (0..n).map(|_| model.sample_c(rng)).collect();
    NodeVector { q, weights }
}

/// True when a moment functional is below 1 by more than rounding noise.
pub fn contracts(rho: f64) -> bool {
    rho < 1.0 - 1e-12
}

/// `phi(theta) = E[sum C_i^theta] = E[N] E[C^theta]`.
pub fn phi(model: &VectorModel, theta: f64) -> Moment {
    if theta == 0.0 {
        return Moment::Finite(MomentFunctionalValue::closed(model.mean_offspring()));
    }
    let v = model.mean_offspring() * model.weight_moment(theta);
    if v.is_finite() {
        Moment::Finite(MomentFunctionalValue::closed(v))
    } else {
        Moment::Infinite
    }
}

/// `phi'(theta) = E[sum C_i^theta log C_i]`.
pub fn phi_prime(model: &VectorModel, theta: f64) -> Moment {
    let v = model.mean_offspring() * model.weight_log_moment(theta);
    if v.is_finite() {
        Moment::Finite(MomentFunctionalValue::closed(v))
    } else {
        Moment::Infinite
    }
}

/// Monte Carlo estimate of `phi(theta)` from sampled node vectors.
pub fn phi_monte_carlo(model: &VectorModel, theta: f64, reps: u64, key: StreamKey) -> Moment {
    let mut acc = MeanAccumulator::default();
    for i in 0..reps {
        let mut rng = key.child(i).rng();
        let n = model.sample_n(&mut rng);
        let s: f64 = (0..n).map(|_| model.sample_c(&mut rng).powf(theta)).sum();
        acc.push(s);
    }
    Moment::Finite(MomentFunctionalValue::monte_carlo(acc.mean(), acc.std_error()))
}

/// `E[(sum C_i)^beta]`: closed form when `N <= 1` a.s. or the vector is
/// deterministic, Monte Carlo otherwise.
pub fn sum_moment(model: &VectorModel, beta: f64, reps: u64, key: StreamKey) -> SumMoment {
    let max_n = model.n_law.max_support();
    if max_n.is_some_and(|m| m <= 1) {
        let p_one = model.n_law.pmf(1);
        let v = p_one * model.weight_moment(beta);
        return SumMoment { moment: Moment::Finite(MomentFunctionalValue::closed(v)), divergence_suspected: false };
    }
    if let (CountLaw::Deterministic { value }, WeightLaw::Deterministic { value: c }) = (&model.n_law, &model.c_law) {
        let v = (f64::from(*value) * c * model.c_scale).powf(beta);
        return SumMoment { moment: Moment::Finite(MomentFunctionalValue::closed(v)), divergence_suspected: false };
    }
    let reps = reps.max(1);
    let mut acc = MeanAccumulator::default();
    let mut largest: f64 = 0.0;
    for i in 0..reps {
        let mut rng = key.child(i).rng();
        let n = model.sample_n(&mut rng);
        let s: f64 = (0..n).map(|_| model.sample_c(&mut rng)).sum();
        let term = s.powf(beta);
        largest = largest.max(term);
        acc.push(term);
    }
    let total = acc.mean() * acc.count() as f64;
    let suspected = reps >= 100 && total > 0.0 && largest > 0.1 * total;
    SumMoment {
        moment: Moment::Finite(MomentFunctionalValue::monte_carlo(acc.mean(), acc.std_error())),
        divergence_suspected: suspected,
    }
}
