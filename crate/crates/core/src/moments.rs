//! Exact moment identities and the constructive moment bounds for `W_n`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{run_batch, BatchKind, BatchRequest, Bound, Depth, EngineError};
use crate::model::{contracts, phi, sum_moment, MomentFunctionalValue, VectorModel};
use crate::stats::{grouped_jackknife_mean, Estimate, MeanAccumulator};
use crate::stream::StreamKey;
use crate::tails;

/// Replications used for Monte Carlo `E[(sum C)^beta]` inside the constants.
pub const SUM_MOMENT_REPS: u64 = 200_000;
const SUM_MOMENT_KEY: StreamKey = StreamKey::from_raw(0x5EED_0F5C_1A55_0001);

/// `E[W_n] = E[Q] rho^n`.
pub fn mean_wn_exact(model: &VectorModel, n: u32) -> f64 {
    let rho = phi(model, 1.0).value().unwrap_or(f64::INFINITY);
    model.q_moment(1.0) * rho.powi(n as i32)
}

/// `E[R] = E[Q] / (1 - rho)` for `rho < 1`.
pub fn exact_mean_r(model: &VectorModel) -> Bound {
    match phi(model, 1.0).value() {
        Some(rho) if contracts(rho) => Bound::Finite(model.q_moment(1.0) / (1.0 - rho)),
        _ => Bound::Infinite,
    }
}

/// Constant `K_beta` with `E[W_n^beta] <= K_beta (rho v rho_beta)^n` for `beta > 1`,
/// built by induction over `p = ceil(beta)`; `None` when the induction does not close.
///
/// With `eta = rho v rho_beta`, `gamma = beta / (p - 1)` and
/// `K = E[(sum C)^beta] K_{p-1}^gamma`, the step is
/// `K_beta = E[Q^beta] + K / (eta (1 - eta^(gamma - 1)))`, starting from `K_1 = E[Q]`.
pub fn k_beta(model: &VectorModel, beta: f64) -> Option<MomentFunctionalValue> {
    if beta <= 1.0 {
        let v = model.q_moment(beta);
        return v.is_finite().then(|| MomentFunctionalValue::closed(v));
    }
    let rho = phi(model, 1.0).value()?;
    let rho_beta = phi(model, beta).value()?;
    let eta = rho.max(rho_beta);
    if !contracts(eta) {
        return None;
    }
    let p = beta.ceil();
    let prev = k_beta(model, p - 1.0)?;
    let gamma = beta / (p - 1.0);
    let s = sum_moment(model, beta, SUM_MOMENT_REPS, SUM_MOMENT_KEY).moment.finite()?;
    let k = s.value * prev.value.powf(gamma);
    let q = model.q_moment(beta);
    let value = q + k / (eta * (1.0 - eta.powf(gamma - 1.0)));
    if !value.is_finite() {
        return None;
    }
    let method = if s.method == crate::model::Method::ClosedForm && prev.method == crate::model::Method::ClosedForm {
        MomentFunctionalValue::closed(value)
    } else {
        MomentFunctionalValue::monte_carlo(value, 0.0)
    };
    Some(method)
}

/// Analytic bound on `E[W_n^beta]`; `scale` multiplies the constant and is 1 outside self-tests.
pub fn wn_moment_bound_scaled(model: &VectorModel, beta: f64, n: u32, scale: f64) -> Bound {
    let Some(rho_beta) = phi(model, beta).value() else {
        return Bound::Infinite;
    };
    if beta <= 1.0 {
        let q = model.q_moment(beta);
        if !q.is_finite() {
            return Bound::Infinite;
        }
        return Bound::Finite(scale * q * rho_beta.powi(n as i32));
    }
    let rho = phi(model, 1.0).value().unwrap_or(f64::INFINITY);
    match k_beta(model, beta) {
        Some(k) => Bound::Finite(scale * k.value * rho.max(rho_beta).powi(n as i32)),
        None => Bound::Infinite,
    }
}

pub fn wn_moment_bound(model: &VectorModel, beta: f64, n: u32) -> Bound {
    wn_moment_bound_scaled(model, beta, n, 1.0)
}

/// Why a grid cell was not evaluated, if it was not.
pub fn wn_bound_precondition(model: &VectorModel, beta: f64) -> Option<String> {
    let q = model.q_moment(beta);
    if !q.is_finite() {
        return Some(format!("E[Q^{beta}] is infinite"));
    }
    let rho_beta = phi(model, beta).value();
    if rho_beta.is_none() {
        return Some(format!("rho_{beta} is infinite"));
    }
    if beta > 1.0 {
        let rho = phi(model, 1.0).value().unwrap_or(f64::INFINITY);
        let eta = rho.max(rho_beta.unwrap_or(f64::INFINITY));
        if !contracts(eta) {
            return Some(format!("rho v rho_{beta} = {eta} >= 1"));
        }
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentTarget {
    Wn,
    R,
    RN,
    SumInequality,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub target: MomentTarget,
    pub beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    pub estimate: Estimate,
    pub bound: f64,
    pub bound_name: String,
    pub holds: bool,
}

impl MomentReport {
    fn new(target: MomentTarget, beta: f64, n: Option<u32>, estimate: Estimate, bound: f64, name: &str) -> Self {
        let holds = estimate.value <= bound + 3.0 * estimate.std_error;
        MomentReport { target, beta, n, estimate, bound, bound_name: name.to_string(), holds }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum MomentCell {
    Checked(MomentReport),
    PreconditionUnmet { beta: f64, n: u32, reason: String },
}

impl MomentCell {
    pub fn holds(&self) -> Option<bool> {
        match self {
            MomentCell::Checked(r) => Some(r.holds),
            MomentCell::PreconditionUnmet { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GridSettings {
    pub reps: u64,
    pub seed: u64,
    pub workers: usize,
    pub budget: u64,
    /// Multiplier on every bound; anything other than 1 is a harness self-test.
    pub bound_scale: f64,
}

/// Checks `E[W_n^beta] <= bound + 3 SE` on every `(n, beta)` cell, one batch per level.
pub fn wn_moment_grid(
    model: &VectorModel,
    levels: &[u32],
    betas: &[f64],
    settings: GridSettings,
) -> Result<Vec<MomentCell>, EngineError> {
    let mut cells = Vec::new();
    for &n in levels {
        let needed: Vec<f64> = betas.iter().copied().filter(|&b| wn_bound_precondition(model, b).is_none()).collect();
        let batch = if needed.is_empty() {
            None
        } else {
            let req = BatchRequest::new(model, BatchKind::LevelWeight, Depth::Levels(n), settings.reps, settings.seed.wrapping_add(u64::from(n)))
                .workers(settings.workers)
                .budget(settings.budget);
            Some(run_batch(&req)?)
        };
        for &beta in betas {
            if let Some(reason) = wn_bound_precondition(model, beta) {
                cells.push(MomentCell::PreconditionUnmet { beta, n, reason });
                continue;
            }
            let values = &batch.as_ref().expect("batch exists when a cell is checked").values;
            let powered: Vec<f64> = values.iter().map(|w| w.powf(beta)).collect();
            let est = grouped_jackknife_mean(&powered, 100);
            let bound = wn_moment_bound_scaled(model, beta, n, settings.bound_scale).value().unwrap_or(f64::INFINITY);
            let name = if beta <= 1.0 { "E[Q^b] rho_b^n" } else { "K_b (rho v rho_b)^n" };
            cells.push(MomentCell::Checked(MomentReport::new(MomentTarget::Wn, beta, Some(n), est, bound, name)));
        }
    }
    Ok(cells)
}

/// Monte Carlo check of
/// `E[(sum C_i Y_i)^beta - sum (C_i Y_i)^beta] <= (E[Y^(p-1)])^(beta/(p-1)) E[(sum C_i)^beta]`
/// with `Y` resampled from `y`.
pub fn verify_sum_inequality(model: &VectorModel, beta: f64, y: &[f64], reps: u64, key: StreamKey) -> MomentReport {
    assert!(beta > 1.0 && !y.is_empty());
    let p = beta.ceil();
    let mut lhs = MeanAccumulator::default();
    let mut cy = Vec::new();
    for i in 0..reps {
        let mut rng = key.child(i).rng();
        let n = model.sample_n(&mut rng);
        cy.clear();
        for _ in 0..n {
            let c = model.sample_c(&mut rng);
            let yi = y[rng.gen_range(0..y.len())];
            cy.push(c * yi);
        }
        let s: f64 = cy.iter().sum();
        let t: f64 = cy.iter().map(|x| x.powf(beta)).sum();
        lhs.push(s.powf(beta) - t);
    }
    let y_moment = y.iter().map(|v| v.powf(p - 1.0)).sum::<f64>() / y.len() as f64;
    let s = sum_moment(model, beta, reps, key.derive("sum-moment")).moment.finite();
    let (sv, sse) = s.map(|m| (m.value, m.std_error)).unwrap_or((f64::INFINITY, 0.0));
    let scale = y_moment.powf(beta / (p - 1.0));
    let rhs = scale * sv;
    let est = lhs.estimate();
    let combined = est.std_error.hypot(scale * sse);
    let holds = est.value <= rhs + 3.0 * combined;
    MomentReport {
        target: MomentTarget::SumInequality,
        beta,
        n: None,
        estimate: est,
        bound: rhs,
        bound_name: "(E[Y^(p-1)])^(b/(p-1)) E[(sum C)^b]".into(),
        holds,
    }
}

/// Empirical `beta`-moment with jackknife SE.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Set when `beta` is not clearly below the Hill index of the data.
    pub unreliable: bool,
    pub alpha_hat: Option<f64>,
}

pub fn estimate_moment(values: &[f64], beta: f64) -> MomentEstimate {
    let powered: Vec<f64> = values.iter().map(|v| v.powf(beta)).collect();
    let est = grouped_jackknife_mean(&powered, 100);
    let hill = if values.len() >= 3 {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let k = tails::default_k(sorted.len());
        tails::hill_sorted(&sorted, k).ok()
    } else {
        None
    };
    let unreliable = hill.is_some_and(|h| beta >= h.value - 2.0 * h.std_error);
    MomentEstimate { value: est.value, std_error: est.std_error, unreliable, alpha_hat: hill.map(|h| h.value) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CountLaw, MarkLaw, WeightLaw};
    use crate::presets;

    fn det(n: u32, c: f64, q: f64) -> VectorModel {
        VectorModel::new(
            CountLaw::Deterministic { value: n },
            WeightLaw::Deterministic { value: c },
            MarkLaw::Deterministic { value: q },
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn mean_identities() {
        assert!((mean_wn_exact(&presets::model_b_prime(), 3) - 0.729).abs() < 1e-12);
        assert!((mean_wn_exact(&presets::model_b(), 7) - 1.0).abs() < 1e-12);
        assert!((exact_mean_r(&presets::model_b_prime()).value().unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(exact_mean_r(&presets::model_b()), Bound::Infinite);
        assert_eq!(exact_mean_r(&det(1, 0.5, 2.0)), Bound::Finite(4.0));
    }

    #[test]
    fn k2_hand_computation() {
        let m = det(1, 0.5, 1.0);
        let k = k_beta(&m, 2.0).unwrap();
        assert!((k.value - 2.0).abs() < 1e-14);
        assert!((wn_moment_bound(&m, 2.0, 5).value().unwrap() - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn beta_one_bound_is_the_mean() {
        let m = presets::model_b_prime();
        for n in 0..6 {
            let b = wn_moment_bound(&m, 1.0, n).value().unwrap();
            assert!((b - mean_wn_exact(&m, n)).abs() < 1e-14);
        }
    }

    #[test]
    fn bound_decays_at_eta() {
        let m = presets::model_c();
        let eta = phi(&m, 1.0).value().unwrap().max(phi(&m, 1.5).value().unwrap());
        let b3 = wn_moment_bound(&m, 1.5, 3).value().unwrap();
        let b4 = wn_moment_bound(&m, 1.5, 4).value().unwrap();
        assert!((b4 / b3 - eta).abs() < 1e-12);
    }

    #[test]
    fn noncontractive_is_flagged() {
        assert!(k_beta(&presets::model_b_prime(), 1.5).is_none());
        assert_eq!(wn_moment_bound(&presets::model_a(), 2.0, 3), Bound::Infinite);
        assert!(wn_bound_precondition(&presets::model_b_prime(), 2.0).is_some());
        assert!(wn_bound_precondition(&presets::model_c(), 2.0).is_none());
    }

    #[test]
    fn sum_inequality_hand_cases() {
        let y = [1.0; 10];
        let r = verify_sum_inequality(&det(2, 0.5, 1.0), 2.0, &y, 100, StreamKey::from_raw(1));
        assert!((r.estimate.value - 0.5).abs() < 1e-15);
        assert!((r.bound - 1.0).abs() < 1e-15);
        assert!(r.holds);
        let r = verify_sum_inequality(&presets::model_b(), 1.5, &[0.5, 2.0, 3.0], 1000, StreamKey::from_raw(2));
        assert!(r.estimate.value.abs() < 1e-12);
        assert!(r.holds);
    }

    #[test]
    fn constant_batch_moment() {
        let e = estimate_moment(&[1.0; 500], 2.7);
        assert_eq!(e.value, 1.0);
        assert!(e.std_error.abs() < 1e-12);
        assert!(!e.unreliable);
    }
}
