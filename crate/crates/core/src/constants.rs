//! The tail constant `H` by closed form, by its general Monte Carlo
//! expression, and through its upper and lower bounds.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cramer::CramerSolution;
use crate::engine::parallel_map;
use crate::model::{phi, phi_prime, sum_moment, Method, RecursionKind, VectorModel};
use crate::moments::{exact_mean_r, SUM_MOMENT_REPS};
use crate::stats::{grouped_jackknife_mean, Estimate};
use crate::stream::StreamKey;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstantError {
    #[error("no closed form for alpha = {alpha} with the {kind} recursion")]
    Unsupported { alpha: f64, kind: RecursionKind },
    #[error("alpha = {alpha} is not a root: phi(alpha) = {phi}")]
    NotRoot { alpha: f64, phi: f64 },
    #[error("E[R] is infinite (rho >= 1), the alpha = 2 closed form does not apply")]
    InfiniteMean,
    #[error("need a nonempty batch of R values and reps >= 1")]
    EmptyInput,
}

/// A component expectation together with how it was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub value: f64,
    pub method: Method,
}

impl Component {
    fn closed(name: &str, value: f64) -> Self {
        Component { name: name.into(), value, method: Method::ClosedForm }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormH {
    pub value: f64,
    pub components: Vec<Component>,
}

fn check_root(model: &VectorModel, alpha: f64) -> Result<f64, ConstantError> {
    let p = phi(model, alpha).value().unwrap_or(f64::INFINITY);
    if (p - 1.0).abs() > 1e-8 {
        return Err(ConstantError::NotRoot { alpha, phi: p });
    }
    Ok(phi_prime(model, alpha).value().unwrap_or(f64::NAN))
}

/// Closed-form `H` for integer `alpha` in {1, 2}, with iid weights independent of `N` and `Q`.
pub fn h_closed_form(model: &VectorModel, alpha: u32, kind: RecursionKind) -> Result<ClosedFormH, ConstantError> {
    let a = f64::from(alpha);
    let unsupported = Err(ConstantError::Unsupported { alpha: a, kind });
    let ec = model.weight_moment(1.0);
    let pairs = 0.5 * model.n_law.second_factorial_moment() * ec * ec;
    match (kind, alpha) {
        (RecursionKind::Linear, 1) => {
            let mu = check_root(model, a)?;
            let q = model.q_moment(1.0);
            Ok(ClosedFormH {
                value: q / mu,
                components: vec![Component::closed("E[Q]", q), Component::closed("E[sum C log C]", mu)],
            })
        }
        (RecursionKind::Linear, 2) => {
            let mu = check_root(model, a)?;
            let r = exact_mean_r(model).value().ok_or(ConstantError::InfiniteMean)?;
            let q1 = model.q_moment(1.0);
            let q2 = model.q_moment(2.0);
            let q_sum_c = q1 * model.mean_offspring() * ec;
            let value = (q2 + 2.0 * r * q_sum_c + 2.0 * r * r * pairs) / (2.0 * mu);
            Ok(ClosedFormH {
                value,
                components: vec![
                    Component::closed("E[Q^2]", q2),
                    Component::closed("E[R]", r),
                    Component::closed("E[Q sum C]", q_sum_c),
                    Component::closed("E[sum_{i<j} C_i C_j]", pairs),
                    Component::closed("E[sum C^2 log C]", mu),
                ],
            })
        }
        (RecursionKind::Homogeneous, 2) => {
            let mu = check_root(model, a)?;
            Ok(ClosedFormH {
                value: pairs / mu,
                components: vec![
                    Component::closed("E[sum_{i<j} C_i C_j]", pairs),
                    Component::closed("E[sum C^2 log C]", mu),
                ],
            })
        }
        _ => unsupported,
    }
}

/// Integrand of the general expression for `H` before division by `alpha mu`.
fn integrand(kind: RecursionKind, alpha: f64, q: f64, cr: &[f64]) -> f64 {
    let sum_pow: f64 = cr.iter().map(|x| x.powf(alpha)).sum();
    match kind {
        RecursionKind::Linear => (cr.iter().sum::<f64>() + q).powf(alpha) - sum_pow,
        RecursionKind::Homogeneous => cr.iter().sum::<f64>().powf(alpha) - sum_pow,
        RecursionKind::Max => {
            let m = cr.iter().copied().fold(0.0, f64::max);
            m.powf(alpha).max(q.powf(alpha)) - sum_pow
        }
        RecursionKind::MaxPlus => f64::NAN,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HMonteCarlo {
    pub value: f64,
    pub std_error: f64,
    pub reps: u64,
    pub batch_size: usize,
    /// Raised for `alpha >= 2` when single draws carry a visible share of the integrand mass.
    pub heavy_tail_flag: bool,
}

impl HMonteCarlo {
    pub fn estimate(&self) -> Estimate {
        Estimate::new(self.value, self.std_error)
    }
}

/// `E[integrand] / (alpha mu)` with `R_i` resampled from `r_values`; jackknife SE over 100 groups.
pub fn h_mc_general(
    model: &VectorModel,
    sol: &CramerSolution,
    kind: RecursionKind,
    r_values: &[f64],
    reps: u64,
    key: StreamKey,
    workers: usize,
) -> Result<HMonteCarlo, ConstantError> {
    if kind == RecursionKind::MaxPlus {
        return Err(ConstantError::Unsupported { alpha: sol.alpha, kind });
    }
    if r_values.is_empty() || reps == 0 {
        return Err(ConstantError::EmptyInput);
    }
    let alpha = sol.alpha;
    let terms: Vec<f64> = parallel_map(reps, workers, |i| {
        let mut rng = key.child(i).rng();
        let q = if kind == RecursionKind::Homogeneous { 0.0 } else { model.sample_q(&mut rng) };
        let n = model.sample_n(&mut rng);
        let mut cr = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let c = model.sample_c(&mut rng);
            let r = r_values[rng.gen_range(0..r_values.len())];
            cr.push(c * r);
        }
        integrand(kind, alpha, q, &cr)
    });
    let est = grouped_jackknife_mean(&terms, 100);
    let denom = alpha * sol.mu;
    let abs_total: f64 = terms.iter().map(|t| t.abs()).sum();
    let largest = terms.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    Ok(HMonteCarlo {
        value: est.value / denom,
        std_error: est.std_error / denom,
        reps,
        batch_size: r_values.len(),
        heavy_tail_flag: alpha >= 2.0 && abs_total > 0.0 && largest > 0.05 * abs_total,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HBounds {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub components: Vec<Component>,
}

/// Applicable bounds on `H`. For the nonhomogeneous linear recursion `E[Q^alpha]/(alpha mu)` is a
/// lower bound when `alpha >= 1` and an upper bound when `alpha <= 1`. For the homogeneous
/// recursion with `alpha > 1`, `r_moment = E[R^(p-1)]` with `p = ceil(alpha)` gives the upper bound.
pub fn h_bounds(model: &VectorModel, sol: &CramerSolution, kind: RecursionKind, r_moment: Option<f64>) -> HBounds {
    let alpha = sol.alpha;
    let denom = alpha * sol.mu;
    let near_one = (alpha - 1.0).abs() <= 1e-9;
    match kind {
        RecursionKind::Linear => {
            let q = model.q_moment(alpha);
            let b = q / denom;
            HBounds {
                lower: (alpha >= 1.0 || near_one).then_some(b),
                upper: (alpha <= 1.0 || near_one).then_some(b),
                components: vec![Component::closed("E[Q^alpha]", q), Component::closed("alpha mu", denom)],
            }
        }
        RecursionKind::Homogeneous if alpha > 1.0 => {
            let Some(rm) = r_moment else {
                return HBounds::default();
            };
            let p = alpha.ceil();
            let s = sum_moment(model, alpha, SUM_MOMENT_REPS, StreamKey::from_raw(0x5EED_0F5C_1A55_0002)).moment;
            let Some(s) = s.finite() else {
                return HBounds::default();
            };
            let upper = rm.powf(alpha / (p - 1.0)) * s.value / denom;
            HBounds {
                lower: None,
                upper: Some(upper),
                components: vec![
                    Component { name: format!("E[R^{}]", p - 1.0), value: rm, method: Method::MonteCarlo },
                    Component { name: "E[(sum C)^alpha]".into(), value: s.value, method: s.method },
                    Component::closed("alpha mu", denom),
                ],
            }
        }
        _ => HBounds::default(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HReport {
    pub kind: RecursionKind,
    pub alpha: f64,
    pub mu: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed_form: Option<ClosedFormH>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed_form_note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_general: Option<HMonteCarlo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_general_note: Option<String>,
    pub bounds: HBounds,
}

impl HReport {
    /// `lower <= mc + 3 SE` and `mc - 3 SE <= upper` wherever both sides exist.
    pub fn sandwich_holds(&self) -> bool {
        let Some(mc) = &self.mc_general else {
            return true;
        };
        let lo_ok = self.bounds.lower.is_none_or(|l| l <= mc.value + 3.0 * mc.std_error);
        let hi_ok = self.bounds.upper.is_none_or(|u| mc.value - 3.0 * mc.std_error <= u);
        lo_ok && hi_ok
    }
}

/// Every applicable route for `H` on one model and batch of `R` values.
pub fn h_report(
    model: &VectorModel,
    sol: &CramerSolution,
    kind: RecursionKind,
    r_values: &[f64],
    reps: u64,
    key: StreamKey,
    workers: usize,
) -> HReport {
    let rounded = sol.alpha.round();
    let (closed_form, closed_form_note) = if (sol.alpha - rounded).abs() <= 1e-8 && rounded >= 1.0 {
        match h_closed_form(model, rounded as u32, kind) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some(format!("alpha = {} is not an integer", sol.alpha)))
    };
    let (mc_general, mc_general_note) = match h_mc_general(model, sol, kind, r_values, reps, key, workers) {
        Ok(m) => (Some(m), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let r_moment = if kind == RecursionKind::Homogeneous && sol.alpha > 1.0 && !r_values.is_empty() {
        let p = sol.alpha.ceil();
        Some(r_values.iter().map(|r| r.powf(p - 1.0)).sum::<f64>() / r_values.len() as f64)
    } else {
        None
    };
    HReport {
        kind,
        alpha: sol.alpha,
        mu: sol.mu,
        closed_form,
        closed_form_note,
        mc_general,
        mc_general_note,
        bounds: h_bounds(model, sol, kind, r_moment),
    }
}
