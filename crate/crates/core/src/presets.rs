//! Calibrated reference models.

use crate::model::{CountLaw, MarkLaw, VectorModel, WeightLaw};

/// Critical homogeneous model: `E[N] = 1.3`, `phi(1) = phi(2) = 1`, `Q = 0`.
pub fn model_a() -> VectorModel {
    let l = 1.3f64.ln();
    VectorModel::new(
        CountLaw::TwoPoint { values: [1, 2], probs: [0.7, 0.3] },
        WeightLaw::Lognormal { mu: -1.5 * l, sigma2: l },
        MarkLaw::Deterministic { value: 0.0 },
        1.0,
    )
    .expect("model A parameters are valid")
}

/// Perpetuity-like model with subcritical branching and `alpha = 1`.
pub fn model_b() -> VectorModel {
    VectorModel::new(
        CountLaw::TwoPoint { values: [0, 1], probs: [0.5, 0.5] },
        WeightLaw::Lognormal { mu: std::f64::consts::LN_2 - 0.5, sigma2: 1.0 },
        MarkLaw::Deterministic { value: 1.0 },
        1.0,
    )
    .expect("model B parameters are valid")
}

/// Model B with weights scaled by 0.9, so `E[sum C] = 0.9`.
pub fn model_b_prime() -> VectorModel {
    model_b().with_c_scale(0.9).expect("positive scale")
}

/// `N = 3`, `C ~ Uniform(0, 0.8)`.
pub fn uniform_three() -> VectorModel {
    VectorModel::new(
        CountLaw::Deterministic { value: 3 },
        WeightLaw::Uniform { b: 0.8 },
        MarkLaw::Deterministic { value: 1.0 },
        1.0,
    )
    .expect("uniform model parameters are valid")
}

/// Contractive branching model with bounded weights and marks; every
/// moment of order up to 2 contracts.
pub fn model_c() -> VectorModel {
    VectorModel::new(
        CountLaw::TwoPoint { values: [1, 2], probs: [0.5, 0.5] },
        WeightLaw::Uniform { b: 0.9 },
        MarkLaw::Uniform { b: 2.0 },
        1.0,
    )
    .expect("model C parameters are valid")
}

pub const NAMES: [&str; 6] = ["A", "B", "B-prime", "B-max", "C", "uniform"];

/// Looks a preset up by name. `B-max` is Model B; the recursion kind is chosen separately.
pub fn by_name(name: &str) -> Option<VectorModel> {
    match name {
        "A" | "model-a" => Some(model_a()),
        "B" | "model-b" | "B-max" | "model-b-max" => Some(model_b()),
        "B-prime" | "model-b-prime" | "B'" => Some(model_b_prime()),
        "C" | "model-c" => Some(model_c()),
        "uniform" | "uniform-three" => Some(uniform_three()),
        _ => None,
    }
}
