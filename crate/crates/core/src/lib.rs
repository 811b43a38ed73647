//! Simulation and tail analysis for distributional fixed-point equations on
//! weighted branching trees.

pub mod constants;
pub mod cramer;
pub mod engine;
pub mod io;
pub mod model;
pub mod moments;
pub mod presets;
pub mod renewal;
pub mod stats;
pub mod stream;
pub mod tails;

pub use cramer::{check_conditions, solve_alpha, CramerSolution};
pub use engine::{run_batch, BatchKind, BatchRequest, Depth, SampleBatch};
pub use model::{make_model, ModelSpec, Moment, RecursionKind, VectorModel};
pub use stream::StreamKey;
