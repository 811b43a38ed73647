//! Depth-recursive sampling of the tree functionals.
//!
//! Trees are never materialised. A work stack holds `(key, Pi, level, prefix)`
//! frames; every node draws its vector from its own keyed stream in the order
//! `q, N, C_1..C_N`, and nodes on the boundary level draw only their mark.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{MarkLaw, RecursionKind, VectorModel};
use crate::stream::StreamKey;

pub const DEFAULT_BUDGET: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Depth {
    Levels(u32),
    /// Recurse until every leaf has `N = 0`.
    Exact,
}

impl Depth {
    pub fn max_level(self) -> Option<u32> {
        match self {
            Depth::Levels(n) => Some(n),
            Depth::Exact => None,
        }
    }
}

impl std::fmt::Display for Depth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Depth::Levels(n) => write!(f, "{n}"),
            Depth::Exact => f.write_str("exact"),
        }
    }
}

impl std::str::FromStr for Depth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "exact" {
            return Ok(Depth::Exact);
        }
        s.parse::<u32>().map(Depth::Levels).map_err(|_| format!("depth must be an integer or `exact`, got `{s}`"))
    }
}

impl Serialize for Depth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Depth::Levels(n) => s.serialize_u32(*n),
            Depth::Exact => s.serialize_str("exact"),
        }
    }
}

impl<'de> Deserialize<'de> for Depth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u32),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(Depth::Levels(n)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// What a batch samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchKind {
    /// `R^(n) = sum_{k <= n} W_k`
    Linear,
    /// `W_n` with unit marks.
    HomogeneousMartingale,
    /// `max_{k <= n} V_k`
    Max,
    /// Largest path sum of `Q Pi` from the root.
    MaxPlus,
    /// `W_n` with the model's own marks.
    LevelWeight,
    /// `R^(n-1) + W_n(R_0)`
    IterateLinear,
    /// `R^(n-1) v V_n(R_0)`
    IterateMax,
}

impl BatchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BatchKind::Linear => "linear",
            BatchKind::HomogeneousMartingale => "homogeneous-martingale",
            BatchKind::Max => "max",
            BatchKind::MaxPlus => "max-plus",
            BatchKind::LevelWeight => "level-weight",
            BatchKind::IterateLinear => "iterate-linear",
            BatchKind::IterateMax => "iterate-max",
        }
    }

    /// The fixed-point equation whose solution the batch approximates.
    pub fn recursion(self) -> Option<RecursionKind> {
        match self {
            BatchKind::Linear | BatchKind::IterateLinear => Some(RecursionKind::Linear),
            BatchKind::HomogeneousMartingale => Some(RecursionKind::Homogeneous),
            BatchKind::Max | BatchKind::IterateMax => Some(RecursionKind::Max),
            BatchKind::MaxPlus => Some(RecursionKind::MaxPlus),
            BatchKind::LevelWeight => None,
        }
    }
}

impl From<RecursionKind> for BatchKind {
    fn from(k: RecursionKind) -> Self {
        match k {
            RecursionKind::Linear => BatchKind::Linear,
            RecursionKind::Homogeneous => BatchKind::HomogeneousMartingale,
            RecursionKind::Max => BatchKind::Max,
            RecursionKind::MaxPlus => BatchKind::MaxPlus,
        }
    }
}

impl std::fmt::Display for BatchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BatchKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "linear" => BatchKind::Linear,
            "homogeneous" | "homogeneous-martingale" => BatchKind::HomogeneousMartingale,
            "max" => BatchKind::Max,
            "max-plus" => BatchKind::MaxPlus,
            "level-weight" => BatchKind::LevelWeight,
            "iterate-linear" => BatchKind::IterateLinear,
            "iterate-max" => BatchKind::IterateMax,
            other => return Err(format!("unknown batch kind `{other}`")),
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("exact depth needs P(N = 0) > 0")]
    ExactNeedsLeaves,
    #[error("{0} batches need a finite depth")]
    NeedsFiniteDepth(BatchKind),
    #[error("all {0} replications exceeded the node budget")]
    AllTruncated(u64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Marker for a replication abandoned at the node budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truncated {
    pub nodes: u64,
}

/// One replication: the folded value, nodes visited, and `Z_k` per level.
#[derive(Clone, Debug, PartialEq)]
pub struct Replication {
    pub value: f64,
    pub nodes: u64,
    pub level_counts: Vec<u64>,
}

/// Per-node callback data: level, path weight `Pi`, mark drawn at the node, and
/// the running path sum of marks times weights including this node.
#[derive(Clone, Copy, Debug)]
pub struct NodeVisit {
    pub level: u32,
    pub pi: f64,
    pub mark: f64,
    pub prefix: f64,
}

struct Frame {
    key: StreamKey,
    pi: f64,
    level: u32,
    prefix: f64,
}

/// Generates the tree below `key` down to `max_level` (or to the leaves) and
/// calls `visit` once per node. Boundary nodes draw their mark from `boundary`
/// when given.
pub fn walk_tree<F: FnMut(NodeVisit)>(
    model: &VectorModel,
    key: StreamKey,
    max_level: Option<u32>,
    boundary: Option<&MarkLaw>,
    budget: u64,
    level_counts: &mut Vec<u64>,
    mut visit: F,
) -> Result<u64, Truncated> {
    level_counts.clear();
    let mut stack = vec![Frame { key, pi: 1.0, level: 0, prefix: 0.0 }];
    let mut nodes = 0u64;
    while let Some(Frame { key, pi, level, prefix }) = stack.pop() {
        nodes += 1;
        if nodes > budget {
            return Err(Truncated { nodes });
        }
        let lvl = level as usize;
        if level_counts.len() <= lvl {
            level_counts.resize(lvl + 1, 0);
        }
        level_counts[lvl] += 1;

        let mut rng = key.rng();
        let at_boundary = max_level.is_some_and(|m| level >= m);
        let mark = match (at_boundary, boundary) {
            (true, Some(law)) => law.sample(&mut rng),
            _ => model.sample_q(&mut rng),
        };
        let prefix = prefix + mark * pi;
        visit(NodeVisit { level, pi, mark, prefix });
        if at_boundary {
            continue;
        }
        let n = model.sample_n(&mut rng);
        for i in 0..n {
            let c = model.sample_c(&mut rng);
            stack.push(Frame { key: key.child(u64::from(i)), pi: pi * c, level: level + 1, prefix });
        }
    }
    Ok(nodes)
}

fn check_request(model: &VectorModel, kind: BatchKind, depth: Depth) -> Result<(), EngineError> {
    if depth == Depth::Exact {
        match kind {
            BatchKind::Linear | BatchKind::Max | BatchKind::MaxPlus => {}
            other => return Err(EngineError::NeedsFiniteDepth(other)),
        }
        if model.prob_leaf() <= 0.0 {
            return Err(EngineError::ExactNeedsLeaves);
        }
    }
    Ok(())
}

/// Samples one replication. `r0` is the initial law for the iteration kinds
/// and is ignored otherwise.
pub fn sample_replication(
    model: &VectorModel,
    kind: BatchKind,
    depth: Depth,
    budget: u64,
    r0: Option<&MarkLaw>,
    key: StreamKey,
) -> Result<Replication, Truncated> {
    let mut level_counts = Vec::new();
    let max_level = depth.max_level();
    let mut acc = 0.0f64;
    let nodes = match kind {
        BatchKind::Linear => walk_tree(model, key, max_level, None, budget, &mut level_counts, |v| {
            acc += v.mark * v.pi;
        })?,
        BatchKind::Max => walk_tree(model, key, max_level, None, budget, &mut level_counts, |v| {
            acc = acc.max(v.mark * v.pi);
        })?,
        BatchKind::MaxPlus => walk_tree(model, key, max_level, None, budget, &mut level_counts, |v| {
            acc = acc.max(v.prefix);
        })?,
        BatchKind::HomogeneousMartingale | BatchKind::LevelWeight => {
            let unit;
            let m = if kind == BatchKind::HomogeneousMartingale {
                unit = model.with_unit_marks();
                &unit
            } else {
                model
            };
            let n = max_level.unwrap_or(0);
            walk_tree(m, key, max_level, None, budget, &mut level_counts, |v| {
                if v.level == n {
                    acc += v.mark * v.pi;
                }
            })?
        }
        BatchKind::IterateLinear | BatchKind::IterateMax => {
            let zero = MarkLaw::Deterministic { value: 0.0 };
            let law = r0.unwrap_or(&zero);
            let linear = kind == BatchKind::IterateLinear;
            walk_tree(model, key, max_level, Some(law), budget, &mut level_counts, |v| {
                let term = v.mark * v.pi;
                if linear {
                    acc += term;
                } else {
                    acc = acc.max(term);
                }
            })?
        }
    };
    Ok(Replication { value: acc, nodes, level_counts })
}

/// Mean and standard error of `Z_k` over the kept replications.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelStat {
    pub level: u32,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub kind: BatchKind,
    pub depth: Depth,
    pub seed: u64,
    pub reps: u64,
    pub truncated: u64,
    pub model_hash: String,
    pub values: Vec<f64>,
    pub node_counts: Vec<u64>,
    pub level_stats: Vec<LevelStat>,
}

impl SampleBatch {
    pub fn sorted_values(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

#[derive(Clone, Debug)]
pub struct BatchRequest<'a> {
    pub model: &'a VectorModel,
    pub kind: BatchKind,
    pub depth: Depth,
    pub reps: u64,
    pub budget: u64,
    pub seed: u64,
    pub workers: usize,
    pub r0: Option<&'a MarkLaw>,
}

impl<'a> BatchRequest<'a> {
    pub fn new(model: &'a VectorModel, kind: BatchKind, depth: Depth, reps: u64, seed: u64) -> Self {
        BatchRequest { model, kind, depth, reps, budget: DEFAULT_BUDGET, seed, workers: 1, r0: None }
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn initial(mut self, r0: &'a MarkLaw) -> Self {
        self.r0 = Some(r0);
        self
    }
}

/// Runs `map` over replication indices on `workers` threads, returning results in index order.
pub fn parallel_map<T, F>(reps: u64, workers: usize, map: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    if workers <= 1 {
        return (0..reps).map(map).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| (0..reps).into_par_iter().map(&map).collect()),
        Err(_) => (0..reps).map(map).collect(),
    }
}

/// Replication `i` uses the stream derived from `(seed, i)`, so the output is
/// the same for every worker count.
pub fn run_batch(req: &BatchRequest<'_>) -> Result<SampleBatch, EngineError> {
    if req.reps == 0 {
        return Err(EngineError::InvalidArgument("reps must be >= 1".into()));
    }
    if req.workers == 0 {
        return Err(EngineError::InvalidArgument("workers must be >= 1".into()));
    }
    if req.budget == 0 {
        return Err(EngineError::InvalidArgument("budget must be >= 1".into()));
    }
    check_request(req.model, req.kind, req.depth)?;
    let results = parallel_map(req.reps, req.workers, |i| {
        sample_replication(req.model, req.kind, req.depth, req.budget, req.r0, StreamKey::replication(req.seed, i))
    });

    let mut values = Vec::with_capacity(results.len());
    let mut node_counts = Vec::with_capacity(results.len());
    let mut sums: Vec<u128> = Vec::new();
    let mut sq_sums: Vec<u128> = Vec::new();
    let mut truncated = 0u64;
    for r in results {
        match r {
            Ok(rep) => {
                if sums.len() < rep.level_counts.len() {
                    sums.resize(rep.level_counts.len(), 0);
                    sq_sums.resize(rep.level_counts.len(), 0);
                }
                for (k, &z) in rep.level_counts.iter().enumerate() {
                    sums[k] += u128::from(z);
                    sq_sums[k] += u128::from(z) * u128::from(z);
                }
                values.push(rep.value);
                node_counts.push(rep.nodes);
            }
            Err(_) => truncated += 1,
        }
    }
    if values.is_empty() {
        return Err(EngineError::AllTruncated(req.reps));
    }
    let kept = values.len() as f64;
    let level_stats = sums
        .iter()
        .zip(&sq_sums)
        .enumerate()
        .map(|(k, (&s, &ss))| {
            let mean = s as f64 / kept;
            let var = if kept > 1.0 { ((ss as f64) - kept * mean * mean).max(0.0) / (kept - 1.0) } else { 0.0 };
            LevelStat { level: k as u32, mean, std_error: (var / kept).sqrt() }
        })
        .collect();
    Ok(SampleBatch {
        kind: req.kind,
        depth: req.depth,
        seed: req.seed,
        reps: req.reps,
        truncated,
        model_hash: crate::io::model_hash(req.model),
        values,
        node_counts,
        level_stats,
    })
}

/// Samples `R*_n` started from `r0`: `R^(n-1)` plus the boundary term built
/// from `r0` draws at level `n` (summed for linear, maxed for max).
pub fn iterate_from(
    model: &VectorModel,
    kind: RecursionKind,
    r0: &MarkLaw,
    n: u32,
    reps: u64,
    seed: u64,
    workers: usize,
) -> Result<SampleBatch, EngineError> {
    let batch_kind = match kind {
        RecursionKind::Linear => BatchKind::IterateLinear,
        RecursionKind::Max => BatchKind::IterateMax,
        other => return Err(EngineError::InvalidArgument(format!("iteration is defined for linear and max, not {other}"))),
    };
    run_batch(&BatchRequest::new(model, batch_kind, Depth::Levels(n), reps, seed).workers(workers).initial(r0))
}

/// Bound on `E[(R - R^(n))^beta]`, or on `E|R - R^(n)|^beta` for `beta > 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "kebab-case")]
pub enum Bound {
    Finite(f64),
    Infinite,
}

impl Bound {
    pub fn value(self) -> Option<f64> {
        match self {
            Bound::Finite(v) => Some(v),
            Bound::Infinite => None,
        }
    }
}

/// Certified truncation error of the depth-`n` linear sum.
pub fn truncation_bound(model: &VectorModel, beta: f64, depth: u32) -> Bound {
    use crate::model::phi;
    let rho_beta = match phi(model, beta).value() {
        Some(v) => v,
        None => return Bound::Infinite,
    };
    let n1 = f64::from(depth) + 1.0;
    if beta <= 1.0 {
        if !crate::model::contracts(rho_beta) {
            return Bound::Infinite;
        }
        let q = model.q_moment(beta);
        return Bound::Finite(q * rho_beta.powf(n1) / (1.0 - rho_beta));
    }
    let Some(k) = crate::moments::k_beta(model, beta) else {
        return Bound::Infinite;
    };
    let rho = phi(model, 1.0).value().unwrap_or(f64::INFINITY);
    let eta = rho.max(rho_beta);
    Bound::Finite(k.value * eta.powf(n1) / (1.0 - eta.powf(1.0 / beta)).powf(beta))
}
