//! Batch CSV files, batch summaries, and model fingerprints.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{BatchKind, Depth, LevelStat, SampleBatch};
use crate::model::VectorModel;
use crate::stats::{mean_estimate, quantile_sorted};

pub const SCHEMA_VERSION: u32 = 1;

/// First 16 hex digits of the SHA-256 of the model's canonical JSON.
pub fn model_hash(model: &VectorModel) -> String {
    let json = serde_json::to_string(model).expect("model serialises");
    let digest = Sha256::digest(json.as_bytes());
    hex::encode(&digest[..8])
}

#[derive(Debug, Error)]
pub enum BatchFileError {
    #[error("batch file is empty")]
    Empty,
    #[error("batch file has no values")]
    NoValues,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("line {line}: cannot parse `{text}` as a value")]
    Value { line: usize, text: String },
}

/// Batch metadata carried by the CSV header line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchHeader {
    pub model_hash: String,
    pub kind: BatchKind,
    pub depth: Depth,
    pub seed: u64,
    pub reps: u64,
    pub truncated: u64,
}

impl BatchHeader {
    pub fn of(batch: &SampleBatch) -> Self {
        BatchHeader {
            model_hash: batch.model_hash.clone(),
            kind: batch.kind,
            depth: batch.depth,
            seed: batch.seed,
            reps: batch.reps,
            truncated: batch.truncated,
        }
    }

    fn line(&self) -> String {
        format!(
            "model-hash={},kind={},depth={},seed={},reps={},truncated={}",
            self.model_hash, self.kind, self.depth, self.seed, self.reps, self.truncated
        )
    }

    fn parse(line: &str) -> Result<Self, BatchFileError> {
        let bad = |m: &str| BatchFileError::Header(format!("{m} in `{line}`"));
        let mut hash = None;
        let mut kind = None;
        let mut depth = None;
        let mut seed = None;
        let mut reps = None;
        let mut truncated = None;
        for field in line.trim().split(',') {
            let (k, v) = field.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            match k {
                "model-hash" => hash = Some(v.to_string()),
                "kind" => kind = Some(v.parse::<BatchKind>().map_err(|e| bad(&e))?),
                "depth" => depth = Some(v.parse::<Depth>().map_err(|e| bad(&e))?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad("bad seed"))?),
                "reps" => reps = Some(v.parse::<u64>().map_err(|_| bad("bad reps"))?),
                "truncated" => truncated = Some(v.parse::<u64>().map_err(|_| bad("bad truncated"))?),
                other => return Err(bad(&format!("unknown key `{other}`"))),
            }
        }
        Ok(BatchHeader {
            model_hash: hash.ok_or_else(|| bad("missing model-hash"))?,
            kind: kind.ok_or_else(|| bad("missing kind"))?,
            depth: depth.ok_or_else(|| bad("missing depth"))?,
            seed: seed.ok_or_else(|| bad("missing seed"))?,
            reps: reps.unwrap_or(0),
            truncated: truncated.unwrap_or(0),
        })
    }
}

/// Header line followed by one value per line in shortest round-trip form.
pub fn batch_csv(batch: &SampleBatch) -> String {
    let mut out = String::with_capacity(batch.values.len() * 20 + 128);
    out.push_str(&BatchHeader::of(batch).line());
    out.push('\n');
    for v in &batch.values {
        writeln!(out, "{v}").expect("writing to a String");
    }
    out
}

pub fn parse_batch_csv(text: &str) -> Result<(BatchHeader, Vec<f64>), BatchFileError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(BatchFileError::Empty)?;
    let header = BatchHeader::parse(first)?;
    let mut values = Vec::new();
    for (i, l) in lines {
        let t = l.trim();
        let v: f64 = t.parse().map_err(|_| BatchFileError::Value { line: i + 1, text: t.to_string() })?;
        if !v.is_finite() || v < 0.0 {
            return Err(BatchFileError::Value { line: i + 1, text: t.to_string() });
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(BatchFileError::NoValues);
    }
    Ok((header, values))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantile {
    pub p: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeCountStats {
    pub mean: f64,
    pub std_error: f64,
    pub max: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub schema_version: u32,
    pub model_hash: String,
    pub kind: BatchKind,
    pub depth: Depth,
    pub seed: u64,
    pub reps: u64,
    pub kept: u64,
    pub truncated: u64,
    pub mean: f64,
    pub std_error: f64,
    pub min: f64,
    pub max: f64,
    pub quantiles: Vec<Quantile>,
    pub node_counts: NodeCountStats,
    pub z_counts: Vec<LevelStat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation_bound: Option<crate::engine::Bound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation_beta: Option<f64>,
}

pub fn summarize(batch: &SampleBatch) -> BatchSummary {
    let sorted = batch.sorted_values();
    let m = mean_estimate(&batch.values);
    let nodes: Vec<f64> = batch.node_counts.iter().map(|&n| n as f64).collect();
    let ns = mean_estimate(&nodes);
    BatchSummary {
        schema_version: SCHEMA_VERSION,
        model_hash: batch.model_hash.clone(),
        kind: batch.kind,
        depth: batch.depth,
        seed: batch.seed,
        reps: batch.reps,
        kept: batch.values.len() as u64,
        truncated: batch.truncated,
        mean: m.value,
        std_error: m.std_error,
        min: sorted.first().copied().unwrap_or(f64::NAN),
        max: sorted.last().copied().unwrap_or(f64::NAN),
        quantiles: [0.5, 0.9, 0.99, 0.999]
            .iter()
            .map(|&p| Quantile { p, value: quantile_sorted(&sorted, p) })
            .collect(),
        node_counts: NodeCountStats {
            mean: ns.value,
            std_error: ns.std_error,
            max: batch.node_counts.iter().copied().max().unwrap_or(0),
        },
        z_counts: batch.level_stats.clone(),
        truncation_bound: None,
        truncation_beta: None,
    }
}
