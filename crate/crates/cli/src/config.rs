use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use treetail::engine::{Depth, DEFAULT_BUDGET};
use treetail::model::RecursionKind;
use treetail::{cramer, tails, ModelSpec};

pub const OUT_DIR_ENV: &str = "TREETAIL_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "treetail-out";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: Option<ModelSpec>,
    pub kind: RecursionKind,
    pub depth: Depth,
    pub reps: u64,
    pub seed: u64,
    pub workers: usize,
    pub budget: u64,
    pub out: Option<PathBuf>,
    /// Moment order of the reported truncation bound.
    pub truncation_beta: f64,
    pub solver: SolverConfig,
    pub tails: TailsConfig,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: None,
            kind: RecursionKind::Linear,
            depth: Depth::Levels(20),
            reps: 100_000,
            seed: 1,
            workers: 1,
            budget: DEFAULT_BUDGET,
            out: None,
            truncation_beta: 0.5,
            solver: SolverConfig::default(),
            tails: TailsConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub bracket: (f64, f64),
    pub tol: f64,
    pub epsilon: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { bracket: cramer::DEFAULT_BRACKET, tol: cramer::DEFAULT_TOL, epsilon: cramer::DEFAULT_EPSILON }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TailsConfig {
    pub k: Option<usize>,
    pub band: (f64, f64),
    pub bootstrap: u64,
    pub ks_threshold: f64,
    /// Replications of the general Monte Carlo expression for `H`.
    pub h_reps: u64,
    pub survival_points: usize,
    pub sweep_points: usize,
}

impl Default for TailsConfig {
    fn default() -> Self {
        TailsConfig {
            k: None,
            band: tails::DEFAULT_BAND,
            bootstrap: tails::DEFAULT_BOOTSTRAP,
            ks_threshold: tails::DEFAULT_KS_THRESHOLD,
            h_reps: 100_000,
            survival_points: 60,
            sweep_points: 40,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub renewal: bool,
    pub renewal_levels: Vec<u32>,
    pub renewal_reps: u64,
    pub indicator_x: f64,
    pub moments: bool,
    pub moment_levels: Vec<u32>,
    pub moment_betas: Vec<f64>,
    pub moment_reps: u64,
    pub iteration: bool,
    pub iteration_r0: f64,
    pub iteration_n: u32,
    pub iteration_reps: u64,
    pub iteration_ks_threshold: f64,
    pub k_beta_scale: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            renewal: true,
            renewal_levels: vec![1, 2, 3],
            renewal_reps: 200_000,
            indicator_x: 0.0,
            moments: true,
            moment_levels: (0..=10).collect(),
            moment_betas: vec![0.25, 0.5, 0.847, 1.0, 1.5, 2.0],
            moment_reps: 100_000,
            iteration: true,
            iteration_r0: 100.0,
            iteration_n: 15,
            iteration_reps: 100_000,
            iteration_ks_threshold: 0.01,
            k_beta_scale: 1.0,
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub reps: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

fn parse_leaf(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_set(root: &mut toml::Table, assignment: &str) -> Result<(), String> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| format!("--set expects key=value, got `{assignment}`"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(format!("bad key path `{path}`"));
    }
    let mut table = root;
    for k in &keys[..keys.len() - 1] {
        let entry = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| format!("`{k}` in `{path}` is not a section"))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), parse_leaf(raw.trim()));
    Ok(())
}

/// Reads the file (if any), applies `--set` assignments, validates, then applies the typed flags.
pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, String> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => toml::Table::new(),
    };
    for s in &overrides.sets {
        apply_set(&mut table, s)?;
    }
    let mut cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| format!("invalid config: {e}"))?;
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if let Some(r) = overrides.reps {
        cfg.reps = r;
    }
    if let Some(w) = overrides.workers {
        cfg.workers = w;
    }
    if let Some(o) = &overrides.out {
        cfg.out = Some(o.clone());
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<(), String> {
    if cfg.reps == 0 {
        return Err("reps must be >= 1".into());
    }
    if cfg.workers == 0 {
        return Err("workers must be >= 1".into());
    }
    if cfg.budget == 0 {
        return Err("budget must be >= 1".into());
    }
    if cfg.truncation_beta.is_nan() || cfg.truncation_beta <= 0.0 {
        return Err("truncation_beta must be > 0".into());
    }
    let (lo, hi) = cfg.solver.bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(format!("solver.bracket ({lo}, {hi}) must satisfy 0 < lo < hi"));
    }
    if cfg.solver.tol.is_nan() || cfg.solver.tol <= 0.0 {
        return Err("solver.tol must be > 0".into());
    }
    if !(cfg.solver.epsilon > 0.0 && cfg.solver.epsilon < 1.0) {
        return Err("solver.epsilon must be in (0, 1)".into());
    }
    if cfg.verify.renewal_levels.iter().any(|n| !(1..=4).contains(n)) {
        return Err("verify.renewal_levels must lie in 1..=4".into());
    }
    Ok(())
}

impl RunConfig {
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }
}
