use std::path::{Path, PathBuf};
use std::process::ExitCode;

use serde::Serialize;
use thiserror::Error;
use treetail::constants::{h_report, HReport};
use treetail::cramer::{check_conditions, solve_alpha, ConditionReport, CramerError, CramerSolution};
use treetail::engine::{iterate_from, run_batch, truncation_bound, BatchRequest, Bound, Depth};
use treetail::io::{batch_csv, model_hash, parse_batch_csv, summarize, BatchHeader, SCHEMA_VERSION};
use treetail::model::{contracts, make_model, phi, MarkLaw, RecursionKind, VectorModel};
use treetail::moments::{mean_wn_exact, wn_moment_grid, GridSettings, MomentCell};
use treetail::renewal::{verify_product_measure, DualEstimateReport, TestFunction};
use treetail::stats::{ks_distance, mean_estimate, Estimate};
use treetail::tails::{analyze, hill_sweep, survival_points, TailReport, TailSettings};
use treetail::{BatchKind, StreamKey};

use crate::config::RunConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_OPERATIONAL: u8 = 1;
pub const EXIT_CONDITIONS: u8 = 2;
pub const EXIT_VERIFICATION: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] treetail::model::ModelError),
    #[error(transparent)]
    Engine(#[from] treetail::engine::EngineError),
    #[error(transparent)]
    BatchFile(#[from] treetail::io::BatchFileError),
    #[error(transparent)]
    Tail(#[from] treetail::tails::TailError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Result of one command: an exit code plus the files it wrote.
pub struct Outcome {
    pub code: u8,
    pub written: Vec<PathBuf>,
}

impl Outcome {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

struct Writer {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
        Ok(Writer { dir, written: Vec::new() })
    }

    fn text(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, body).map_err(|source| CliError::Io { path: path.clone(), source })?;
        self.written.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut body = serde_json::to_string_pretty(value).expect("reports serialise");
        body.push('\n');
        self.text(name, &body)
    }

    fn finish(self, code: u8) -> Outcome {
        Outcome { code, written: self.written }
    }
}

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema_version: u32,
    #[serde(flatten)]
    body: &'a T,
}

fn versioned<T: Serialize>(body: &T) -> Versioned<'_, T> {
    Versioned { schema_version: SCHEMA_VERSION, body }
}

fn build_model(cfg: &RunConfig) -> Result<VectorModel, CliError> {
    let spec = cfg.model.as_ref().ok_or_else(|| CliError::Config("config has no [model] section".into()))?;
    Ok(make_model(spec, Some(cfg.kind))?)
}

#[derive(Serialize)]
struct SolveOutput {
    model_hash: String,
    kind: RecursionKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    solution: Option<CramerSolution>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    conditions: Option<ConditionReport>,
}

enum Solved {
    Ok(CramerSolution, ConditionReport),
    /// A root exists but `phi'` is not positive there.
    Contraction(String),
    Failed(String),
}

fn solve(cfg: &RunConfig, model: &VectorModel) -> Solved {
    match solve_alpha(model, cfg.solver.bracket, cfg.solver.tol) {
        Ok(sol) => {
            let report = check_conditions(model, &sol, cfg.kind, cfg.solver.epsilon);
            Solved::Ok(sol, report)
        }
        Err(e @ CramerError::ContractionRoot { .. }) => Solved::Contraction(e.to_string()),
        Err(e) => Solved::Failed(e.to_string()),
    }
}

pub fn solve_alpha_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = build_model(cfg)?;
    let mut out = Writer::new(cfg.out_dir())?;
    let mut output = SolveOutput { model_hash: model_hash(&model), kind: cfg.kind, solution: None, error: None, conditions: None };
    let code = match solve(cfg, &model) {
        Solved::Ok(sol, report) => {
            let code = if report.passed() { EXIT_OK } else { EXIT_CONDITIONS };
            output.solution = Some(sol);
            output.conditions = Some(report);
            code
        }
        Solved::Contraction(msg) => {
            output.error = Some(msg);
            EXIT_CONDITIONS
        }
        Solved::Failed(msg) => {
            output.error = Some(msg);
            EXIT_OPERATIONAL
        }
    };
    out.json("solution.json", &versioned(&output))?;
    Ok(out.finish(code))
}

pub fn simulate_cmd(cfg: &RunConfig, force: bool) -> Result<Outcome, CliError> {
    let model = build_model(cfg)?;
    if !force {
        let problem = match solve(cfg, &model) {
            Solved::Ok(_, report) if report.passed() => None,
            Solved::Ok(_, report) => {
                let failed: Vec<&str> =
                    report.entries.iter().filter(|e| e.status != treetail::cramer::Status::Pass).map(|e| e.name.as_str()).collect();
                Some(format!("conditions not met: {}", failed.join(", ")))
            }
            Solved::Contraction(msg) | Solved::Failed(msg) => Some(msg),
        };
        if let Some(p) = problem {
            eprintln!("treetail: {p} (pass --force to simulate anyway)");
            return Ok(Outcome { code: EXIT_CONDITIONS, written: Vec::new() });
        }
    }
    let req = BatchRequest::new(&model, BatchKind::from(cfg.kind), cfg.depth, cfg.reps, cfg.seed)
        .workers(cfg.workers)
        .budget(cfg.budget);
    let batch = run_batch(&req)?;
    let mut summary = summarize(&batch);
    if let Depth::Levels(n) = cfg.depth {
        summary.truncation_beta = Some(cfg.truncation_beta);
        summary.truncation_bound = Some(match cfg.kind {
            // the martingale does not converge geometrically
            RecursionKind::Homogeneous => Bound::Infinite,
            _ => truncation_bound(&model, cfg.truncation_beta, n),
        });
    }
    let mut out = Writer::new(cfg.out_dir())?;
    out.text("batch.csv", &batch_csv(&batch))?;
    out.json("summary.json", &summary)?;
    Ok(out.finish(EXIT_OK))
}

#[derive(Serialize)]
struct AnalyzeHOutput<'a> {
    batch_kind: BatchKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<&'a HReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sandwich_holds: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

pub fn analyze_cmd(cfg: &RunConfig, batch_path: &Path) -> Result<Outcome, CliError> {
    let text = std::fs::read_to_string(batch_path).map_err(|source| CliError::Io { path: batch_path.to_path_buf(), source })?;
    let (header, values) = parse_batch_csv(&text)?;
    let recursion = header.kind.recursion();

    let mut note = None;
    let mut solved = None;
    match (&cfg.model, recursion) {
        (None, _) => note = Some("no [model] section: H routes need the model".to_string()),
        (Some(_), None) => note = Some(format!("batch kind {} has no fixed-point equation", header.kind)),
        (Some(spec), Some(kind)) => {
            let model = make_model(spec, Some(kind))?;
            let hash = model_hash(&model);
            if hash != header.model_hash {
                return Err(CliError::Config(format!(
                    "batch was generated by model {} but the config describes model {hash}",
                    header.model_hash
                )));
            }
            match solve_alpha(&model, cfg.solver.bracket, cfg.solver.tol) {
                Ok(sol) => solved = Some((model, sol, kind)),
                Err(e) => note = Some(e.to_string()),
            }
        }
    }

    let settings = TailSettings {
        k: cfg.tails.k,
        band: cfg.tails.band,
        bootstrap: cfg.tails.bootstrap,
        survival_points: cfg.tails.survival_points,
        workers: cfg.workers,
        seed: cfg.seed,
    };
    let tail: TailReport = analyze(&values, solved.as_ref().map(|(_, s, _)| s.alpha), &settings)?;

    let h = solved.as_ref().map(|(model, sol, kind)| {
        let key = StreamKey::replication(cfg.seed, 0).derive("h-mc-general");
        h_report(model, sol, *kind, &values, cfg.tails.h_reps, key, cfg.workers)
    });
    let h_out = AnalyzeHOutput {
        batch_kind: header.kind,
        report: h.as_ref(),
        sandwich_holds: h.as_ref().map(HReport::sandwich_holds),
        note,
    };

    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let mut sweep = String::from("k,alpha_hat,std_error\n");
    for p in hill_sweep(&sorted, cfg.tails.sweep_points) {
        sweep.push_str(&format!("{},{},{}\n", p.k, p.alpha, p.std_error));
    }
    let mut survival = String::from("t,fraction,std_error\n");
    for p in survival_points(&sorted, &tail.survival_points.iter().map(|p| p.t).collect::<Vec<_>>()) {
        survival.push_str(&format!("{},{},{}\n", p.t, p.fraction, p.std_error));
    }

    let mut out = Writer::new(cfg.out_dir())?;
    out.json("tail_report.json", &versioned(&TailOutput { batch: &header, tail: &tail }))?;
    out.json("h_report.json", &versioned(&h_out))?;
    out.text("hill_sweep.csv", &sweep)?;
    out.text("survival.csv", &survival)?;
    Ok(out.finish(EXIT_OK))
}

#[derive(Serialize)]
struct TailOutput<'a> {
    batch: &'a BatchHeader,
    #[serde(flatten)]
    tail: &'a TailReport,
}

#[derive(Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
enum Section<T: Serialize> {
    Checked { passed: bool, cells: Vec<T> },
    Skipped { reason: String },
}

#[derive(Serialize)]
struct MeanCell {
    n: u32,
    estimate: Estimate,
    exact: f64,
    agree: bool,
}

#[derive(Serialize)]
struct IterationCheck {
    n: u32,
    r0_low: f64,
    r0_high: f64,
    ks: f64,
    threshold: f64,
    passed: bool,
}

#[derive(Serialize)]
struct VerifyOutput {
    model_hash: String,
    kind: RecursionKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    renewal: Section<DualEstimateReport>,
    moments: Section<MomentCell>,
    mean_identity: Section<MeanCell>,
    iteration: Section<IterationCheck>,
    all_passed: bool,
}

fn passed<T: Serialize>(s: &Section<T>) -> bool {
    match s {
        Section::Checked { passed, .. } => *passed,
        Section::Skipped { .. } => true,
    }
}

pub fn verify_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = build_model(cfg)?;
    let v = &cfg.verify;
    // W_n of the homogeneous equation carries unit marks
    let level_model = if cfg.kind == RecursionKind::Homogeneous { model.with_unit_marks() } else { model.clone() };
    let root = solve_alpha(&model, cfg.solver.bracket, cfg.solver.tol);

    let renewal = match (&root, v.renewal) {
        (_, false) => Section::Skipped { reason: "disabled".into() },
        (Err(e), true) => Section::Skipped { reason: format!("precondition-unmet: {e}") },
        (Ok(sol), true) => {
            let functions = [TestFunction::Constant, TestFunction::Identity, TestFunction::Indicator { x: v.indicator_x }];
            let key = StreamKey::replication(cfg.seed, 0).derive("renewal");
            let mut cells = Vec::new();
            let mut skip = None;
            'levels: for &n in &v.renewal_levels {
                for (j, g) in functions.iter().enumerate() {
                    let cell_key = key.child(u64::from(n)).child(j as u64);
                    match verify_product_measure(&model, sol.alpha, n, *g, v.renewal_reps, cell_key, cfg.workers) {
                        Ok(r) => cells.push(r),
                        Err(e) => {
                            skip = Some(format!("precondition-unmet: {e}"));
                            break 'levels;
                        }
                    }
                }
            }
            match skip {
                Some(reason) => Section::Skipped { reason },
                None => Section::Checked { passed: cells.iter().all(|c| c.agree), cells },
            }
        }
    };

    let moments = if v.moments {
        let settings = GridSettings {
            reps: v.moment_reps,
            seed: cfg.seed,
            workers: cfg.workers,
            budget: cfg.budget,
            bound_scale: v.k_beta_scale,
        };
        let cells = wn_moment_grid(&level_model, &v.moment_levels, &v.moment_betas, settings)?;
        Section::Checked { passed: cells.iter().all(|c| c.holds().unwrap_or(true)), cells }
    } else {
        Section::Skipped { reason: "disabled".into() }
    };

    let mean_identity = if v.moments {
        let mut cells = Vec::new();
        for &n in &v.moment_levels {
            let req = BatchRequest::new(&level_model, BatchKind::LevelWeight, Depth::Levels(n), v.moment_reps, cfg.seed.wrapping_add(u64::from(n)))
                .workers(cfg.workers)
                .budget(cfg.budget);
            let batch = run_batch(&req)?;
            let estimate = mean_estimate(&batch.values);
            let exact = mean_wn_exact(&level_model, n);
            let agree = (estimate.value - exact).abs() <= 3.0 * estimate.std_error + 1e-12 * exact.abs().max(1.0);
            cells.push(MeanCell { n, estimate, exact, agree });
        }
        Section::Checked { passed: cells.iter().all(|c| c.agree), cells }
    } else {
        Section::Skipped { reason: "disabled".into() }
    };

    let iteration = if !v.iteration {
        Section::Skipped { reason: "disabled".into() }
    } else if !matches!(cfg.kind, RecursionKind::Linear | RecursionKind::Max) {
        Section::Skipped { reason: format!("precondition-unmet: iteration is defined for linear and max, not {}", cfg.kind) }
    } else if !phi(&model, 1.0).value().is_some_and(contracts) {
        Section::Skipped { reason: "precondition-unmet: E[sum C] >= 1".into() }
    } else {
        let low = MarkLaw::Deterministic { value: 0.0 };
        let high = MarkLaw::Deterministic { value: v.iteration_r0 };
        let a = iterate_from(&model, cfg.kind, &low, v.iteration_n, v.iteration_reps, cfg.seed, cfg.workers)?;
        let b = iterate_from(&model, cfg.kind, &high, v.iteration_n, v.iteration_reps, cfg.seed, cfg.workers)?;
        let ks = ks_distance(&a.values, &b.values);
        let check = IterationCheck {
            n: v.iteration_n,
            r0_low: 0.0,
            r0_high: v.iteration_r0,
            ks,
            threshold: v.iteration_ks_threshold,
            passed: ks <= v.iteration_ks_threshold,
        };
        Section::Checked { passed: check.passed, cells: vec![check] }
    };

    let all_passed = passed(&renewal) && passed(&moments) && passed(&mean_identity) && passed(&iteration);
    let output = VerifyOutput {
        model_hash: model_hash(&model),
        kind: cfg.kind,
        alpha: root.as_ref().ok().map(|s| s.alpha),
        renewal,
        moments,
        mean_identity,
        iteration,
        all_passed,
    };
    let mut out = Writer::new(cfg.out_dir())?;
    out.json("verification.json", &versioned(&output))?;
    Ok(out.finish(if all_passed { EXIT_OK } else { EXIT_VERIFICATION }))
}
