use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn treetail(args: &[&str], env_out: Option<&Path>) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_treetail"));
    cmd.args(args).env_remove("TREETAIL_OUT_DIR");
    if let Some(dir) = env_out {
        cmd.env("TREETAIL_OUT_DIR", dir);
    }
    let Output { status, stdout, stderr } = cmd.output().expect("binary runs");
    Run {
        code: status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&stdout).into_owned(),
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
    }
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_slice(&std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

const MODEL_A: &str = "kind = \"homogeneous\"\ndepth = 12\nreps = 20000\nseed = 3\n[model]\npreset = \"A\"\n";
const MODEL_B: &str = "kind = \"linear\"\ndepth = \"exact\"\nreps = 1000\nseed = 7\n[model]\npreset = \"B\"\n";

#[test]
fn solve_alpha_model_a() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.toml", MODEL_A);
    let out = dir.path().join("out");
    let r = treetail(&["solve-alpha", "-c", &cfg, "--out", &s(&out)], None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = json(out.join("solution.json"));
    assert_eq!(v["schema_version"], 1);
    assert!((v["solution"]["alpha"].as_f64().unwrap() - 2.0).abs() < 1e-8);
    assert_eq!(v["solution"]["root_kind"], "second-root-of-critical-pair");
    assert!(r.stdout.contains("solution.json"));
}

#[test]
fn solve_alpha_deterministic_weights_fail_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "d.toml",
        // phi(t) = 2^t / 4, so alpha = 2 with phi' > 0 on a lattice weight law
        "[model]\nn = { family = \"two-point\", values = [0, 1], probs = [0.75, 0.25] }\nc = { family = \"deterministic\", value = 2.0 }\nq = { family = \"deterministic\", value = 1.0 }\n",
    );
    let out = dir.path().join("out");
    let r = treetail(&["solve-alpha", "-c", &cfg, "--out", &s(&out)], None);
    assert_eq!(r.code, 2, "{}", r.stderr);
    let v = json(out.join("solution.json"));
    let entries = v["conditions"]["entries"].as_array().unwrap();
    let na = entries.iter().find(|e| e["name"] == "nonarithmetic").unwrap();
    assert_eq!(na["status"], "fail");
    assert!((v["solution"]["alpha"].as_f64().unwrap() - 2.0).abs() < 1e-8);
}

#[test]
fn solve_alpha_without_sign_change_is_operational_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.toml", MODEL_B);
    let out = dir.path().join("out");
    let r = treetail(&["solve-alpha", "-c", &cfg, "--set", "solver.bracket=[2.0, 3.0]", "--out", &s(&out)], None);
    assert_eq!(r.code, 1);
    assert!(json(out.join("solution.json"))["error"].as_str().unwrap().contains("no sign change"));
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.toml", MODEL_B);
    let (o1, o2) = (dir.path().join("o1"), dir.path().join("o2"));
    assert_eq!(treetail(&["simulate", "-c", &cfg, "--out", &s(&o1)], None).code, 0);
    assert_eq!(treetail(&["simulate", "-c", &cfg, "--out", &s(&o2)], None).code, 0);
    let a = std::fs::read(o1.join("batch.csv")).unwrap();
    assert_eq!(a, std::fs::read(o2.join("batch.csv")).unwrap());
    assert_eq!(std::fs::read(o1.join("summary.json")).unwrap(), std::fs::read(o2.join("summary.json")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("model-hash="));
    assert!(text.lines().next().unwrap().contains("kind=linear,depth=exact,seed=7"));
    assert_eq!(text.lines().count(), 1001);
}

#[test]
fn simulate_reports_branching_growth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.toml", MODEL_A);
    let out = dir.path().join("out");
    let r = treetail(&["simulate", "-c", &cfg, "--out", &s(&out)], None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = json(out.join("summary.json"));
    let z12 = v["z_counts"].as_array().unwrap().iter().find(|z| z["level"] == 12).unwrap();
    let (mean, se) = (z12["mean"].as_f64().unwrap(), z12["std_error"].as_f64().unwrap());
    let exact = 1.3f64.powi(12);
    assert!((mean - exact).abs() <= 3.0 * se, "{mean} +- {se} vs {exact}");
    assert_eq!(v["truncation_bound"]["status"], "infinite");
}

#[test]
fn simulate_without_model_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "empty.toml", "reps = 10\n");
    let r = treetail(&["simulate", "-c", &cfg, "--out", &s(&dir.path().join("o"))], None);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("[model]"), "{}", r.stderr);
}

#[test]
fn simulate_refuses_failed_conditions_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "d.toml",
        "depth = 5\nreps = 10\n[model]\nn = { family = \"deterministic\", value = 2 }\nc = { family = \"deterministic\", value = 0.5 }\nq = { family = \"deterministic\", value = 1.0 }\n[solver]\nbracket = [0.5, 3.0]\n",
    );
    let out = s(&dir.path().join("o"));
    assert_eq!(treetail(&["simulate", "-c", &cfg, "--out", &out], None).code, 2);
    let r = treetail(&["simulate", "-c", &cfg, "--force", "--out", &out], None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    // levels 0..=5 each contribute 2^k 0.5^k = 1
    let text = std::fs::read_to_string(dir.path().join("o").join("batch.csv")).unwrap();
    assert_eq!(text.lines().nth(1).unwrap().parse::<f64>().unwrap(), 6.0);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "typo.toml", "repss = 10\n[model]\npreset = \"B\"\n");
    let r = treetail(&["solve-alpha", "-c", &cfg, "--out", &s(&dir.path().join("o"))], None);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("repss"), "{}", r.stderr);
}

#[test]
fn flags_override_file_and_env_sets_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.toml", MODEL_B);
    let env_dir = dir.path().join("from-env");
    let r = treetail(&["simulate", "-c", &cfg, "--reps", "25", "--set", "seed=9"], Some(&env_dir));
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = json(env_dir.join("summary.json"));
    assert_eq!(v["reps"], 25);
    assert_eq!(v["seed"], 9);
    assert!(r.stdout.contains("from-env"));
}

#[test]
fn analyze_model_b_batch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.toml", MODEL_B);
    let out = dir.path().join("out");
    assert_eq!(treetail(&["simulate", "-c", &cfg, "--reps", "100000", "--out", &s(&out)], None).code, 0);
    let batch = s(&out.join("batch.csv"));
    let r = treetail(&["analyze", "-c", &cfg, "--batch", &batch, "--out", &s(&out)], None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let tail = json(out.join("tail_report.json"));
    let a = tail["alpha_hat"]["value"].as_f64().unwrap();
    assert!((0.8..=1.2).contains(&a), "{a}");
    let h = json(out.join("h_report.json"));
    let closed = h["report"]["closed_form"]["value"].as_f64().unwrap();
    assert!((closed - 1.0 / (std::f64::consts::LN_2 + 0.5)).abs() < 1e-12);
    for csv in ["hill_sweep.csv", "survival.csv"] {
        let text = std::fs::read_to_string(out.join(csv)).unwrap();
        assert!(text.lines().count() > 5, "{csv}");
    }
}

#[test]
fn analyze_pareto_fixture_without_model() {
    let dir = tempfile::tempdir().unwrap();
    let n = 200_000;
    let mut text = String::from("model-hash=fixture,kind=linear,depth=exact,seed=0,reps=200000,truncated=0\n");
    // evenly spaced quantiles of P(X > t) = t^-2 on t >= 1
    for i in 0..n {
        let u = (i as f64 + 0.5) / n as f64;
        text.push_str(&format!("{}\n", u.powf(-0.5)));
    }
    let batch = write(dir.path(), "pareto.csv", &text);
    let out = dir.path().join("out");
    let r = treetail(&["analyze", "--batch", &batch, "--out", &s(&out)], None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let tail = json(out.join("tail_report.json"));
    let a = tail["alpha_hat"]["value"].as_f64().unwrap();
    assert!((a - 2.0).abs() < 0.05, "{a}");
    let h = tail["plateau_h"]["value"].as_f64().unwrap();
    assert!((h - 1.0).abs() < 0.05, "{h}");
    assert!(json(out.join("h_report.json"))["note"].is_string());
}

#[test]
fn analyze_rejects_bad_batches() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.csv", "");
    assert_eq!(treetail(&["analyze", "--batch", &empty, "--out", &s(&dir.path().join("o"))], None).code, 1);
    let header_only = write(dir.path(), "h.csv", "model-hash=x,kind=linear,depth=exact,seed=0\n");
    assert_eq!(treetail(&["analyze", "--batch", &header_only, "--out", &s(&dir.path().join("o"))], None).code, 1);

    let cfg_b = write(dir.path(), "b.toml", MODEL_B);
    let out = dir.path().join("sim");
    assert_eq!(treetail(&["simulate", "-c", &cfg_b, "--out", &s(&out)], None).code, 0);
    let cfg_other = write(dir.path(), "other.toml", "kind = \"linear\"\n[model]\npreset = \"B-prime\"\n");
    let r = treetail(&["analyze", "-c", &cfg_other, "--batch", &s(&out.join("batch.csv")), "--out", &s(&dir.path().join("o"))], None);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("model"), "{}", r.stderr);
}

#[test]
fn verify_model_a_passes_and_skips_unmet_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.toml", MODEL_A);
    let out = dir.path().join("out");
    let r = treetail(&["verify", "-c", &cfg, "--set", "verify.renewal_reps=100000", "--out", &s(&out)], None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = json(out.join("verification.json"));
    assert_eq!(v["all_passed"], true);
    assert_eq!(v["renewal"]["cells"].as_array().unwrap().len(), 9);
    let cells = v["moments"]["cells"].as_array().unwrap();
    assert!(cells.iter().any(|c| c["status"] == "precondition-unmet" && c["beta"] == 1.5));
    assert!(cells.iter().any(|c| c["status"] == "checked"));
    assert_eq!(v["iteration"]["status"], "skipped");
}

#[test]
fn verify_with_forced_bad_constant_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[model]\npreset = \"C\"\n[verify]\nrenewal = false\niteration = false\nmoment_levels = [2, 3]\nmoment_betas = [1.5, 2.0]\nmoment_reps = 20000\nk_beta_scale = 1e-3\n",
    );
    let out = dir.path().join("out");
    let r = treetail(&["verify", "-c", &cfg, "--out", &s(&out)], None);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert_eq!(json(out.join("verification.json"))["all_passed"], false);
}
