//! Command-line front end for the two-agent DEC-POMDP solver.
//!
//! Subcommands: `solve` (EM with random restarts), `evaluate` (exact policy
//! evaluation), `simulate` (Monte-Carlo estimate), and `bench` (run a suite of
//! instances against reference values).
//!
//! Exit codes: 0 success, 1 input error, 2 numerical abort, 3 bench tolerance
//! miss under `--ci`.

mod output;
mod suite;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use decpomdp::controller::PolicyFile;
use decpomdp::em::{solve_restarts, CutoffMode, EmConfig, SolveOutcome};
use decpomdp::evaluation::{evaluate_exact, simulate};
use decpomdp::model::DecPomdpModel;

use output::{csv_escape, write_text, Format};
use suite::BenchSuite;

#[derive(Parser)]
#[command(
    name = "decpomdp",
    version,
    about = "Fixed-size stochastic-controller planning for two-agent DEC-POMDPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a controller pair with EM from random restarts.
    Solve(SolveArgs),
    /// Exactly evaluate a saved policy on a model.
    Evaluate(EvaluateArgs),
    /// Monte-Carlo estimate of a saved policy's value.
    Simulate(SimulateArgs),
    /// Run a benchmark suite and compare against reference values.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Model file (.dpomdp).
    #[arg(long)]
    model: PathBuf,
    /// Controller sizes for agent 1 and agent 2.
    #[arg(long, num_args = 2, value_names = ["N1", "N2"], default_values_t = [1, 1])]
    nodes: Vec<usize>,
    /// Number of independent EM restarts.
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    /// Master seed; restart seeds derive from it.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Maximum EM iterations per restart.
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    /// Relative likelihood-change convergence tolerance.
    #[arg(long, default_value_t = 1e-8)]
    lik_tol: f64,
    /// Horizon cutoff: `fixed:K` or `adaptive:EPS`.
    #[arg(long, default_value = "adaptive:1e-8", value_parser = parse_cutoff)]
    cutoff: CutoffMode,
    /// Audit the exact value every J iterations (the final one always is).
    #[arg(long, value_name = "J")]
    audit_every: Option<usize>,
    /// Directory for policy.json, per-restart run logs, and the summary.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary format on stdout and in --out.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Worker threads for restarts (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model file (.dpomdp).
    #[arg(long)]
    model: PathBuf,
    /// Policy file (JSON) as written by `solve`.
    #[arg(long)]
    policy: PathBuf,
    /// Value-iteration residual tolerance.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model file (.dpomdp).
    #[arg(long)]
    model: PathBuf,
    /// Policy file (JSON) as written by `solve`.
    #[arg(long)]
    policy: PathBuf,
    /// Number of episodes.
    #[arg(long, default_value_t = 10_000)]
    episodes: usize,
    /// Episode length (default: long enough that the tail is negligible).
    #[arg(long)]
    horizon: Option<usize>,
    /// Simulation seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Suite definition (JSON); model paths resolve relative to it.
    #[arg(long)]
    suite: PathBuf,
    /// Directory for results.json / results.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Results format on stdout and in --out.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Master seed for every entry.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads for restarts (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Exit 3 if any entry misses its tolerance.
    #[arg(long)]
    ci: bool,
}

fn parse_cutoff(s: &str) -> Result<CutoffMode, String> {
    let (kind, val) = s
        .split_once(':')
        .ok_or_else(|| format!("expected `fixed:K` or `adaptive:EPS`, got `{s}`"))?;
    match kind {
        "fixed" => val
            .parse::<usize>()
            .map(CutoffMode::Fixed)
            .map_err(|e| format!("bad fixed cutoff `{val}`: {e}")),
        "adaptive" => {
            let epsilon: f64 = val.parse().map_err(|e| format!("bad epsilon `{val}`: {e}"))?;
            if !(epsilon >= 0.0) {
                return Err(format!("epsilon must be >= 0, got {epsilon}"));
            }
            Ok(CutoffMode::Adaptive { epsilon })
        }
        other => Err(format!("unknown cutoff kind `{other}`; use `fixed` or `adaptive`")),
    }
}

fn configure_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs {
        // Ignore the error when a global pool already exists (e.g. in tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    // Map clap usage errors onto exit code 1 (2 is reserved for numerical
    // aborts).
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are not errors.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .downcast_ref::<decpomdp::Error>()
                .is_some_and(|err| matches!(err, decpomdp::Error::Numerical(_)));
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

fn load_model(path: &PathBuf) -> anyhow::Result<DecPomdpModel> {
    DecPomdpModel::from_dpomdp_file(path)
        .with_context(|| format!("loading model {}", path.display()))
}

fn load_policy(path: &PathBuf) -> anyhow::Result<PolicyFile> {
    PolicyFile::load(path).with_context(|| format!("loading policy {}", path.display()))
}

/// Deterministic per-run summary: everything except wall-clock time, which
/// goes to stderr and to the per-iteration run logs instead.
fn solve_summary(
    model: &DecPomdpModel,
    args: &SolveArgs,
    outcome: &SolveOutcome,
) -> serde_json::Value {
    let best = outcome.best_run();
    let per_restart: Vec<serde_json::Value> = outcome
        .runs
        .iter()
        .map(|run| {
            serde_json::json!({
                "restart": run.restart,
                "seed": run.seed,
                "iterations": run.log.iterations,
                "likelihood": run.log.final_likelihood,
                "value": run.log.final_value_exact,
                "cutoff": run.log.final_cutoff,
                "stop": run.log.stop,
            })
        })
        .collect();
    serde_json::json!({
        "problem": model.name,
        "model_hash": model.content_hash(),
        "nodes": [args.nodes[0], args.nodes[1]],
        "restarts": args.restarts,
        "seed": args.seed,
        "best_restart": best.restart,
        "best_value": best.log.final_value_exact,
        "best_likelihood": best.log.final_likelihood,
        "best_iterations": best.log.iterations,
        "best_stop": best.log.stop,
        "policy_hash": best.log.policy_hash,
        "per_restart": per_restart,
    })
}

fn solve_csv(model: &DecPomdpModel, args: &SolveArgs, outcome: &SolveOutcome) -> String {
    let mut out = String::from("problem,n1,n2,restart,iters,likelihood,value,ms\n");
    for run in &outcome.runs {
        let ms: f64 = run.log.records.iter().map(|r| r.ms).sum();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            csv_escape(&model.name),
            args.nodes[0],
            args.nodes[1],
            run.restart,
            run.log.iterations,
            run.log.final_likelihood,
            run.log.final_value_exact,
            ms
        ));
    }
    out
}

fn cmd_solve(args: SolveArgs) -> anyhow::Result<ExitCode> {
    configure_jobs(args.jobs);
    let model = load_model(&args.model)?;
    let cfg = EmConfig {
        max_iters: args.max_iters,
        lik_tol: args.lik_tol,
        cutoff: args.cutoff,
        audit_every: args.audit_every,
        ..EmConfig::default()
    };
    let started = Instant::now();
    let outcome = solve_restarts(&model, args.nodes[0], args.nodes[1], args.restarts, args.seed, &cfg)?;
    let elapsed = started.elapsed().as_secs_f64();
    let best = outcome.best_run();
    eprintln!(
        "solved {}: best value {:.6} (likelihood {:.6}) from restart {} in {:.2}s",
        model.name, best.log.final_value_exact, best.log.final_likelihood, best.restart, elapsed
    );

    let summary = match args.format {
        Format::Json => {
            let mut text =
                serde_json::to_string_pretty(&solve_summary(&model, &args, &outcome))?;
            text.push('\n');
            text
        }
        Format::Csv => solve_csv(&model, &args, &outcome),
    };
    print!("{summary}");

    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        let file = PolicyFile::new(
            best.policy.clone(),
            model.content_hash(),
            best.seed,
            best.log.iterations,
        );
        file.save(dir.join("policy.json"))?;
        for run in &outcome.runs {
            write_text(&dir.join(format!("run_r{}.jsonl", run.restart)), &run.log.to_jsonl())?;
        }
        let name = match args.format {
            Format::Json => "summary.json",
            Format::Csv => "summary.csv",
        };
        write_text(&dir.join(name), &summary)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(args: EvaluateArgs) -> anyhow::Result<ExitCode> {
    let model = load_model(&args.model)?;
    let policy = load_policy(&args.policy)?;
    let vt = evaluate_exact(&model, &policy.policy, args.tol)?;
    let report = serde_json::json!({
        "problem": model.name,
        "value": vt.v_b0,
        "residual": vt.residual,
        "method": vt.method,
        "iterations": vt.iterations,
        "nodes": [vt.n1, vt.n2],
        "states": vt.states,
    });
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    print!("{text}");
    if let Some(path) = &args.out {
        write_text(path, &text)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<ExitCode> {
    let model = load_model(&args.model)?;
    let policy = load_policy(&args.policy)?;
    let est = simulate(&model, &policy.policy, args.episodes, args.horizon, args.seed)?;
    let report = serde_json::json!({
        "problem": model.name,
        "mean": est.mean,
        "std_error": est.std_error,
        "episodes": est.episodes,
        "horizon": est.horizon,
        "bias_bound": est.bias_bound,
        "seed": args.seed,
    });
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    print!("{text}");
    if let Some(path) = &args.out {
        write_text(path, &text)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(args: BenchArgs) -> anyhow::Result<ExitCode> {
    configure_jobs(args.jobs);
    let suite = BenchSuite::load(&args.suite)?;
    let mut rows: Vec<suite::BenchRow> = Vec::new();
    let mut results: Vec<serde_json::Value> = Vec::new();
    let mut misses = 0usize;

    for entry in &suite.entries {
        let model = Arc::new(load_model(&entry.model_path)?);
        for &(n1, n2) in &entry.sizes {
            let cfg = EmConfig {
                max_iters: entry.max_iters.unwrap_or(EmConfig::default().max_iters),
                ..EmConfig::default()
            };
            let started = Instant::now();
            let outcome =
                solve_restarts(&model, n1, n2, entry.restarts, args.seed, &cfg)?;
            let ms_total = started.elapsed().as_secs_f64() * 1e3;
            let best = outcome.best_run();
            let mean: f64 = outcome
                .runs
                .iter()
                .map(|r| r.log.final_value_exact)
                .sum::<f64>()
                / outcome.runs.len() as f64;
            let floor = entry.reference - entry.tolerance;
            let mut pass = best.log.final_value_exact >= floor;
            if let Some(min_lik) = entry.min_likelihood {
                pass = pass && best.log.final_likelihood >= min_lik;
            }
            if !pass {
                misses += 1;
            }
            eprintln!(
                "bench {} [{} {}]: best {:.4} mean {:.4} (floor {:.4}) {} in {:.2}s",
                entry.problem,
                n1,
                n2,
                best.log.final_value_exact,
                mean,
                floor,
                if pass { "pass" } else { "MISS" },
                ms_total / 1e3
            );
            results.push(serde_json::json!({
                "problem": entry.problem,
                "n1": n1,
                "n2": n2,
                "restarts": entry.restarts,
                "best_value": best.log.final_value_exact,
                "mean_value": mean,
                "best_likelihood": best.log.final_likelihood,
                "best_iterations": best.log.iterations,
                "reference": entry.reference,
                "tolerance": entry.tolerance,
                "pass": pass,
                "ms": ms_total,
            }));
            for run in &outcome.runs {
                rows.push(suite::BenchRow {
                    problem: entry.problem.clone(),
                    n1,
                    n2,
                    restart: run.restart,
                    iters: run.log.iterations,
                    likelihood: run.log.final_likelihood,
                    value: run.log.final_value_exact,
                    ms: run.log.records.iter().map(|r| r.ms).sum(),
                });
            }
        }
    }

    let json_text = {
        let doc = serde_json::json!({ "suite": suite.name, "results": results });
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        text
    };
    let csv_text = suite::rows_to_csv(&rows);
    match args.format {
        Format::Json => print!("{json_text}"),
        Format::Csv => print!("{csv_text}"),
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        write_text(&dir.join("results.json"), &json_text)?;
        write_text(&dir.join("results.csv"), &csv_text)?;
    }
    if misses > 0 && args.ci {
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}
