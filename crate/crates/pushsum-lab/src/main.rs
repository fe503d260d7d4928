//! Experiment runner and verification driver.
//!
//! Exit codes: 0 success, 1 verification failure, 2 config error,
//! 3 runtime/numeric failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pushsum_lab::algorithms::{
    run_experiment_traced, verify_identities, OptimizerKind, RunError, RunTrace,
};
use pushsum_lab::analysis::{
    bound_params_for_run, verify_lemma1, verify_lemma2, verify_theorem1, AnalysisError,
    BoundParams, VerificationReport,
};
use pushsum_lab::config::{
    ConfigError, ExperimentConfig, RunSummary, SweepConfig, SweepRow,
};
use pushsum_lab::exec;
use pushsum_lab::numeric::{sub, vec_l1, vec_l2};
use pushsum_lab::protocol::Norm;
use pushsum_lab::weighting::{WeightingMethod, WeightMatrix};

/// Test hook: corrupt one captured weight matrix before verification.
const CORRUPT_HOOK_ENV: &str = "PUSHSUM_LAB_CORRUPT_WEIGHT_ROUND";

#[derive(Parser)]
#[command(name = "pushsum-lab", version, about = "Decentralized push-sum optimization lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv plus summary.json.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config's output_path).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a per-round per-node state.csv.
        #[arg(long)]
        dump_state: bool,
        /// Also write the synthetic dataset to dataset.csv.
        #[arg(long)]
        dump_data: bool,
    },
    /// Run an experiment and verify the requested guarantees on it.
    Verify {
        config: PathBuf,
        /// Comma-separated subset of lemma1,lemma2,theorem1,identities.
        #[arg(long, value_delimiter = ',', default_values_t = vec![
            CheckName::Lemma1, CheckName::Lemma2, CheckName::Theorem1, CheckName::Identities,
        ])]
        checks: Vec<CheckName>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expand a sweep file and run every point, writing one aggregate CSV.
    Sweep {
        sweep: PathBuf,
        /// Number of worker threads (default: available parallelism).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CheckName {
    Lemma1,
    Lemma2,
    Theorem1,
    Identities,
}

impl std::fmt::Display for CheckName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            CheckName::Lemma1 => "lemma1",
            CheckName::Lemma2 => "lemma2",
            CheckName::Theorem1 => "theorem1",
            CheckName::Identities => "identities",
        };
        f.write_str(name)
    }
}

const EXIT_OK: u8 = 0;
const EXIT_VERIFY_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, out, dump_state, dump_data } => {
            cmd_run(&config, out, dump_state, dump_data)
        }
        Command::Verify { config, checks, out } => cmd_verify(&config, &checks, out),
        Command::Sweep { sweep, jobs, out } => cmd_sweep(&sweep, jobs, out),
    };
    ExitCode::from(code)
}

fn fail(code: u8, message: impl std::fmt::Display) -> u8 {
    eprintln!("error: {message}");
    code
}

fn run_error_code(err: &RunError) -> u8 {
    match err {
        RunError::Invalid(_) | RunError::Topology(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::parse(&text)?.with_env_seed()
}

fn out_dir(cli_out: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    cli_out
        .or_else(|| config.output_path.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn execute(config: &ExperimentConfig) -> Result<RunTrace, RunError> {
    let (problem, graph, optimizer, method) = config.assemble();
    run_experiment_traced(&problem, &graph, &optimizer, &method, config.horizon_t, config.seed)
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn cmd_run(
    config_path: &Path,
    out: Option<PathBuf>,
    dump_state: bool,
    dump_data: bool,
) -> u8 {
    let config = match load_config(config_path) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let trace = match execute(&config) {
        Ok(t) => t,
        Err(e) => return fail(run_error_code(&e), e),
    };
    let dir = out_dir(out, &config);
    if let Err(e) = fs::create_dir_all(&dir) {
        return fail(EXIT_RUNTIME, format!("cannot create {}: {e}", dir.display()));
    }
    let metrics_path = dir.join("metrics.csv");
    if let Err(e) = fs::write(&metrics_path, trace.metrics.to_csv_string()) {
        return fail(EXIT_RUNTIME, e);
    }
    let summary = RunSummary::from_trace(&config, &trace);
    let summary_json = serde_json::to_string_pretty(&summary).expect("serializable summary");
    if let Err(e) = fs::write(dir.join("summary.json"), summary_json) {
        return fail(EXIT_RUNTIME, e);
    }
    if dump_state || config.dump_state {
        if let Err(e) = fs::write(dir.join("state.csv"), state_csv(&trace)) {
            return fail(EXIT_RUNTIME, e);
        }
    }
    if dump_data || config.dump_data {
        if let Err(e) = fs::write(dir.join("dataset.csv"), dataset_csv(&config)) {
            return fail(EXIT_RUNTIME, e);
        }
    }
    println!(
        "run complete: {} rounds, final loss {:.6e}, wrote {}",
        trace.metrics.rows.len(),
        trace.metrics.final_row().loss,
        metrics_path.display()
    );
    EXIT_OK
}

/// Per-round per-node state table: round,node,a,x_norm,cons_l1,cons_l2.
fn state_csv(trace: &RunTrace) -> String {
    let mut out = String::from("round,node,a,x_norm,cons_l1,cons_l2\n");
    let mut emit = |round: usize, x: &[Vec<f64>], a: &[f64], y: &[Vec<f64>]| {
        let mean = pushsum_lab::numeric::mean_row(x);
        for i in 0..x.len() {
            let diff = sub(&y[i], &mean);
            out.push_str(&format!(
                "{round},{i},{},{},{},{}\n",
                a[i],
                vec_l2(&x[i]),
                vec_l1(&diff),
                vec_l2(&diff)
            ));
        }
    };
    let x0 = &trace.trajectory.initial_x;
    let ones = vec![1.0; x0.len()];
    emit(0, x0, &ones, x0);
    for (idx, round) in trace.trajectory.rounds.iter().enumerate() {
        emit(idx + 1, &round.x, &round.a, &round.y);
    }
    out
}

/// Synthetic dataset dump for external inspection.
fn dataset_csv(config: &ExperimentConfig) -> String {
    use pushsum_lab::problems::Problem;
    let (problem, ..) = config.assemble();
    let mut out = String::new();
    match &problem {
        Problem::Quadratic(q) => {
            out.push_str("node,center\n");
            for (i, c) in q.centers().iter().enumerate() {
                let coords: Vec<String> = c.iter().map(|v| v.to_string()).collect();
                out.push_str(&format!("{i},\"{}\"\n", coords.join(" ")));
            }
        }
        Problem::Logistic(l) => {
            out.push_str("node,sample,label,features\n");
            for i in 0..problem.n_nodes() {
                let (features, labels) = l.samples(i);
                for (s, (f, y)) in features.iter().zip(labels).enumerate() {
                    let coords: Vec<String> = f.iter().map(|v| v.to_string()).collect();
                    out.push_str(&format!("{i},{s},{y},\"{}\"\n", coords.join(" ")));
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn cmd_verify(config_path: &Path, checks: &[CheckName], out: Option<PathBuf>) -> u8 {
    let config = match load_config(config_path) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let trace = match execute(&config) {
        Ok(t) => t,
        Err(e) => return fail(run_error_code(&e), e),
    };
    let mut weights = trace.weights.clone();
    apply_corrupt_hook(&mut weights);

    let params = match effective_bound_params(&config, &trace) {
        Ok(p) => p,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    let is_tracking = config.optimizer.kind == OptimizerKind::Saddopt;

    let mut reports: Vec<VerificationReport> = Vec::new();
    for check in checks {
        let report = match check {
            CheckName::Lemma1 => on_sequence(verify_lemma1(&weights, &params), "lemma1"),
            CheckName::Lemma2 => on_sequence(verify_lemma2(&weights, &params), "lemma2"),
            CheckName::Theorem1 => {
                if is_tracking {
                    vec![VerificationReport::rejected(
                        "theorem1",
                        "trajectory bound does not apply to gradient tracking",
                    )]
                } else {
                    let l1 = on_sequence(
                        verify_theorem1(&trace.trajectory, &params, Norm::L1),
                        "theorem1_l1",
                    );
                    let l2 = on_sequence(
                        verify_theorem1(&trace.trajectory, &params, Norm::L2),
                        "theorem1_l2",
                    );
                    l1.into_iter().chain(l2).collect()
                }
            }
            CheckName::Identities => {
                if is_tracking {
                    vec![VerificationReport::rejected(
                        "identities",
                        "gradient tracking does not conserve the parameter total",
                    )]
                } else {
                    vec![verify_identities(&trace)]
                }
            }
        };
        reports.extend(report);
    }

    let dir = out_dir(out, &config);
    if let Err(e) = fs::create_dir_all(&dir) {
        return fail(EXIT_RUNTIME, format!("cannot create {}: {e}", dir.display()));
    }
    let json = serde_json::to_string_pretty(&reports).expect("serializable reports");
    if let Err(e) = fs::write(dir.join("verification.json"), json) {
        return fail(EXIT_RUNTIME, e);
    }
    let mut all_passed = true;
    for report in &reports {
        all_passed &= report.passed;
        println!(
            "{}: {} (worst margin {:.3e} at round {})",
            report.check,
            if report.passed { "PASS" } else { "FAIL" },
            report.worst_margin,
            report.worst_round
        );
    }
    if all_passed {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    }
}

/// Map a verifier result into reports, demoting precondition violations to
/// failed checks so corrupt inputs surface as verification failures.
fn on_sequence(
    result: Result<VerificationReport, AnalysisError>,
    name: &str,
) -> Vec<VerificationReport> {
    match result {
        Ok(report) => vec![report],
        Err(AnalysisError::NonCompliant(reason)) => {
            vec![VerificationReport::rejected(name, &reason)]
        }
        Err(other) => vec![VerificationReport::rejected(name, &other.to_string())],
    }
}

fn effective_bound_params(
    config: &ExperimentConfig,
    trace: &RunTrace,
) -> Result<BoundParams, AnalysisError> {
    if let Some(params) = trace.bound {
        return Ok(params);
    }
    let (_, graph, optimizer, method) = config.assemble();
    let effective = if optimizer.kind.forces_uniform_weighting() {
        WeightingMethod::UniformOutDegree
    } else {
        method
    };
    bound_params_for_run(&graph, &effective, config.horizon_t.saturating_sub(1))
}

fn apply_corrupt_hook(weights: &mut [WeightMatrix]) {
    if let Ok(raw) = std::env::var(CORRUPT_HOOK_ENV) {
        if let Ok(idx) = raw.parse::<usize>() {
            if let Some(w) = weights.get_mut(idx) {
                // Keep columns stochastic but push one entry below the
                // floor and skew the row sums.
                *w.entry_mut(0, 0) += 0.2;
                *w.entry_mut(1, 0) -= 0.2;
                eprintln!("corrupt hook: perturbed weight matrix {idx}");
            }
        }
    }
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

fn cmd_sweep(sweep_path: &Path, jobs: Option<usize>, out: Option<PathBuf>) -> u8 {
    let text = match fs::read_to_string(sweep_path) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_CONFIG, format!("cannot read {}: {e}", sweep_path.display())),
    };
    let sweep = match SweepConfig::parse(&text) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let points = match sweep.expand() {
        Ok(p) => p,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let rows: Vec<SweepRow> = exec::with_jobs(jobs, || {
        exec::map_items(&points, |point| {
            let mut row = SweepRow {
                n_nodes: point.n_nodes,
                topology: format!("{:?}", point.topology).to_lowercase(),
                optimizer: format!("{:?}", point.optimizer).to_lowercase(),
                gamma: point.gamma,
                heterogeneity: point.heterogeneity,
                seed: point.seed,
                status: "ok".into(),
                final_loss: 0.0,
                final_grad_norm_sq: 0.0,
                mean_consensus: 0.0,
                total_scalars_sent: 0,
            };
            match execute(&point.config) {
                Ok(trace) => {
                    let last = trace.metrics.final_row();
                    row.final_loss = last.loss;
                    row.final_grad_norm_sq = last.grad_norm_sq;
                    row.mean_consensus = trace.metrics.mean_consensus();
                    row.total_scalars_sent = trace.metrics.total_scalars_sent();
                }
                Err(e) => row.status = e.to_string(),
            }
            row
        })
    });
    let dir = out
        .or_else(|| sweep.base.output_path.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    if let Err(e) = fs::create_dir_all(&dir) {
        return fail(EXIT_RUNTIME, format!("cannot create {}: {e}", dir.display()));
    }
    let path = dir.join("sweep.csv");
    let mut writer = match csv::Writer::from_path(&path) {
        Ok(w) => w,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    let mut all_ok = true;
    for row in &rows {
        all_ok &= row.status == "ok";
        if let Err(e) = writer.serialize(row) {
            return fail(EXIT_RUNTIME, e);
        }
    }
    if let Err(e) = writer.flush() {
        return fail(EXIT_RUNTIME, e);
    }
    println!("sweep complete: {} runs, wrote {}", rows.len(), path.display());
    if all_ok {
        EXIT_OK
    } else {
        EXIT_RUNTIME
    }
}
