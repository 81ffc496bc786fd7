//! Command-line front end. Exit codes: 0 success, 1 failed check,
//! 2 usage or configuration error, 3 no convergence.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::control::{state_grid_for, FeedbackPolicy};
use crate::equilibrium::{counterexample_mean_map, exploitability, iterate, uniqueness_probe, EquilibriumReport};
use crate::error::{Error, Result};
use crate::grid::ScenarioGrid;
use crate::measures::{transport::exact_wasserstein_pow, wasserstein_p, EmpiricalMeasure, MeasureFlow};
use crate::model::validate_growth;
use crate::oracle::wasserstein_lp;
use crate::rng::stream;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mfg", version, about = "Discretized mean field games with common noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Iterate to an equilibrium and write the run artifacts.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Gap of a policy against a flow; succeeds iff it is below `exploit_threshold`.
    Exploitability {
        #[arg(long)]
        config: PathBuf,
        /// Flow directory written by `solve`.
        #[arg(long)]
        flow: PathBuf,
        /// Policy CSV written by `solve`.
        #[arg(long)]
        policy: PathBuf,
    },
    /// Iterate from several random starts and compare the limits.
    ProbeUniqueness {
        #[arg(long)]
        config: PathBuf,
    },
    /// Closed-form mean consistency of the linear-quadratic counterexample.
    Counterexample {
        #[arg(long, default_value_t = 2.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        lambda_bar: f64,
    },
    /// Sample the growth and regularity conditions a model claims.
    ValidateModel {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
    },
    /// Transport solvers against the LP oracle and scenario grid statistics.
    Selftest,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } | Error::Io(_) | Error::Csv(_) | Error::Parse(_) | Error::GridMismatch(_) => {
                    EXIT_USAGE
                }
                Error::UnknownModel(_) | Error::OutOfRange { .. } | Error::DimensionMismatch { .. } => EXIT_USAGE,
                _ => EXIT_CHECK_FAILED,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Solve { config, output } => cmd_solve(&config, output.as_deref()),
        Command::Exploitability { config, flow, policy } => cmd_exploitability(&config, &flow, &policy),
        Command::ProbeUniqueness { config } => cmd_probe(&config),
        Command::Counterexample { horizon, lambda_bar } => cmd_counterexample(horizon, lambda_bar),
        Command::ValidateModel { config, samples } => cmd_validate(&config, samples),
        Command::Selftest => Ok(cmd_selftest()),
    }
}

fn setup_workers(cfg: &RunConfig) {
    if let Some(n) = cfg.worker_count() {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

#[derive(Serialize)]
struct ReportFile<'a> {
    model: &'a str,
    converged: bool,
    iterations: usize,
    final_residual: f64,
    tol: f64,
    theta: f64,
    particles: usize,
    seed: u64,
    eval_seed: u64,
    init_seed: u64,
    n_steps: usize,
    n_cells: usize,
    substeps: usize,
    clamp_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reward_std_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exploitability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exploitability_std_error: Option<f64>,
}

/// Writes `config.toml`, `report.toml`, `residuals.csv`, `policy.csv` and
/// the `flow/` directory.
pub fn write_artifacts(dir: &Path, cfg: &RunConfig, rep: &EquilibriumReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let file = ReportFile {
        model: &cfg.model,
        converged: rep.converged,
        iterations: rep.iterations,
        final_residual: rep.final_residual(),
        tol: cfg.tol,
        theta: cfg.theta,
        particles: cfg.particles,
        seed: cfg.seed,
        eval_seed: cfg.eval_seed,
        init_seed: cfg.init_seed,
        n_steps: cfg.n_steps,
        n_cells: cfg.n_cells,
        substeps: cfg.substeps,
        clamp_fraction: rep.clamp_fraction,
        reward: rep.reward.map(|e| e.mean),
        reward_std_error: rep.reward.map(|e| e.std_error),
        exploitability: rep.exploitability.map(|e| e.mean),
        exploitability_std_error: rep.exploitability.map(|e| e.std_error),
    };
    std::fs::write(dir.join("report.toml"), toml::to_string(&file).map_err(|e| Error::Parse(e.to_string()))?)?;
    let mut w = csv::Writer::from_path(dir.join("residuals.csv"))?;
    w.write_record(["iteration", "residual", "J", "exploitability"])?;
    for k in 0..rep.iterations {
        w.write_record([
            k.to_string(),
            rep.residuals[k].to_string(),
            rep.rewards[k].to_string(),
            rep.exploit_history[k].map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    rep.flow.write_dir(&dir.join("flow"))?;
    rep.policy.write_csv(BufWriter::new(File::create(dir.join("policy.csv"))?), None)?;
    Ok(())
}

fn cmd_solve(path: &Path, output: Option<&Path>) -> Result<i32> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(o) = output {
        cfg.output_dir = o.to_path_buf();
    }
    setup_workers(&cfg);
    let model = cfg.model_spec()?;
    let grid = cfg.grid(&model)?;
    let rep = iterate(&model, grid, &cfg.iterate_config()?)?;
    write_artifacts(&cfg.output_dir, &cfg, &rep)?;
    println!(
        "{}: {} after {} iterations, residual {:.4e} (tol {:e})",
        cfg.model,
        if rep.converged { "converged" } else { "not converged" },
        rep.iterations,
        rep.final_residual(),
        cfg.tol
    );
    if let (Some(g), Some(j)) = (rep.exploitability, rep.reward) {
        println!("J = {:.6} ± {:.2e}, exploitability = {:.3e} ± {:.2e}", j.mean, j.std_error, g.mean, g.std_error);
    }
    println!("artifacts in {}", cfg.output_dir.display());
    Ok(if rep.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn cmd_exploitability(path: &Path, flow_dir: &Path, policy_path: &Path) -> Result<i32> {
    let cfg = RunConfig::load(path)?;
    setup_workers(&cfg);
    let model = cfg.model_spec()?;
    let grid = cfg.grid(&model)?;
    let opts = cfg.solver_options()?;
    let flow = MeasureFlow::read_dir(flow_dir, grid.clone())?;
    let state = state_grid_for(&model, &opts)?;
    let file = File::open(policy_path).map_err(|e| Error::Config {
        key: "policy".into(),
        detail: format!("{}: {e}", policy_path.display()),
    })?;
    let policy = FeedbackPolicy::read_csv(file, grid, state, model.actions.clone())?;
    let (gap, j) = exploitability(&model, &flow, &policy, &opts, cfg.eval_seed)?;
    println!("J = {:.6} ± {:.2e}", j.mean, j.std_error);
    println!("gap = {:.6e} ± {:.2e} (threshold {})", gap.mean, gap.std_error, cfg.exploit_threshold);
    Ok(if gap.mean <= cfg.exploit_threshold { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_probe(path: &Path) -> Result<i32> {
    let cfg = RunConfig::load(path)?;
    setup_workers(&cfg);
    let model = cfg.model_spec()?;
    let grid = cfg.grid(&model)?;
    let rep = uniqueness_probe(&model, grid, cfg.probe_starts, &cfg.iterate_config()?)?;
    for (r, run) in rep.runs.iter().enumerate() {
        println!(
            "start {r}: action {}, {} after {} iterations, residual {:.4e}",
            run.init_action,
            if run.converged { "converged" } else { "not converged" },
            run.iterations,
            run.final_residual
        );
    }
    match rep.max_distance {
        Some(d) => {
            println!("max pairwise flow distance {d:.4e} (bound {:e})", 5.0 * cfg.tol);
            Ok(if d <= 5.0 * cfg.tol { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        None => {
            println!("fewer than two converged runs; nothing to compare");
            Ok(EXIT_CHECK_FAILED)
        }
    }
}

fn cmd_counterexample(horizon: f64, lambda_bar: f64) -> Result<i32> {
    let (y0, contradiction) = counterexample_mean_map(horizon, lambda_bar).map_err(|e| Error::Config {
        key: "horizon".into(),
        detail: e.to_string(),
    })?;
    if contradiction {
        println!("implied y0 = {y0}, contradiction with mean {lambda_bar}");
        Ok(EXIT_CHECK_FAILED)
    } else {
        println!("implied y0 = {y0}, consistent with mean {lambda_bar}");
        Ok(EXIT_OK)
    }
}

fn cmd_validate(path: &Path, samples: usize) -> Result<i32> {
    let cfg = RunConfig::load(path)?;
    let model = cfg.model_spec()?;
    let rep = validate_growth(&model, samples, cfg.seed)?;
    for c in &rep.checks {
        println!("{:<22} {:?} worst ratio {:.4} {}", c.name, c.assumption, c.worst_ratio, if c.passed() { "ok" } else { "FAIL" });
    }
    let ok = rep.all_pass();
    println!("{}: {}", model.name, if ok { "all claimed conditions hold on the sample" } else { "violations found" });
    Ok(if ok { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn random_measure<R: Rng>(rng: &mut R, dim: usize, max_atoms: usize) -> EmpiricalMeasure {
    let k = rng.gen_range(1..=max_atoms);
    let pts: Vec<f64> = (0..k * dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let masses: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    EmpiricalMeasure::from_masses(dim, pts, masses).expect("valid random measure")
}

/// Largest discrepancy between the production transport solvers and the
/// LP oracle over random pairs.
pub fn oracle_discrepancy(pairs_1d: usize, pairs_2d: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut rng = stream(seed, 0xA1, 0, 0);
    for i in 0..pairs_1d + pairs_2d {
        let (dim, atoms) = if i < pairs_1d { (1, 8) } else { (2, 6) };
        let mu = random_measure(&mut rng, dim, atoms);
        let nu = random_measure(&mut rng, dim, atoms);
        let p = [1.0, 1.5, 2.0][i % 3];
        let lp = wasserstein_lp(&mu, &nu, p)?;
        let fast = if dim == 1 { wasserstein_p(&mu, &nu, p)? } else { exact_wasserstein_pow(&mu, &nu, p)?.powf(1.0 / p) };
        worst = worst.max((fast - lp).abs());
    }
    Ok(worst)
}

/// Statistical checks of the scenario grid: equiprobable cells, leaf
/// frequencies of sampled paths (largest z-score), and the conditional mean
/// of the upper half-line cell (z-score).
pub fn grid_statistics(paths: usize, seed: u64) -> Result<(f64, f64, f64)> {
    let mut cell_err: f64 = 0.0;
    for n_cells in 1..=7 {
        let g = ScenarioGrid::new(1.0, 1, n_cells, 1, 1)?;
        for p in g.cell_probs() {
            cell_err = cell_err.max((p - 1.0 / n_cells as f64).abs());
        }
    }
    let g = ScenarioGrid::new(1.0, 2, 3, 1, 1)?;
    let mut counts = vec![0usize; g.n_leaves()];
    let mut rng = stream(seed, 0xA2, 0, 0);
    for _ in 0..paths {
        let leaf = g.sample_leaf(&mut rng);
        counts[g.node_code(&leaf)?] += 1;
    }
    let mut worst_z: f64 = 0.0;
    for (code, &c) in counts.iter().enumerate() {
        let p = g.node_prob(2, code);
        let sd = (paths as f64 * p * (1.0 - p)).sqrt();
        worst_z = worst_z.max((c as f64 - paths as f64 * p).abs() / sd);
    }
    let half = ScenarioGrid::new(1.0, 1, 2, 1, 1)?;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for _ in 0..paths {
        let x = half.sample_conditional_increment(0, 1.0, &mut rng)[0];
        sum += x;
        sq += x * x;
    }
    let n = paths as f64;
    let mean = sum / n;
    let sd = (sq / n - mean * mean).sqrt();
    let target = (2.0 / std::f64::consts::PI).sqrt();
    Ok((cell_err, worst_z, (mean - target).abs() / (sd / n.sqrt())))
}

fn cmd_selftest() -> i32 {
    let mut ok = true;
    let mut line = |name: &str, pass: bool, detail: String| {
        println!("{name:<28} {} {detail}", if pass { "PASS" } else { "FAIL" });
        ok &= pass;
    };
    match oracle_discrepancy(300, 60, 17) {
        Ok(err) => line("wasserstein vs LP oracle", err <= 1e-9, format!("max error {err:.2e}")),
        Err(e) => line("wasserstein vs LP oracle", false, e.to_string()),
    }
    match grid_statistics(100_000, 23) {
        Ok((cells, z_leaf, z_mean)) => {
            line("equiprobable cells", cells <= 1e-12, format!("max error {cells:.2e}"));
            line("leaf frequencies", z_leaf <= 4.0, format!("max z {z_leaf:.2}"));
            line("conditional cell mean", z_mean <= 4.0, format!("z {z_mean:.2}"));
        }
        Err(e) => line("grid statistics", false, e.to_string()),
    }
    if ok {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}
