//! `stable-mckean` command-line front end.
//!
//! Exit status: 0 on success or PASS, 1 on a study FAIL, 2 on configuration
//! and other errors.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod artifacts;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use stable_mckean::config::ExperimentConfig;
use stable_mckean::empirical::{
    transport_cost, wasserstein_1d, wasserstein_exact_capped, EmpiricalMeasure,
    DEFAULT_ASSIGNMENT_CAP,
};
use stable_mckean::harness::{
    chaos_study, describe_system, empirical_rate_study, mollification_study, moment_study,
    stepsize_study, StudyKind, StudyReport,
};
use stable_mckean::integrator::simulate_interacting;
use stable_mckean::noise::{cf_check_grid, characteristic_exponent, empirical_cf, sample_many};
use stable_mckean::stats::{median, pairwise_sum};

use artifacts::{ArtifactSet, RunManifest};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "stable-mckean",
    version,
    about = "McKean-Vlasov particle simulations driven by alpha-stable noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-key override, e.g. `system.particles=512`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Artifact directory.
    #[arg(
        long,
        env = "STABLE_MCKEAN_OUT_DIR",
        default_value = "results",
        value_name = "PATH"
    )]
    out_dir: PathBuf,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Compare the empirical characteristic function of the configured noise
    /// with its closed form.
    NoiseCheck(Common),
    /// Wasserstein distance between two equal-size point clouds given as
    /// headerless CSV files, one point per row.
    Wasserstein {
        #[arg(long, value_name = "PATH")]
        a: PathBuf,
        #[arg(long, value_name = "PATH")]
        b: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        /// Largest support size for the exact solver.
        #[arg(long, default_value_t = DEFAULT_ASSIGNMENT_CAP)]
        cap: usize,
    },
    /// Run the interacting particle system and summarize the terminal law.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write every lattice state as `time,particle,coordinate,value`.
        #[arg(long)]
        dump_paths: bool,
    },
    /// Step-size convergence study.
    StudyDt(Common),
    /// Propagation-of-chaos study over particle counts.
    StudyN(Common),
    /// Increment-moment study over step sizes.
    StudyMoment(Common),
    /// Empirical-measure convergence rate of i.i.d. samples.
    StudyEmprate(Common),
    /// Coupled error of mollified drifts.
    StudyMollify(Common),
    /// Check a configuration without running anything.
    Validate(Common),
}

enum Outcome {
    Pass,
    Fail,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&common.config)
        .with_context(|| format!("reading {}", common.config.display()))?;
    Ok(ExperimentConfig::load(&text, &common.set, common.seed)?)
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Wasserstein { a, b, p, cap } => wasserstein(&a, &b, p, cap),
        Command::Validate(common) => {
            let cfg = load(&common)?;
            cfg.validate()?;
            let sys = cfg.system_config()?;
            println!("configuration OK (seed {})", cfg.seed);
            println!("{}", serde_json::to_string_pretty(&describe_system(&sys))?);
            Ok(Outcome::Pass)
        }
        Command::NoiseCheck(common) => with_artifacts("noise-check", &common, noise_check),
        Command::Simulate { common, dump_paths } => {
            with_artifacts("simulate", &common, |cfg, out| {
                simulate(cfg, out, dump_paths)
            })
        }
        Command::StudyDt(common) => study(StudyKind::StepSize, &common),
        Command::StudyN(common) => study(StudyKind::Chaos, &common),
        Command::StudyMoment(common) => study(StudyKind::Moment, &common),
        Command::StudyEmprate(common) => study(StudyKind::EmpiricalRate, &common),
        Command::StudyMollify(common) => study(StudyKind::Mollification, &common),
    }
}

/// Loads the configuration, runs `body` and writes the manifest.
fn with_artifacts(
    command: &str,
    common: &Common,
    body: impl FnOnce(&ExperimentConfig, &mut ArtifactSet) -> Result<Outcome>,
) -> Result<Outcome> {
    let cfg = load(common)?;
    init_threads(common.threads)?;
    let started = chrono::Utc::now();
    let clock = Instant::now();
    let mut out = ArtifactSet::new(
        &common.out_dir,
        command,
        &started.format("%Y%m%dT%H%M%SZ").to_string(),
        cfg.seed,
    )?;
    let outcome = body(&cfg, &mut out)?;
    for path in out.written() {
        println!("wrote {}", path.display());
    }
    let manifest = RunManifest {
        command: command.to_string(),
        version: VERSION.to_string(),
        seed: cfg.seed,
        resolved_config: cfg.resolved(),
        artifacts: Vec::new(),
        started_utc: started.to_rfc3339(),
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
    };
    let path = out.finish(manifest)?;
    println!("wrote {}", path.display());
    Ok(outcome)
}

fn pretty(value: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn noise_check(cfg: &ExperimentConfig, out: &mut ArtifactSet) -> Result<Outcome> {
    let params = cfg.noise_params()?;
    let m = cfg.noise.check_samples;
    let dt = cfg.noise.check_dt;
    if m == 0 || !(dt > 0.0) {
        bail!("noise.check_samples must be positive and noise.check_dt > 0");
    }
    let samples = sample_many(&params, dt, cfg.seed, m);
    let tolerance = 3.0 / (m as f64).sqrt() + 0.005;
    let header: Vec<String> = (1..=params.dim).map(|k| format!("u{k}")).collect();
    let mut csv = format!(
        "point,{},empirical_cf,exact_cf,abs_error\n",
        header.join(",")
    );
    let mut worst: f64 = 0.0;
    for (k, u) in cf_check_grid(params.dim).iter().enumerate() {
        let empirical = empirical_cf(&samples, u)?;
        let exact = (-dt * characteristic_exponent(&params, u)).exp();
        let err = (empirical - exact).abs();
        worst = worst.max(err);
        let coords: Vec<String> = u.iter().map(f64::to_string).collect();
        csv.push_str(&format!(
            "{k},{},{empirical},{exact},{err}\n",
            coords.join(",")
        ));
    }
    let pass = worst <= tolerance;
    out.write(".csv", &csv)?;
    out.write(
        ".json",
        &pretty(&json!({
            "command": "noise-check",
            "seed": cfg.seed,
            "noise": params,
            "samples": m,
            "dt": dt,
            "max_abs_error": worst,
            "tolerance": tolerance,
            "verdict": verdict(pass),
        }))?,
    )?;
    println!(
        "noise-check: {} (max |CF error| {worst:.5}, tolerance {tolerance:.5})",
        verdict(pass)
    );
    Ok(if pass { Outcome::Pass } else { Outcome::Fail })
}

fn simulate(cfg: &ExperimentConfig, out: &mut ArtifactSet, dump_paths: bool) -> Result<Outcome> {
    let sys = cfg.system_config()?;
    let path = simulate_interacting(&sys)?;
    let dim = sys.dim();
    let n = sys.particles;
    let terminal = path.terminal();
    let p = cfg.study.error_p;
    let mean: Vec<f64> = (0..dim)
        .map(|k| {
            pairwise_sum(
                &terminal
                    .iter()
                    .skip(k)
                    .step_by(dim)
                    .copied()
                    .collect::<Vec<_>>(),
            ) / n as f64
        })
        .collect();
    let norms: Vec<f64> = terminal
        .chunks_exact(dim)
        .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let pow: Vec<f64> = norms.iter().map(|r| r.powf(p)).collect();
    let summary = json!({
        "command": "simulate",
        "seed": cfg.seed,
        "system": describe_system(&sys),
        "steps": path.steps(),
        "adjusted_horizon": sys.adjusted_horizon(),
        "terminal": {
            "mean": mean,
            "p": p,
            "mean_norm_pow_p": pairwise_sum(&pow) / n as f64,
            "median_norm": median(&norms),
        },
        "resolved_config": cfg.resolved(),
    });
    if dump_paths {
        let mut csv = String::from("time,particle,coordinate,value\n");
        for k in 0..=path.steps() {
            let t = k as f64 * sys.delta;
            for i in 0..n {
                for (c, v) in path.state(k, i).iter().enumerate() {
                    csv.push_str(&format!("{t},{i},{c},{v}\n"));
                }
            }
        }
        out.write("-paths.csv", &csv)?;
    }
    out.write(".json", &pretty(&summary)?)?;
    println!(
        "simulate: {n} particles, {} steps to T = {}",
        path.steps(),
        sys.adjusted_horizon()
    );
    Ok(Outcome::Pass)
}

#[derive(Serialize)]
struct StudySummary<'a> {
    command: &'static str,
    seed: u64,
    resolved_config: Value,
    report: &'a StudyReport,
}

fn study(kind: StudyKind, common: &Common) -> Result<Outcome> {
    with_artifacts(kind.name(), common, |cfg, out| {
        let report = match kind {
            StudyKind::StepSize => stepsize_study(&cfg.study_config(kind)?)?,
            StudyKind::Chaos => chaos_study(&cfg.study_config(kind)?)?,
            StudyKind::Moment => moment_study(&cfg.study_config(kind)?)?,
            StudyKind::Mollification => mollification_study(&cfg.study_config(kind)?)?,
            StudyKind::EmpiricalRate => empirical_rate_study(&cfg.emprate_config()?)?,
        };
        out.write(".csv", &report.to_csv())?;
        let summary = StudySummary {
            command: kind.name(),
            seed: cfg.seed,
            resolved_config: cfg.resolved(),
            report: &report,
        };
        out.write(".json", &pretty(&summary)?)?;
        let slope = match (report.fit, report.theoretical_slope) {
            (Some(f), Some(t)) => format!(
                "slope {:.4} ± {:.4} (theory {t:.4})",
                f.slope,
                2.0 * f.stderr
            ),
            (Some(f), None) => format!("slope {:.4} ± {:.4}", f.slope, 2.0 * f.stderr),
            (None, _) => "slope undefined".to_string(),
        };
        let degenerate = if report.degenerate {
            ", degenerate"
        } else {
            ""
        };
        println!(
            "{}: {} {slope}{degenerate}",
            kind.name(),
            verdict(report.passed())
        );
        for d in &report.diagnostics {
            println!("  {d}");
        }
        Ok(if report.passed() {
            Outcome::Pass
        } else {
            Outcome::Fail
        })
    })
}

fn read_cloud(path: &Path) -> Result<EmpiricalMeasure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut points = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: row {}", path.display(), row + 1))?;
        let point = record
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .with_context(|| format!("{}: row {} is not numeric", path.display(), row + 1))?;
        points.push(point);
    }
    Ok(EmpiricalMeasure::from_points(&points)?)
}

fn wasserstein(a: &Path, b: &Path, p: f64, cap: usize) -> Result<Outcome> {
    let a = read_cloud(a)?;
    let b = read_cloud(b)?;
    let (method, value, kind) = if p < 1.0 {
        (
            "assignment",
            transport_cost(p, &a, &b, cap)?,
            "transport_cost",
        )
    } else if a.dim() == 1 {
        ("sorted_1d", wasserstein_1d(p, &a, &b)?, "distance")
    } else {
        (
            "assignment",
            wasserstein_exact_capped(p, &a, &b, cap)?,
            "distance",
        )
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "p": p,
            "points": a.len(),
            "dim": a.dim(),
            "method": method,
            kind: value,
        }))?
    );
    Ok(Outcome::Pass)
}
