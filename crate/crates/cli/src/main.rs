use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kdvlab::experiment::STATUS_INVALID;
use kdvlab::verify::{mutation_smoke, run_criterion, VerifyReport, CRITERIA};
use kdvlab::{ExperimentConfig, ExperimentKind, Level};

/// Experiment runner for the periodic KdV laboratory.
#[derive(Parser, Debug)]
#[command(name = "kdvlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Periodic and Dirichlet spectrum of the Hill operator.
    Spectrum(RunArgs),
    /// Action variables, Percival residual and V.
    Actions(RunArgs),
    /// Unperturbed KdV flow with conservation checks.
    Evolve(RunArgs),
    /// Perturbed flow (dissipative, external force or smoothing map).
    Perturb(RunArgs),
    /// Ensemble of randomly forced paths.
    Ensemble(RunArgs),
    /// Resonance indicator and occupation along a trajectory.
    Resonance(RunArgs),
    /// Sobolev norm growth under amplitude rescaling.
    Scaling(RunArgs),
    /// Samples of an admissible Gaussian measure.
    Measure(RunArgs),
    /// Runs the acceptance battery.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML config, or the JSON sidecar of an earlier artifact.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `out`, then
    /// `$KDVLAB_OUT/<kind>`, then `kdvlab-out/<kind>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value = "fast")]
    level: Level,
    /// Directory for `verify.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Criterion ids to run; all when empty.
    ids: Vec<u32>,
}

fn out_root() -> Option<PathBuf> {
    std::env::var_os("KDVLAB_OUT").filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn out_dir(args: &RunArgs, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(o) = &args.out {
        return o.clone();
    }
    if let Some(o) = &cfg.out {
        return o.clone();
    }
    out_root().unwrap_or_else(|| PathBuf::from("kdvlab-out")).join(cfg.kind.name())
}

fn invalid(errors: &[String]) -> ExitCode {
    let doc = serde_json::json!({ "status": STATUS_INVALID, "errors": errors });
    eprintln!("{doc}");
    ExitCode::from(STATUS_INVALID as u8)
}

fn run_experiment(kind: ExperimentKind, args: &RunArgs) -> ExitCode {
    let mut cfg = match ExperimentConfig::from_path(&args.config) {
        Ok(c) => c,
        Err(kdvlab::Error::Config(e)) => return invalid(&e),
        Err(e) => return invalid(&[e.to_string()]),
    };
    if cfg.kind != kind {
        return invalid(&[format!("config kind is {}, subcommand is {kind}", cfg.kind)]);
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let dir = out_dir(args, &cfg);
    let report = kdvlab::run(&cfg, &dir);
    if report.status == STATUS_INVALID {
        return invalid(&report.errors);
    }
    for c in &report.checks {
        log::info!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    ExitCode::from(report.status as u8)
}

fn verify(args: &VerifyArgs) -> ExitCode {
    let all = args.ids.is_empty();
    let ids: Vec<u32> = if all { CRITERIA.iter().map(|c| c.0).collect() } else { args.ids.clone() };
    let mut report = VerifyReport { level: args.level, outcomes: vec![] };
    for id in ids {
        let o = run_criterion(id, args.level);
        println!("{o}");
        report.outcomes.push(o);
    }
    let mut smoke_ok = true;
    if all {
        let (ok, detail) = mutation_smoke();
        println!("[{}] mutation smoke: {detail}", if ok { "PASS" } else { "FAIL" });
        smoke_ok = ok;
    }
    if let Some(dir) = args.out.clone().or_else(|| out_root().map(|r| r.join("verify"))) {
        if let Err(e) = write_verify(&dir, &report) {
            eprintln!("cannot write verify report: {e}");
            return ExitCode::from(3);
        }
    }
    if report.all_passed() && smoke_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn write_verify(dir: &Path, report: &VerifyReport) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("verify.csv"), report.to_csv())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Spectrum(a) => run_experiment(ExperimentKind::Spectrum, a),
        Command::Actions(a) => run_experiment(ExperimentKind::Actions, a),
        Command::Evolve(a) => run_experiment(ExperimentKind::Evolve, a),
        Command::Perturb(a) => run_experiment(ExperimentKind::Perturb, a),
        Command::Ensemble(a) => run_experiment(ExperimentKind::Ensemble, a),
        Command::Resonance(a) => run_experiment(ExperimentKind::Resonance, a),
        Command::Scaling(a) => run_experiment(ExperimentKind::Scaling, a),
        Command::Measure(a) => run_experiment(ExperimentKind::Measure, a),
        Command::Verify(a) => verify(a),
    }
}
