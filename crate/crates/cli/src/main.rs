//! `fracinv`: config-driven experiment runner.
//!
//! Every subcommand reads a TOML config, writes the resolved config, a JSON
//! report and CSV tables into a fresh run directory, and exits 0 only when
//! every asserted check passes (1 on a failed check, 2 on a config or usage
//! error).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod config;
mod pipelines;
mod report;

use config::ExperimentConfig;
use pipelines::Ctx;
use report::{Report, RunDir};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("check `{id}` failed: {detail}")]
    Check { id: String, detail: String },
}

impl CliError {
    pub fn schema(path: &str, message: String) -> Self {
        Self::Schema { path: path.into(), message }
    }

    pub fn check(id: &str, detail: impl std::fmt::Display) -> Self {
        Self::Check { id: id.into(), detail: detail.to_string() }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::Schema { .. } | Self::Usage(_) => 2,
            Self::Check { .. } => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "fracinv", version, about = "Fractional Schrödinger inverse-problem experiments on discrete manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory (default: config `out`, then `runs/<command>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Strip interior data from exported Cauchy data.
    #[arg(long, global = true)]
    blind: bool,
    /// Enable stages that compare against the hidden truth.
    #[arg(long, global = true)]
    oracle: bool,
    /// Reuse a non-empty run directory / accept golden drift.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generate Cauchy data.
    Forward,
    /// Recover eigenvalues and restricted eigenfunctions from Cauchy data.
    SpectralRecover,
    /// Normalize recovered spectral data and run the support checks.
    Normalize,
    /// Recover the potential off O.
    Potential,
    /// Unique-continuation and entanglement diagnostics.
    Entangle,
    /// Validate the heat-semigroup representations.
    Heatcheck,
    /// Antipodal sets and observability constant.
    Geometry,
    /// Gauge round trip through an O-fixing automorphism.
    Gauge,
    /// Forward, spectral recovery, normalization and potential recovery.
    All,
    /// Recompute discretization-dependent golden values (needs --oracle).
    RegenGolden,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::SpectralRecover => "spectral-recover",
            Command::Normalize => "normalize",
            Command::Potential => "potential",
            Command::Entangle => "entangle",
            Command::Heatcheck => "heatcheck",
            Command::Geometry => "geometry",
            Command::Gauge => "gauge",
            Command::All => "all",
            Command::RegenGolden => "regen-golden",
        }
    }
}

fn run(cli: Cli) -> Result<Vec<String>, CliError> {
    let name = cli.command.name();
    let path = cli.common.config.as_ref().ok_or_else(|| CliError::Usage("--config PATH is required".into()))?;
    if cli.command == Command::RegenGolden && !cli.common.oracle {
        return Err(CliError::Usage("regen-golden runs oracle computations; pass --oracle".into()));
    }
    let cfg = ExperimentConfig::load(path)?.resolve(name, cli.common.seed);
    let hash = cfg.hash();
    if cli.command == Command::RegenGolden {
        return regen_golden(cfg, &cli.common, path);
    }
    let out = cli.common.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("runs").join(name));
    let dir = RunDir::create(&out, cli.common.force)?;
    dir.write("config.resolved.toml", &cfg.to_toml())?;
    let report = Report::new(name, hash, cfg.seed, cli.common.blind, cli.common.oracle);
    let mut ctx = Ctx::new(cfg, dir, report, cli.common.blind, cli.common.oracle)?;
    let outcome = match cli.command {
        Command::Forward => pipelines::forward(&mut ctx).map(|_| ()),
        Command::SpectralRecover => pipelines::forward(&mut ctx).and_then(|d| pipelines::spectral_recover(&mut ctx, &d)).map(|_| ()),
        Command::Normalize => pipelines::forward(&mut ctx)
            .and_then(|d| pipelines::spectral_recover(&mut ctx, &d))
            .and_then(|(_, rec)| pipelines::normalize_stage(&mut ctx, &rec)),
        Command::Potential => pipelines::forward(&mut ctx).and_then(|d| pipelines::potential_stage(&mut ctx, &d)),
        Command::Entangle => pipelines::entangle(&mut ctx),
        Command::Heatcheck => pipelines::heatcheck(&mut ctx),
        Command::Geometry => pipelines::geometry(&mut ctx),
        Command::Gauge => pipelines::gauge(&mut ctx),
        Command::All => pipelines::all(&mut ctx),
        Command::RegenGolden => unreachable!("handled above"),
    };
    ctx.dir.write("report.json", &ctx.report.to_json())?;
    outcome?;
    Ok(ctx.report.failed().into_iter().map(String::from).collect())
}

const DRIFT_TOLERANCE: f64 = 1e-6;

fn regen_golden(cfg: ExperimentConfig, common: &Common, config_path: &std::path::Path) -> Result<Vec<String>, CliError> {
    let stem = config_path.file_stem().and_then(|s| s.to_str()).unwrap_or("config").to_string();
    let root = common.out.clone().unwrap_or_else(|| PathBuf::from("golden"));
    std::fs::create_dir_all(&root).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", root.display())))?;
    let target = root.join(format!("{stem}.json"));
    let hash = cfg.hash();
    let seed = cfg.seed;
    // golden runs do not keep a run directory; stage files go to a scratch dir
    let scratch = std::env::temp_dir().join(format!("fracinv-golden-{}-{stem}", std::process::id()));
    let dir = RunDir::create(&scratch, true)?;
    let report = Report::new("regen-golden", hash.clone(), seed, false, true);
    let mut ctx = Ctx::new(cfg, dir, report, false, true)?;
    let values = pipelines::golden_values(&mut ctx);
    let _ = std::fs::remove_dir_all(&scratch);
    let values = values?;
    let doc = serde_json::json!({
        "provenance": {
            "config": stem,
            "config_hash": hash,
            "seed": seed,
            "versions": ctx.report.versions,
        },
        "values": values,
    });
    let mut text = serde_json::to_string_pretty(&round_json(doc)).expect("json");
    text.push('\n');
    if let Ok(old) = std::fs::read_to_string(&target) {
        if let Some(id) = drift(&old, &text) {
            if !common.force {
                return Err(CliError::check("golden.drift", format!("{id} moved beyond {DRIFT_TOLERANCE:e}; pass --force to accept")));
            }
        }
    }
    std::fs::write(&target, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", target.display())))?;
    println!("wrote {}", target.display());
    Ok(Vec::new())
}

fn round_json(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Number(n) if n.is_f64() => report::round(n.as_f64().expect("f64")),
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

/// First value under `values` that moved by more than the drift tolerance.
fn drift(old: &str, new: &str) -> Option<String> {
    let parse = |s: &str| serde_json::from_str::<serde_json::Value>(s).ok().and_then(|v| v.get("values").cloned());
    let (Some(a), Some(b)) = (parse(old), parse(new)) else {
        return Some("values".into());
    };
    let (a, b) = (a.as_object()?, b.as_object()?);
    for (k, va) in a {
        let vb = b.get(k);
        let moved = match (va.as_f64(), vb.and_then(|v| v.as_f64())) {
            (Some(x), Some(y)) => (x - y).abs() > DRIFT_TOLERANCE * x.abs().max(y.abs()).max(1e-300),
            _ => Some(va) != vb,
        };
        if moved {
            return Some(k.clone());
        }
    }
    None
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(failed) if failed.is_empty() => ExitCode::SUCCESS,
        Ok(failed) => {
            eprintln!("failed checks: {}", failed.join(", "));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
