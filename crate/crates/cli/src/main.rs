//! `filippov`: batch runs of simulations, classifications and sweeps.

mod commands;
mod config;
mod sweep;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use filippov_core::manifold::ManifoldModel;

use config::{ParamValue, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl From<filippov_core::Error> for CliError {
    fn from(e: filippov_core::Error) -> Self {
        use filippov_core::Error::*;
        match e {
            Domain(_) | ModelMismatch(..) => CliError::Config(e.to_string()),
            NoReturn { .. } | NotFound(_) | Refused(_) | Numeric(_) => CliError::Numeric(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "filippov", version, about = "Simulate and classify Filippov flows on the torus and sphere")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML config, or a run manifest (`manifest.json`) to replay.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Scenario name (overrides `scenario.name`).
    #[arg(long)]
    scenario: Option<String>,
    /// Scenario parameter `key=value`; repeatable. Values may be exact, e.g. `a=1/3`.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// `torus` or `sphere`.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one trajectory; writes trajectory CSV, event JSONL and a summary.
    Simulate(Common),
    /// Global verdict for the scenario.
    Classify(Common),
    /// Displacement map on the section, its roots and their stability.
    ReturnMap(Common),
    /// Transit through p*, transitivity witnesses and sensitivity.
    ChaosCheck(Common),
    /// Homoclinic bands and sampled decomposition on the sphere.
    SphereDecompose(Common),
    /// Parameter sweep with transition refinement.
    Sweep(Common),
    /// Print the resolved configuration (defaults when no config is given).
    PrintConfig(Common),
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        None => RunConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            if path.extension().is_some_and(|e| e == "json") {
                let v: serde_json::Value =
                    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                let inner = v["config"]
                    .as_str()
                    .ok_or_else(|| CliError::Config(format!("{} has no \"config\" entry", path.display())))?;
                RunConfig::parse(inner)?
            } else {
                RunConfig::parse(&text)?
            }
        }
    };
    if let Some(s) = &common.scenario {
        if *s != cfg.scenario.name {
            cfg.scenario.params.clear();
            cfg.scenario.field = None;
        }
        cfg.scenario.name = s.clone();
    }
    for kv in &common.params {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--param {kv:?} is not key=value")))?;
        let value = match v.trim().parse::<f64>() {
            Ok(x) => ParamValue::Number(x),
            Err(_) => ParamValue::Exact(v.trim().to_string()),
        };
        cfg.scenario.params.insert(k.trim().to_string(), value);
    }
    if let Some(m) = &common.model {
        cfg.scenario.model = Some(m.parse::<ManifoldModel>().map_err(|e| CliError::Config(e.to_string()))?);
    }
    if let Some(o) = &common.out {
        cfg.output.dir = o.clone();
    }
    let seed = match std::env::var("FILIPPOV_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("FILIPPOV_SEED={s:?} is not an unsigned integer")))?,
        Err(_) => cfg.seed,
    };
    cfg.apply_seed(seed);
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, common) = match &cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::Classify(c) => ("classify", c),
        Command::ReturnMap(c) => ("return-map", c),
        Command::ChaosCheck(c) => ("chaos-check", c),
        Command::SphereDecompose(c) => ("sphere-decompose", c),
        Command::Sweep(c) => ("sweep", c),
        Command::PrintConfig(c) => ("print-config", c),
    };
    let cfg = load(common)?;
    if name == "print-config" {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let mut out = commands::Output::new(&cfg.output.dir)?;
    let summary = match name {
        "simulate" => commands::simulate(&cfg, &mut out)?,
        "classify" => commands::classify(&cfg, &mut out)?,
        "return-map" => commands::return_map(&cfg, &mut out)?,
        "chaos-check" => commands::chaos_check(&cfg, &mut out)?,
        "sphere-decompose" => commands::sphere_decompose(&cfg, &mut out)?,
        _ => sweep::sweep(&cfg, &mut out)?,
    };
    out.manifest(name, &cfg, &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("filippov: {e}");
            ExitCode::from(e.code())
        }
    }
}

pub(crate) fn params_of(s: &filippov_core::scenarios::Scenario) -> BTreeMap<String, String> {
    s.params.clone()
}
