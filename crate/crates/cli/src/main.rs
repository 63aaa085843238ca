mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use normbundle::Error;
use serde_json::{json, Value};

use commands::{Context, Output};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "normbundle", version, about = "Bundled norm adoption: simulate, estimate, solve and project")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic panel from [simulation] and [theta].
    Simulate(Args),
    /// Maximum likelihood with corrected standard errors.
    Estimate(Args),
    /// All fixed points of the best-response map.
    Equilibrium(Args),
    /// Complements or substitutes at each stable equilibrium.
    Classify(Args),
    /// Policy minus baseline share paths.
    Counterfactual(Args),
    /// Period shares net of fixed effects and covariates.
    Residualize(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Token recoding before parsing, `column=from:to` or `column=zero`.
    #[arg(long = "recode")]
    recode: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (name, args) = match Cli::parse().command {
        Command::Simulate(a) => ("simulate", a),
        Command::Estimate(a) => ("estimate", a),
        Command::Equilibrium(a) => ("equilibrium", a),
        Command::Classify(a) => ("classify", a),
        Command::Counterfactual(a) => ("counterfactual", a),
        Command::Residualize(a) => ("residualize", a),
    };
    run(name, args)
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

fn run(name: &str, args: Args) -> ExitCode {
    let started = Instant::now();
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let loaded = RunConfig::load(&args.config).map(|mut c| {
        if let Some(seed) = args.seed {
            c.seed = seed;
        }
        c
    });
    let out = args
        .out
        .clone()
        .or_else(|| loaded.as_ref().ok().and_then(|c| c.output.dir.clone()).map(PathBuf::from));
    if let Some(dir) = &out {
        if let Err(e) = std::fs::create_dir_all(dir) {
            eprintln!("error [io_error]: cannot create {}: {e}", dir.display());
            return ExitCode::from(2);
        }
    }
    let (config_json, output) = match loaded {
        Ok(config) => {
            let ctx = Context {
                config,
                data: args.data,
                out: out.clone(),
                recode: args.recode,
            };
            let result = match name {
                "simulate" => commands::simulate_cmd(&ctx),
                "estimate" => commands::estimate_cmd(&ctx),
                "equilibrium" => commands::equilibrium_cmd(&ctx),
                "classify" => commands::classify_cmd(&ctx),
                "counterfactual" => commands::counterfactual_cmd(&ctx),
                _ => commands::residualize_cmd(&ctx),
            };
            let output = result.unwrap_or_else(|e| Output {
                error: Some(e),
                ..Output::default()
            });
            (serde_json::to_value(&ctx.config).expect("config serializes"), output)
        }
        Err(e) => (
            Value::Null,
            Output {
                error: Some(e),
                ..Output::default()
            },
        ),
    };
    let error_json = output
        .error
        .as_ref()
        .map(|e| json!({"code": e.code(), "message": e.to_string()}));
    let timing = json!({"started_unix": stamp, "elapsed_seconds": started.elapsed().as_secs_f64()});
    let report = report::envelope(name, config_json, output.results, &output.warnings, error_json, timing);

    print!("{}", output.text);
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(dir) = &out {
        let files = [("report.json", report::to_bytes(&report)), ("report.txt", output.text.into_bytes())];
        for (file, bytes) in files {
            if let Err(e) = std::fs::write(dir.join(file), bytes) {
                eprintln!("error [io_error]: cannot write {file}: {e}");
                return ExitCode::from(2);
            }
        }
    }
    match &output.error {
        None => ExitCode::SUCCESS,
        Some(e) => {
            eprintln!("error [{}]: {e}", e.code());
            ExitCode::from(exit_code(e))
        }
    }
}
