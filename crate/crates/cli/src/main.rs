mod args;
mod commands;
mod failure;

use std::fs::File;
use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use serde_json::{json, Value};

use args::{Cli, Command, ConfigFile, Merge};
use failure::Failure;

fn init_logging(file: Option<&std::path::Path>, level: &str) -> Result<(), Failure> {
    let mut builder = env_logger::Builder::new();
    builder.parse_filters(level).format(|buf, record| {
        let text = record.args().to_string();
        let message = serde_json::from_str::<Value>(&text).unwrap_or(Value::String(text));
        let line = json!({
            "ts": buf.timestamp_millis().to_string(),
            "level": record.level().as_str(),
            "target": record.target(),
            "message": message,
        });
        writeln!(buf, "{line}")
    });
    if let Some(path) = file {
        let f = File::create(path).map_err(|e| Failure::Config(format!("log file {}: {e}", path.display())))?;
        builder.target(env_logger::Target::Pipe(Box::new(f)));
    }
    builder.try_init().map_err(|e| Failure::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let threads = cli.threads.or(file.threads);
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let level = cli.log_level.clone().or(file.log_level.clone()).unwrap_or_else(|| "info".into());
    init_logging(cli.log_file.as_deref().or(file.log_file.as_deref()), &level)?;
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    match cli.command {
        Command::TrainExperts(mut a) => {
            a.merge(file.train_experts);
            commands::train_experts(&a, seed)
        }
        Command::TrainRouter(mut a) => {
            a.merge(file.train_router);
            commands::train_router(&a, seed)
        }
        Command::Forecast(mut a) => {
            a.merge(file.forecast);
            commands::forecast(&a, seed)
        }
        Command::Evaluate(mut a) => {
            a.merge(file.evaluate);
            commands::evaluate_cmd(&a, seed)
        }
        Command::Analyze(mut a) => {
            a.merge(file.analyze);
            commands::analyze(&a, seed)
        }
        Command::SineExp(mut a) => {
            a.merge(file.sine_exp);
            commands::sine_exp(&a, seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
