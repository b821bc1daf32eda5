use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use exrob_core::explainers::{explain, ExplainerConfig, MethodId};
use exrob_core::harness::{
    load_report, render_markdown, run_to_dir, write_verdicts, RunConfig, EXIT_ERROR,
    EXIT_NOT_ROBUST, EXIT_ROBUST,
};
use exrob_core::model::{InputOutputPair, Model};
use exrob_core::scenarios::{run_scenario, ScenarioFixture, ScenarioId};
use exrob_core::{Error, Result};

/// Robustness criteria for feature-attribution explanations.
#[derive(Parser)]
#[command(name = "exrob", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full analysis described by a config file.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config and EXROB_OUTPUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run one packaged scenario and compare with its expected verdicts.
    Scenario {
        id: ScenarioId,
        /// Use this fixture file instead of the packaged one.
        #[arg(long, alias = "fixture")]
        config: Option<PathBuf>,
        /// Write the result JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Explain one input under a saved model.
    Explain {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated feature values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        input: Vec<f64>,
        #[arg(long)]
        method: MethodId,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        baseline: Option<Vec<f64>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Parse and validate a config file, then print it with defaults filled in.
    ValidateConfig { config: PathBuf },
    /// Re-render the report of a finished run.
    Report {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Md)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Md,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(EXIT_ERROR as u8),
            };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Run { config, out, threads } => {
            let mut cfg = RunConfig::load(&config)?;
            if threads.is_some() {
                cfg.threads = threads;
                cfg.validate()?;
            }
            let dir = out.unwrap_or_else(|| cfg.output_dir());
            let outcome = run_to_dir(&cfg, &dir)?;
            let s = &outcome.report.summary;
            println!(
                "{}: EMR-robust [{}], ER {}",
                if s.robust { "robust" } else { "not robust" },
                s.emr_robust.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(", "),
                match s.er_robust {
                    Some(true) => "pass",
                    Some(false) => "fail",
                    None => "not applicable",
                }
            );
            for r in &s.reasons {
                println!("  {r}");
            }
            println!("report written to {}", dir.display());
            Ok(outcome.report.exit_code())
        }
        Command::Scenario { id, config, out } => {
            let fx = match config {
                Some(p) => ScenarioFixture::from_json(&std::fs::read_to_string(p)?)?,
                None => ScenarioFixture::builtin(id)?,
            };
            if fx.id != id {
                return Err(Error::Config(format!("fixture is for `{}`, not `{id}`", fx.id)));
            }
            let result = run_scenario(&fx)?;
            let json = serde_json::to_string_pretty(&result)? + "\n";
            match out {
                Some(p) => std::fs::write(p, json)?,
                None => print!("{json}"),
            }
            for o in result.observed.iter().filter(|o| !o.matches()) {
                eprintln!(
                    "mismatch: {} {} {:?}: observed {:?}, expected {:?}",
                    o.arm, o.criterion, o.methods, o.pass, o.expected
                );
            }
            for r in result.regressions.iter().filter(|r| !r.ok) {
                eprintln!("regression: {} observed {:?}", r.name, r.observed);
            }
            Ok(if result.agreement && result.regressions_ok() {
                EXIT_ROBUST
            } else {
                EXIT_NOT_ROBUST
            })
        }
        Command::Explain {
            model,
            input,
            method,
            baseline,
            seed,
            samples,
        } => {
            let m = Model::from_json(&std::fs::read_to_string(&model)?)?;
            let mut cfg = ExplainerConfig {
                baseline,
                ..ExplainerConfig::default()
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = samples {
                cfg.samples = n;
            }
            let pair = InputOutputPair::new(&m, 0, input)?;
            let e = explain(method, &m, &pair, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&e)?);
            Ok(EXIT_ROBUST)
        }
        Command::ValidateConfig { config } => {
            let cfg = RunConfig::load(&config)?;
            println!("{}", cfg.to_json()?);
            Ok(EXIT_ROBUST)
        }
        Command::Report { dir, format } => report(&dir, format),
    }
}

fn report(dir: &Path, format: Format) -> Result<i32> {
    let r = load_report(dir)?;
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&r)?),
        Format::Md => print!("{}", render_markdown(&r)),
        Format::Csv => write_verdicts(&r, &mut std::io::stdout().lock())?,
    }
    Ok(EXIT_ROBUST)
}
