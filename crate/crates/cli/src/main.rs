use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metagcn::experiment::{report_from_dir, run_experiment, ExperimentConfig, ReportFormat};
use metagcn::{gradcheck, Error};

#[derive(Parser)]
#[command(name = "metagcn", version, about = "Meta-learned example weighting for imbalanced node classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method over every seed and write the result table.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Config overrides as `--section.key value` or `--section.key=value`,
        /// plus `--seeds N` and `--out DIR`.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
        overrides: Vec<String>,
    },
    /// Rebuild the result table from a run directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Numeric(_) | Error::Shape { .. } | Error::Contract(_) => 3,
        _ => 2,
    }
}

fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let key = a
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected `--key value`, found `{a}`")))?;
        match key.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Config(format!("missing value for `--{key}`")))?;
                out.push((key.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = ExperimentConfig::from_file(&config, &parse_overrides(&overrides)?)?;
            let table = run_experiment(&cfg)?;
            print!("{}", table.to_text());
            let failed: usize = table.rows.iter().map(|r| r.n_failed).sum();
            if failed > 0 {
                log::error!("{failed} cell(s) failed; see metrics.json under {}", cfg.out_dir.display());
                return Ok(3);
            }
            Ok(0)
        }
        Command::Report { input, format } => {
            let format: ReportFormat = format.parse()?;
            print!("{}", report_from_dir(&input)?.render(format)?);
            Ok(0)
        }
        Command::Gradcheck { seed } => {
            let mut ok = true;
            for r in gradcheck::run_all(seed)? {
                println!(
                    "{} {:<28} instances={:<3} entries={:<5} max_rel_error={:.3e} failures={}",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.name,
                    r.instances,
                    r.entries,
                    r.max_rel_error,
                    r.failures
                );
                ok &= r.passed();
            }
            Ok(if ok { 0 } else { 3 })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
