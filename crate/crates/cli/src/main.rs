use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use dlc_cli::*;
use dlc_core::training::ModeId;

/// Headless load-change training runs.
///
/// Exit codes: 0 completed, 1 other failure, 2 safety shutdown,
/// 3 validation error.
#[derive(Parser)]
#[command(name = "dlc", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scenario mode, e.g. `cooperation_partner`.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<ModeId>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Trace format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Paces the run: simulated seconds per wall second.
    #[arg(long)]
    speed: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Runs one scenario to its end.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// JSON list of `{"at": step, "type": ..., "payload": ...}` operator commands.
        #[arg(long)]
        script: Option<PathBuf>,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Runs several scenarios and writes `summary.csv`.
    Batch {
        #[arg(long, num_args = 1.., required = true)]
        scenario: Vec<PathBuf>,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Checks scenario, plant, controller or trouble-catalog files.
    Validate {
        paths: Vec<PathBuf>,
        #[arg(long)]
        scenario: Vec<PathBuf>,
        /// Plant model for checking controllers and trouble catalogs.
        #[arg(long)]
        plant: Option<PathBuf>,
    },
    /// Rebuilds a session from its event log and prints its state.
    Replay {
        log: PathBuf,
        /// Also writes trace, score and plot data here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Writes plot series from an event log.
    ExportPlot {
        log: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

fn parse_mode(s: &str) -> Result<ModeId, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|_| {
        "expected task_performer, cooperation_partner, operation_advisor, safety_supervisor or troublemaker".to_string()
    })
}

fn spec(scenario: PathBuf, script: Option<PathBuf>, a: &RunArgs) -> RunSpec {
    RunSpec {
        scenario,
        mode: a.mode,
        seed: a.seed,
        out: a.out.clone(),
        format: a.format,
        script,
        speed: a.speed,
    }
}

fn line(r: &RunReport) -> String {
    let mut s = format!(
        "{}: {} after {} steps",
        r.name,
        status_name(r.status),
        r.steps
    );
    if let Some(m) = r.completed_min {
        s += &format!(", task done at {m} min");
    }
    if let Some(sc) = &r.score {
        s += &format!(", score {:.2}", sc.total);
    }
    s
}

fn exec(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Cmd::Run {
            scenario,
            script,
            args,
        } => {
            let r = run_scenario(&spec(scenario, script, &args))?;
            println!("{}", line(&r));
            Ok(r.exit_code)
        }
        Cmd::Batch { scenario, args } => {
            let specs: Vec<RunSpec> = scenario.into_iter().map(|p| spec(p, None, &args)).collect();
            let (reports, code) = run_batch(&specs, &args.out)?;
            for r in &reports {
                println!("{}", line(r));
            }
            Ok(code)
        }
        Cmd::Validate {
            mut paths,
            scenario,
            plant,
        } => {
            paths.extend(scenario);
            if paths.is_empty() {
                anyhow::bail!("nothing to validate");
            }
            let mut bad = false;
            for p in &paths {
                let findings = validate_file(p, plant.as_deref())?;
                if findings.is_empty() {
                    println!("{}: ok", p.display());
                } else {
                    bad = true;
                    for f in findings {
                        println!("{}: {f}", p.display());
                    }
                }
            }
            Ok(if bad { EXIT_INVALID } else { EXIT_COMPLETED })
        }
        Cmd::Replay { log, out, format } => {
            let mut s = replay_log(&log)?;
            println!("{}", serde_json::to_string_pretty(&s.summary())?);
            if let Some(dir) = out {
                write_artifacts(&mut s, &dir, format)?;
            }
            Ok(exit_code(&s))
        }
        Cmd::ExportPlot { log, out, format } => {
            let path = export_plot(&log, &out, format)?;
            println!("{}", path.display());
            Ok(EXIT_COMPLETED)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                EXIT_INVALID as u8
            } else {
                0
            });
        }
    };
    let code = exec(cli).unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        error_exit_code(&e)
    });
    ExitCode::from(code as u8)
}
