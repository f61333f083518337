use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use seqmt::harness::figures::{figure_data, write_figure, FigureOptions, FIGURES};
use seqmt::harness::{bounds_report, calibrate_experiment, run_csv, run_experiment, Experiment, ExperimentSpec};
use seqmt::Error;

/// Sequential multiple testing experiments.
#[derive(Parser)]
#[command(name = "seqmt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every procedure of an experiment file on its truths.
    Run {
        config: PathBuf,
        /// Overrides the file's worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Calibrate every procedure of an experiment file and print the reports.
    Calibrate {
        config: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the first-order constants of an experiment's bank and truths.
    Bounds { config: PathBuf },
    /// Write the datasets of a figure.
    Figure {
        /// One of 5.1, 5.2, A.1, A.2, E.4.
        id: String,
        /// Multiplies the default trial count.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Err grid point; repeat to give several.
        #[arg(long = "err")]
        errs: Vec<f64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Calibration(_) => 3,
        Error::AbortRate { .. } => 4,
        _ => 2,
    }
}

fn load(config: &Path, workers: Option<usize>) -> seqmt::Result<Experiment> {
    let mut spec = ExperimentSpec::from_path(config)?;
    if let Some(w) = workers {
        spec.workers = w;
    }
    Experiment::new(spec)
}

fn json<T: Serialize>(v: &T) -> seqmt::Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn write(path: &str, text: &str) -> seqmt::Result<()> {
    let p = Path::new(path);
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(p, text)?;
    eprintln!("wrote {path}");
    Ok(())
}

fn execute(cmd: Command) -> seqmt::Result<u8> {
    match cmd {
        Command::Run { config, workers } => {
            let exp = load(&config, workers)?;
            let r = run_experiment(&exp)?;
            let out = &exp.spec.output;
            let text = json(&r)?;
            match &out.json {
                Some(p) => write(p, &text)?,
                None => println!("{text}"),
            }
            if let Some(p) = &out.csv {
                write(p, &run_csv(&r))?;
            }
            if r.abort_breach {
                eprintln!("horizon-cap abort rate above tolerance in at least one cell");
                return Ok(4);
            }
        }
        Command::Calibrate { config, workers } => {
            let exp = load(&config, workers)?;
            println!("{}", json(&calibrate_experiment(&exp)?)?);
        }
        Command::Bounds { config } => {
            let exp = load(&config, None)?;
            println!("{}", json(&bounds_report(&exp)?)?);
        }
        Command::Figure {
            id,
            scale,
            seed,
            workers,
            out,
            errs,
        } => {
            if !FIGURES.contains(&id.as_str()) {
                return Err(Error::UnknownFigure(id));
            }
            if workers == 0 {
                return Err(Error::Config("workers must be >= 1".into()));
            }
            let opts = FigureOptions {
                scale,
                seed,
                workers,
                out,
                errs: (!errs.is_empty()).then_some(errs),
            };
            let fig = figure_data(&id, &opts)?;
            for p in write_figure(&fig, &opts.out)? {
                println!("{}", p.display());
            }
            if !fig.abort_warnings.is_empty() {
                for w in &fig.abort_warnings {
                    eprintln!("{w}");
                }
                return Ok(4);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
