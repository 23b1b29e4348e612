//! `tsd`: dataset building, training phases, the two-student loop,
//! evaluation and the label noise experiment.

mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;
use tsd_core::dataset::Split;

use commands::{EvalArgs, Phase};
use config::{parse_override, read_flat, Flat, RunConfig};
use error::CliResult;
use run::{resolve_run_dir, Run};

#[derive(Debug, Parser)]
#[command(
    name = "tsd",
    version,
    about = "Mixed-supervision target sound detection"
)]
struct Cli {
    /// JSON file of flat dotted config keys.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable. Values are read as JSON when
    /// they parse, as strings otherwise.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the toy corpus and write source/target manifests.
    BuildDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one training phase inside a run directory.
    Train {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum)]
        phase: Phase,
        #[arg(long)]
        no_adversarial: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Alternate the two students until the validation score stops improving.
    Iterate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        max_iterations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint of the run and write the report CSV.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        /// Checkpoint stem inside the run directory.
        #[arg(long, alias = "checkpoint", default_value = "f_final")]
        model: String,
        /// Defaults to the strongly labelled target manifest of the run.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "test", value_parser = commands::parse_split)]
        split: Split,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        median_window: Option<usize>,
        #[arg(long)]
        segment_len: Option<f64>,
        #[arg(long)]
        onset_collar: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on target frame labels corrupted at each rate.
    NoiseExp {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        rates: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn layers(cli: &Cli, extra: Vec<(String, Value)>) -> CliResult<Vec<Flat>> {
    let mut out = Vec::new();
    if let Some(path) = &cli.config {
        out.push(read_flat(path)?);
    }
    let mut sets = Flat::new();
    for s in &cli.sets {
        let (k, v) = parse_override(s)?;
        sets.insert(k, v);
    }
    sets.extend(extra);
    out.push(sets);
    Ok(out)
}

fn print(v: &impl serde::Serialize) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn seed_key(seed: Option<u64>) -> Vec<(String, Value)> {
    seed.map(|s| ("train.seed".to_string(), Value::from(s)))
        .into_iter()
        .collect()
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::BuildDataset { out, seed } => {
            let extra = seed
                .map(|s| ("dataset.seed".to_string(), Value::from(s)))
                .into_iter()
                .collect();
            let cfg = config::merge(&RunConfig::default(), &layers(cli, extra)?)?;
            print(&commands::build_dataset(&cfg, out)?)
        }
        Command::Train {
            run,
            phase,
            no_adversarial,
            seed,
            epochs,
        } => {
            let mut extra = seed_key(*seed);
            if *no_adversarial {
                extra.push(("train.adversarial".into(), Value::Bool(false)));
            }
            if let Some(e) = epochs {
                extra.push((phase.epochs_key().into(), Value::from(*e)));
            }
            let run = Run::open(&resolve_run_dir(run), &layers(cli, extra)?)?;
            let r = commands::train(&run, *phase)?;
            print(&serde_json::json!({
                "phase": r.phase,
                "epochs": r.epochs.len(),
                "best_epoch": r.best_epoch,
                "validation": r.validation,
                "checkpoint": run.dir.join(format!("{}.ckpt", phase.stem())),
            }))
        }
        Command::Iterate {
            run,
            max_iterations,
            seed,
        } => {
            let mut extra = seed_key(*seed);
            if let Some(m) = max_iterations {
                extra.push(("train.max_iterations".into(), Value::from(*m)));
            }
            let run = Run::open(&resolve_run_dir(run), &layers(cli, extra)?)?;
            let log = commands::iterate(&run)?;
            print!("{}", tsd_core::training::iterations_csv(&log));
            Ok(())
        }
        Command::Evaluate {
            run,
            model,
            manifest,
            split,
            threshold,
            median_window,
            segment_len,
            onset_collar,
            out,
        } => {
            let run = Run::existing(&resolve_run_dir(run))?;
            let mut eval = run.cfg.train.eval.clone();
            if let Some(t) = threshold {
                eval.threshold = *t;
            }
            if let Some(m) = median_window {
                eval.median_window = *m;
            }
            if let Some(s) = segment_len {
                eval.segment_len = *s;
            }
            if let Some(c) = onset_collar {
                eval.onset_collar = *c;
            }
            let outcome = commands::evaluate(
                &run,
                &EvalArgs {
                    model: model.clone(),
                    manifest: manifest.clone(),
                    split: *split,
                    eval,
                    out: out.clone(),
                },
            )?;
            print!("{}", outcome.csv);
            Ok(())
        }
        Command::NoiseExp { run, rates, seed } => {
            let run = Run::open(&resolve_run_dir(run), &layers(cli, seed_key(*seed))?)?;
            print!(
                "{}",
                tsd_core::training::noise_curve_csv(&commands::noise_exp(&run, rates)?)
            );
            Ok(())
        }
        Command::Report { run } => {
            print(&commands::report(&Run::existing(&resolve_run_dir(run))?)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn phase_and_split_parse() {
        let cli = Cli::try_parse_from([
            "tsd",
            "--set",
            "train.epochs=2",
            "train",
            "--run",
            "r",
            "--phase",
            "w_source_kd",
        ])
        .unwrap();
        assert!(matches!(
            cli.command,
            Command::Train {
                phase: Phase::WSourceKd,
                ..
            }
        ));
        assert!(Cli::try_parse_from(["tsd", "train", "--run", "r", "--phase", "nope"]).is_err());
        let cli = Cli::try_parse_from(["tsd", "evaluate", "--run", "r", "--split", "val"]).unwrap();
        assert!(matches!(
            cli.command,
            Command::Evaluate {
                split: Split::Val,
                ..
            }
        ));
        let cli = Cli::try_parse_from([
            "tsd",
            "noise-exp",
            "--run",
            "r",
            "--rates",
            "0,0.1,0.2,0.35,0.5",
        ])
        .unwrap();
        assert!(matches!(cli.command, Command::NoiseExp { ref rates, .. } if rates.len() == 5));
    }
}
