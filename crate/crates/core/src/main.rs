use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wmdrive::pipeline::{Condition, Pipeline, RunConfig};
use wmdrive::{Error, Result};

#[derive(Parser)]
#[command(name = "wmdrive", version, about = "World-model driving pipeline")]
struct Cli {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master seed.
    #[arg(long, env = "WMDRIVE_SEED", global = true)]
    seed: Option<u64>,
    #[arg(long, default_value = "run", global = true)]
    run_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect driving episodes into <run-dir>/dataset.
    Collect {
        #[arg(long)]
        episodes: Option<usize>,
        /// scripted, random or controller.
        #[arg(long)]
        driver: Option<String>,
    },
    TrainVae,
    TrainRnn,
    TrainController,
    /// Evaluate the trained agent on one condition.
    Evaluate {
        /// train, new_town, new_weather or new_both.
        #[arg(long, default_value = "train")]
        condition: String,
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Dump observed and reconstructed frames of one evaluation episode.
    Render {
        #[arg(long, default_value = "train")]
        condition: String,
        #[arg(long, default_value_t = 0)]
        pair: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate every condition and write report.txt and report.csv.
    Report,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Command::Collect { episodes, driver } = &cli.command {
        if let Some(n) = episodes {
            cfg.set("collect.episodes", &n.to_string())?;
        }
        if let Some(d) = driver {
            cfg.set("collect.driver", d)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let p = Pipeline::new(&cli.run_dir, cfg)?;
    match cli.command {
        Command::Collect { .. } => {
            let eps = p.collect()?;
            let ok = eps.iter().filter(|e| e.termination == drivesim::Termination::Success).count();
            let frames: usize = eps.iter().map(|e| e.frames.len()).sum();
            println!("collected {} episodes ({ok} reached the goal), {frames} frames", eps.len());
        }
        Command::TrainVae => {
            let (_, h) = p.train_vae()?;
            let last = h.last().expect("at least one epoch");
            println!("vae: {} epochs, final loss {:.6}", h.len(), last.total);
        }
        Command::TrainRnn => {
            let (_, h) = p.train_rnn()?;
            let last = h.last().expect("at least one epoch");
            println!("rnn: {} epochs, final loss {:.6}", h.len(), last.loss);
        }
        Command::TrainController => {
            let r = p.train_controller()?;
            println!(
                "controller: {} generations, selection return {:.3}",
                r.history.len(),
                r.selection_return
            );
        }
        Command::Evaluate { condition, pairs } => {
            let c = Condition::parse(&condition)?;
            let r = p.evaluate(c, pairs.unwrap_or(p.config.eval_pairs))?;
            println!("{}\n{}", wmdrive::pipeline::ConditionReport::CSV_HEADER, r.csv_line());
        }
        Command::Render { condition, pair, out } => {
            let out = out.unwrap_or_else(|| p.path("render"));
            let s = p.render(Condition::parse(&condition)?, pair, &out)?;
            println!(
                "{} frames ({}), mean abs error {:.2}, written to {}",
                s.frames,
                s.termination.as_str(),
                s.mean_abs_error,
                out.display()
            );
        }
        Command::Report => print!("{}", p.report()?.to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
