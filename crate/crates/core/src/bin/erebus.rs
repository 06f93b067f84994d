use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use erebus::config::PipelineConfig;
use erebus::pipeline::{self, RunOptions, SweepAxis};
use erebus::{par, Result};

#[derive(Parser)]
#[command(name = "erebus", version, about = "Underwater event-camera simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct OutArgs {
    /// Artifact directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Size,
    Count,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        window_us: Option<u64>,
    },
    /// Run the pipeline once per particle scale.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        scales: Vec<f64>,
        #[arg(long, value_enum, default_value = "size")]
        axis: Axis,
        #[arg(long)]
        window_us: Option<u64>,
    },
    /// Write config.txt and scene.txt.
    Scene {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Render luminance frames, previews and masks.
    Render {
        #[command(flatten)]
        out: OutArgs,
    },
    /// Convert luminance frames to events.
    Events {
        #[command(flatten)]
        out: OutArgs,
    },
    /// Accumulate events into DVS video frames.
    Frames {
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        window_us: Option<u64>,
    },
    /// Export the YOLO dataset.
    Export {
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        window_us: Option<u64>,
    },
    /// Run the blob detector and write the AP report.
    Eval {
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        window_us: Option<u64>,
    },
}

fn load(args: &ConfigArgs) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.scene.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let opts = |window_us| RunOptions {
        window_us,
        workers: cli.threads,
    };
    match cli.command {
        Command::Run { cfg, out, window_us } => {
            let m = pipeline::run_pipeline(&load(&cfg)?, &out.out, &opts(window_us))?;
            println!(
                "events {}\nclutter {:.6}\nmap {:.6}",
                m.total_events, m.clutter_ratio, m.map
            );
        }
        Command::Sweep {
            cfg,
            out,
            scales,
            axis,
            window_us,
        } => {
            let axis = match axis {
                Axis::Size => SweepAxis::Size,
                Axis::Count => SweepAxis::Count,
            };
            let report =
                pipeline::sweep_particles(&load(&cfg)?, &scales, axis, &out.out, &opts(window_us))?;
            print!("{}", report.to_tsv());
        }
        Command::Scene { cfg, out } => pipeline::stage_scene(&load(&cfg)?, &out.out)?,
        Command::Render { out } => {
            par::with_workers(cli.threads, || pipeline::stage_render(&out.out))?
        }
        Command::Events { out } => {
            let s = par::with_workers(cli.threads, || pipeline::stage_events(&out.out))?;
            println!("events {}", s.len());
        }
        Command::Frames { out, window_us } => {
            let n = pipeline::stage_frames(&out.out, &opts(window_us))?;
            println!("frames {n}");
        }
        Command::Export { out, window_us } => {
            let n = pipeline::stage_export(&out.out, &opts(window_us))?;
            println!("images {n}");
        }
        Command::Eval { out, window_us } => {
            let (report, _) = pipeline::stage_eval(&out.out, &opts(window_us))?;
            println!("map {:.6}", report.map);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error\t{}\t{}", e.kind(), msg);
            ExitCode::FAILURE
        }
    }
}
