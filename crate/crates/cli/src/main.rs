// negated comparisons also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ccc_core::repro::{run_grid, write_csv, AblationGrid};
use ccc_core::trainer::{gradcheck_cmd, pretrain_with, probe_checkpoint, write_synthetic, TrainConfig};

#[derive(Parser)]
#[command(name = "ccc", version, about = "Cross-contrastive masked acoustic pre-training at desk scale")]
struct Cli {
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train from a JSON config; writes metrics and checkpoints to paths.out_dir.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Finite-difference check of the full objective for the four loss configurations.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Linear frame-classification probe of a checkpoint on a labeled corpus.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Write the built-in synthetic corpus and its labels.
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        clips: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an ablation grid and write a CSV table.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        table: Table,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Table {
    Augmentation,
    Clustering,
    Combined,
}

fn load(path: &PathBuf) -> Result<TrainConfig> {
    TrainConfig::from_file(path).with_context(|| format!("reading config {}", path.display()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if cli.sequential {
        ccc_core::exec::set_parallel(false);
    }
    match cli.command {
        Command::Pretrain { config } => {
            let cfg = load(&config)?;
            let s = pretrain_with(&cfg, |r| {
                eprintln!(
                    "step {:>5}  l_total {:.4}  l_c {:.4}  acc {:.3}  ppl {:.2}",
                    r.step, r.l_total, r.l_c, r.contrastive_accuracy, r.codebook_perplexity
                )
            })?;
            println!("{}", serde_json::to_string_pretty(&serde_json::json!({
                "steps": s.steps,
                "parameters": s.parameters,
                "seconds": s.seconds,
                "metrics": s.metrics_path,
                "final_checkpoint": s.final_checkpoint,
                "first": s.first,
                "last": s.last,
            }))?);
        }
        Command::Gradcheck { config } => {
            let rows = gradcheck_cmd(&load(&config)?)?;
            for r in &rows {
                println!("{:<20} max_rel_err {:.3e}  coords {:>5}  loss {:.6}", r.name, r.max_relative_error, r.coordinates, r.loss);
            }
            if rows.iter().any(|r| !(r.max_relative_error < 1e-4)) {
                bail!("gradient check above 1e-4");
            }
        }
        Command::Probe { checkpoint, corpus } => {
            let report = probe_checkpoint(&checkpoint, &corpus)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::MakeSynthetic { out, clips, seed } => {
            let labels = write_synthetic(&out, clips, seed)?;
            println!("wrote {} clips to {}", labels.len(), out.display());
        }
        Command::Grid { config, table, out } => {
            let base = load(&config)?;
            let grid = match table {
                Table::Augmentation => AblationGrid::augmentation(&base),
                Table::Clustering => AblationGrid::clustering_full(&base),
                Table::Combined => AblationGrid::combined(&base),
            };
            std::fs::create_dir_all(&out)?;
            let rows = run_grid(&grid, &out, |r| match &r.error {
                Some(e) => eprintln!("{}: failed: {e}", r.config_label),
                None => eprintln!(
                    "{}: l_total {:.4}  acc {:.3}  probe {:.3}",
                    r.config_label, r.l_total, r.contrastive_accuracy, r.probe_accuracy
                ),
            });
            let csv = out.join("grid.csv");
            write_csv(&rows, &csv)?;
            println!("{}", csv.display());
        }
    }
    Ok(())
}
