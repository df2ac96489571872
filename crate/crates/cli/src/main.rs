//! Command-line front end for the macsim pipeline.
//!
//! Every subcommand runs the same orchestrator, stopped after the stage the
//! subcommand names. Settings come from an optional `key=value` config file
//! plus flag overrides; flags win.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use macsim::pipeline::{build_config, parse_config_text, run_to, RunConfig, RunSummary, Stage};

#[derive(Debug, Parser)]
#[command(name = "macsim-cli", version, about = "Record-linkage accuracy assessment")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat key=value configuration file; flags below override its entries
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed for generation, error injection and every chain
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Composite-weight threshold for linking
    #[arg(long, global = true, value_name = "R")]
    cutoff: Option<f64>,

    /// Blocking fields, comma separated (e.g. SA1 or SA1,SEX)
    #[arg(long, global = true, value_name = "FIELDS")]
    blocking: Option<String>,

    /// Kernel steps per block
    #[arg(long, global = true, value_name = "N")]
    steps: Option<u64>,

    /// Keep every N-th state as a sample
    #[arg(long, global = true, value_name = "N")]
    thin: Option<u64>,

    /// Leading samples to exclude from accuracy tallies
    #[arg(long, global = true, value_name = "N")]
    burn_in: Option<u64>,

    /// Only process these block keys, comma separated
    #[arg(long, global = true, value_name = "KEY[,KEY...]")]
    blocks: Option<String>,

    /// Reuse sample streams from this directory instead of simulating
    #[arg(long, global = true, value_name = "PATH")]
    use_saved_samples: Option<PathBuf>,

    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Records in the generated reference file
    #[arg(long, global = true, value_name = "N")]
    y_count: Option<usize>,

    /// Block-size scale for the generated population
    #[arg(long, global = true, value_name = "R")]
    scale: Option<f64>,

    /// Read this CSV as the file to be linked instead of generating
    #[arg(long, global = true, value_name = "PATH", requires_all = ["y_path", "truth_path"])]
    x_path: Option<PathBuf>,

    /// Read this CSV as the reference file
    #[arg(long, global = true, value_name = "PATH")]
    y_path: Option<PathBuf>,

    /// Truth sidecar CSV pairing the two files
    #[arg(long, global = true, value_name = "PATH")]
    truth_path: Option<PathBuf>,

    /// Laplace smoothing mass for probability estimation
    #[arg(long, global = true, value_name = "R")]
    smoothing: Option<f64>,

    /// Cap on per-field log-likelihood weights
    #[arg(long, global = true, value_name = "R")]
    weight_cap: Option<f64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Write the synthetic file pair (or validate a provided one)
    Generate,
    /// …plus the block table
    Block,
    /// …plus per-block m/u/g estimates and weights
    Estimate,
    /// …plus the observed links
    Link,
    /// …plus chain simulation with persisted sample streams
    Simulate,
    /// The full assessment with accuracy reports
    Assess,
    /// Recompute reports from previously saved sample streams
    Report,
}

impl Cli {
    /// Collects config-file pairs first, then flag pairs, so the flags win.
    fn pairs(&self) -> Result<Vec<(String, String)>> {
        let mut pairs = Vec::new();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            pairs.extend(parse_config_text(&text)?);
        }
        let mut push = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                pairs.push((key.to_string(), v));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push("cutoff", self.cutoff.map(|v| v.to_string()));
        push("blocking", self.blocking.clone());
        push("steps", self.steps.map(|v| v.to_string()));
        push("thin", self.thin.map(|v| v.to_string()));
        push("burn_in", self.burn_in.map(|v| v.to_string()));
        push("blocks", self.blocks.clone());
        push(
            "use_saved_samples",
            self.use_saved_samples.as_ref().map(|p| p.display().to_string()),
        );
        push("out", self.out.as_ref().map(|p| p.display().to_string()));
        push("y_count", self.y_count.map(|v| v.to_string()));
        push("scale", self.scale.map(|v| v.to_string()));
        push("x_path", self.x_path.as_ref().map(|p| p.display().to_string()));
        push("y_path", self.y_path.as_ref().map(|p| p.display().to_string()));
        push("truth_path", self.truth_path.as_ref().map(|p| p.display().to_string()));
        push("smoothing", self.smoothing.map(|v| v.to_string()));
        push("weight_cap", self.weight_cap.map(|v| v.to_string()));
        Ok(pairs)
    }
}

fn stage_of(command: Command) -> Stage {
    match command {
        Command::Generate => Stage::Prepare,
        Command::Block => Stage::Partition,
        Command::Estimate => Stage::Estimation,
        Command::Link => Stage::Linking,
        Command::Simulate => Stage::Simulation,
        Command::Assess | Command::Report => Stage::Assessment,
    }
}

fn print_summary(stage: Stage, s: &RunSummary) {
    println!("out: {}", s.out_dir.display());
    if stage == Stage::Prepare {
        println!("records prepared: {}", s.record_total);
        return;
    }
    println!("blocks: {} total, {} selected", s.blocks_total, s.blocks_selected);
    if stage > Stage::Partition {
        println!("completed: {}, skipped: {}", s.blocks_completed, s.blocks_failed);
    }
    if stage == Stage::Assessment {
        println!(
            "records: {} ({} linked, {} unlinked)",
            s.record_total, s.linked_records, s.unlinked_records
        );
        println!("mean correct re-link proportion: {:.4}", s.overall_mean);
        println!(
            "records above 0.90: {} of {} linked",
            s.records_above_090, s.linked_records
        );
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg: RunConfig = build_config(&cli.pairs()?)?;
    if matches!(cli.command, Command::Report) && cfg.saved_samples.is_none() {
        let dir = cfg.out_dir.join("samples");
        if !dir.is_dir() {
            bail!(
                "report needs saved sample streams; none at {} (pass --use-saved-samples)",
                dir.display()
            );
        }
        cfg.saved_samples = Some(dir);
    }
    let stage = stage_of(cli.command);
    let summary = run_to(&cfg, stage)?;
    print_summary(stage, &summary);
    Ok(())
}
