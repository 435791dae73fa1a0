use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use pscman::experiment::ExperimentConfig;
use pscman::nodemem::NodeMemImage;
use pscman::pipeline::{files, read_manifest, rerun_from_manifest, Pipeline, PipelineError};

#[derive(Parser)]
#[command(name = "pscman", version, about = "Prefetcher-configuration manager experiments")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Instructions per window; overrides the config.
    #[arg(long, global = true)]
    window_size: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Oracle sweep of every trace over the swept PSC set.
    Sweep,
    /// IPC table and deployment PSC selection.
    Prune,
    /// Train/test split of the sweep.
    Dataset,
    /// Suite of regressors and classifier baselines.
    Train,
    /// Node MEM image and size report.
    Quantize,
    /// Managed runs of every configured manager.
    Run,
    /// Metrics and summaries from the managed runs.
    Report,
    /// Model-size and cache-size sensitivity sweeps.
    Sensitivity,
    /// Hash the outputs into a manifest.
    Manifest,
    /// Every stage in order.
    Pipeline,
    /// Rerun the full pipeline from a manifest into `--out`.
    Rerun { manifest: PathBuf },
    /// Print a Node MEM image.
    PmemDump { image: PathBuf },
}

fn pipeline(cli: &Cli) -> anyhow::Result<Pipeline> {
    let path = cli.config.as_ref().ok_or_else(|| anyhow!("config stage: --config is required"))?;
    let mut config = ExperimentConfig::load(path).map_err(|e| anyhow!("config stage: {e}"))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(w) = cli.window_size {
        config.window_size = w;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .ok_or_else(|| anyhow!("config stage: no output directory (use --out or `out` in the config)"))?;
    Ok(Pipeline::new(config, out)?)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::PmemDump { image } => {
            let bytes = std::fs::read(image).with_context(|| format!("reading {}", image.display()))?;
            let img = NodeMemImage::deserialize(&bytes).map_err(|e| anyhow!("pmem-dump: {e}"))?;
            print!("{}", img.dump());
            return Ok(());
        }
        Command::Rerun { manifest } => {
            let out = match &cli.out {
                Some(o) => o.clone(),
                None => return Err(anyhow!("config stage: rerun needs --out")),
            };
            read_manifest(manifest)?;
            let m = rerun_from_manifest(manifest, &out)?;
            println!("reran {} files into {}", m.files.len(), out.display());
            return Ok(());
        }
        _ => {}
    }
    let p = pipeline(cli)?;
    match &cli.command {
        Command::Sweep => {
            let runs = p.sweep()?;
            println!("swept {} traces into {}", runs.len(), p.path(files::SWEEP).display());
        }
        Command::Prune => println!("deployment: {:?}", p.prune()?),
        Command::Dataset => {
            let (train, test) = p.dataset()?;
            println!("train {} samples, test {} samples", train.len(), test.len());
        }
        Command::Train => {
            let (suite, _) = p.train()?;
            println!("suite of {} forests, {} nodes", suite.forests.len(), suite.node_count());
        }
        Command::Quantize => {
            let r = p.quantize()?;
            println!("{} entries, {:.2} KiB raw, within budget: {}", r.entries, r.raw_kib, r.within_budget);
        }
        Command::Run => {
            let runs = p.run()?;
            println!("{} managed runs", runs.runs.len());
        }
        Command::Report => print_summary(&p)?,
        Command::Sensitivity => {
            p.model_size_sweep()?;
            p.cache_size_sweep()?;
        }
        Command::Manifest => {
            let m = p.write_manifest()?;
            println!("manifest over {} files, config {}", m.files.len(), m.config_sha256);
        }
        Command::Pipeline => {
            let m = p.run_all()?;
            print!("{}", std::fs::read_to_string(p.path(files::SUMMARY))?);
            println!("manifest over {} files in {}", m.files.len(), p.out().display());
        }
        Command::Rerun { .. } | Command::PmemDump { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn print_summary(p: &Pipeline) -> anyhow::Result<()> {
    for s in p.report()? {
        println!(
            "{:<24} geomean {:.4}  mean {:.4}  worst {:.4}  outliers {}/{}",
            s.manager, s.geomean_normalized, s.mean_normalized, s.worst_normalized, s.outliers, s.traces
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // A stage error already spells out its cause.
            match e.downcast_ref::<PipelineError>() {
                Some(stage) => eprintln!("error: {stage}"),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::FAILURE
        }
    }
}
