use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use hazard_core::pipeline::{
    build_gateway, emit_run_summary, evaluate_only, render_heatmaps, run_pipeline, Mode,
    PipelineConfig, PipelineError, RunOptions,
};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "hazard",
    version,
    about = "Multi-agent hazard detection pipeline for driving videos"
)]
struct Cli {
    /// Log filter, e.g. `info` or `hazard_core=debug` (RUST_LOG also works).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline over the dataset and write a run directory.
    Run {
        #[command(flatten)]
        common: Overrides,
        /// Comma-separated video ids to process (default: all).
        #[arg(long, value_delimiter = ',')]
        videos: Option<Vec<String>>,
        /// Take verification snippets from every frame, not just sampled ones.
        #[arg(long)]
        all_frames: bool,
        /// Name of the run directory under the output directory.
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Score existing predictions (persisted AOS JSON or a run directory).
    Evaluate {
        #[command(flatten)]
        common: Overrides,
        #[arg(long)]
        predictions: PathBuf,
        /// Ground-truth CSV (default: the configured one).
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Render heatmap.csv and heatmap.svg for each video of a run.
    Heatmap {
        run_dir: PathBuf,
        #[arg(long, value_delimiter = ',')]
        videos: Option<Vec<String>>,
    },
    /// Print stage outcomes, cache statistics and metrics of a run.
    Summary { run_dir: PathBuf },
    /// Write the synthetic five-video demo dataset with mock fixtures.
    Demo { dir: PathBuf },
}

/// Flags that override the config file.
#[derive(Args)]
struct Overrides {
    /// TOML config file; relative paths inside it are resolved against its directory.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    max_concurrency: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Disable the response cache.
    #[arg(long, conflicts_with = "cache_dir")]
    no_cache: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Mock fixture directory.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Success threshold on the best description score.
    #[arg(long)]
    threshold: Option<f64>,
    /// Seed for the mock backend only; live calls are unaffected.
    #[arg(long)]
    seed: Option<u64>,
}

impl Overrides {
    fn load(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => {
                let mut c = PipelineConfig::default();
                c.resolve_paths(Path::new("."));
                c
            }
        };
        cfg.backends.fill_from(|k| std::env::var(k).ok());
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(n) = self.max_concurrency {
            cfg.max_concurrency = n;
        }
        if let Some(d) = &self.cache_dir {
            cfg.cache_dir = Some(d.clone());
        }
        if self.no_cache {
            cfg.cache_dir = None;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(d) = &self.fixtures {
            cfg.fixtures = Some(d.clone());
        }
        if let Some(t) = self.threshold {
            cfg.success_threshold = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.downcast_ref::<PipelineError>()
        .map_or(1, |e| e.exit_code() as u8)
}

fn execute(command: Command) -> anyhow::Result<u8> {
    match command {
        Command::Run {
            common,
            videos,
            all_frames,
            run_id,
        } => {
            let mut cfg = common.load()?;
            cfg.all_frames |= all_frames;
            cfg.validate()?;
            let gateway = build_gateway(&cfg)?;
            let outcome = run_pipeline(&cfg, &gateway, &RunOptions { run_id, videos })?;
            print!("{}", emit_run_summary(&outcome.run_dir)?);
            for id in outcome.failed_videos() {
                eprintln!("video {id} had a failed stage");
            }
            Ok(outcome.exit_code() as u8)
        }
        Command::Evaluate {
            common,
            predictions,
            ground_truth,
        } => {
            let cfg = common.load()?;
            cfg.validate()?;
            let gt = ground_truth
                .or_else(|| cfg.ground_truth.clone())
                .ok_or_else(|| {
                    PipelineError::Config("no ground truth given (--ground-truth or config)".into())
                })?;
            let gateway = build_gateway(&cfg)?;
            let report = evaluate_only(&cfg, &gateway, &predictions, &gt)?;
            let (json, _) = report
                .write(&cfg.out_dir)
                .with_context(|| format!("writing report to {}", cfg.out_dir.display()))?;
            print!("{}", report.to_csv());
            eprintln!("report written to {}", json.display());
            Ok(0)
        }
        Command::Heatmap { run_dir, videos } => {
            let files = render_heatmaps(&run_dir, videos.as_deref())?;
            if files.is_empty() {
                eprintln!("no video in {} has a similarity matrix", run_dir.display());
            }
            for f in files {
                println!("{}", f.svg.display());
            }
            Ok(0)
        }
        Command::Summary { run_dir } => {
            print!("{}", emit_run_summary(&run_dir)?);
            Ok(0)
        }
        Command::Demo { dir } => {
            let d = hazard_core::demo::generate(&dir)
                .with_context(|| format!("generating demo in {}", dir.display()))?;
            println!(
                "demo dataset with {} videos written to {}",
                d.video_ids.len(),
                d.root.display()
            );
            println!("try: hazard run --config {}", d.config.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(&cli.log));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
