//! Command-line front end.

use std::io::{self, BufReader};
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use safemon_core::component::serve;
use safemon_core::nn;

use crate::config::{CorpusSource, PipelineConfig};
use crate::pipeline::{dry_run_plan, source_count, CorpusFormat, Pipeline};
use crate::stage::Stage;

#[derive(Debug, Parser)]
#[command(name = "safemon", version, about = "Build and evaluate runtime safety monitors for image classifiers")]
pub struct Cli {
    /// Pipeline config file (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory, overriding `out_dir` from the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed, overriding `seed` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Packed,
    Ppm,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// `ppm` also writes a manifest and one PPM file per image.
    #[arg(long, value_enum, default_value = "packed")]
    pub format: FormatArg,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the default config, or write it to a file.
    InitConfig { path: Option<PathBuf> },
    /// Generate the synthetic working corpus.
    Synth(CorpusArgs),
    /// Import the working corpus from a manifest or packed file.
    Ingest(CorpusArgs),
    /// Train (or attach) the component and report its clean accuracy.
    TrainComponent,
    /// Generate the degraded datasets.
    Degrade {
        /// Only print the accounting; writes nothing.
        #[arg(long)]
        dry_run: bool,
    },
    /// Score the component on every degraded dataset.
    Assess,
    /// Map accuracies to safety levels and draw the heatmap.
    Label,
    /// Build the monitor train and test sets.
    Prepare,
    /// Train the monitor.
    TrainMonitor,
    /// Held-out evaluation and k-fold cross-validation of the monitor.
    EvalMonitor,
    /// Replay a drift scenario through component and monitor.
    Run,
    /// Run every stage in order, skipping those already up to date.
    Pipeline {
        #[arg(long, default_value = "corpus")]
        stage_from: Stage,
        #[arg(long, default_value = "run")]
        stage_to: Stage,
        /// Re-run stages even when their stamps are current.
        #[arg(long)]
        force: bool,
    },
    /// Answer the external inference protocol on stdin/stdout.
    Serve {
        /// Built-in model file to serve.
        #[arg(long, conflicts_with = "fixed")]
        model: Option<PathBuf>,
        /// Always predict this class with certainty.
        #[arg(long, requires = "classes")]
        fixed: Option<usize>,
        /// Class count for `--fixed`.
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long, default_value = "safemon")]
        name: String,
    },
}

impl Cli {
    pub fn resolve_config(&self) -> anyhow::Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }
}

fn format_of(args: &CorpusArgs) -> CorpusFormat {
    match args.format {
        FormatArg::Packed => CorpusFormat::Packed,
        FormatArg::Ppm => CorpusFormat::Ppm,
    }
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    let stage = match &cli.command {
        Command::InitConfig { path } => {
            let json = PipelineConfig::default().to_json()?;
            match path {
                Some(p) => std::fs::write(p, json).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{json}"),
            }
            return Ok(());
        }
        Command::Serve { model, fixed, classes, name } => return serve_command(model.as_ref(), *fixed, *classes, name),
        Command::Degrade { dry_run: true } => {
            let config = cli.resolve_config()?;
            let info = config.out_dir.join("corpus/corpus.json");
            let count = match std::fs::read_to_string(&info) {
                Ok(text) => serde_json::from_str::<crate::pipeline::CorpusInfo>(&text)?.count,
                Err(_) => source_count(&config.corpus)?,
            };
            dry_run_plan(&config, count)?;
            return Ok(());
        }
        Command::Pipeline { stage_from, stage_to, force } => {
            let mut p = Pipeline::open(cli.resolve_config()?)?;
            p.pipeline(*stage_from, *stage_to, *force)?;
            println!("pipeline: artifacts in {}", p.root().display());
            return Ok(());
        }
        Command::Synth(_) | Command::Ingest(_) => Stage::Corpus,
        Command::TrainComponent => Stage::Component,
        Command::Degrade { dry_run: false } => Stage::Degrade,
        Command::Assess => Stage::Assess,
        Command::Label => Stage::Label,
        Command::Prepare => Stage::Prepare,
        Command::TrainMonitor => Stage::TrainMonitor,
        Command::EvalMonitor => Stage::EvalMonitor,
        Command::Run => Stage::Run,
    };
    let config = cli.resolve_config()?;
    let format = match &cli.command {
        Command::Synth(args) => {
            if !matches!(config.corpus, CorpusSource::Synthetic(_)) {
                bail!("`synth` needs a synthetic corpus source; use `ingest` for manifest or packed corpora");
            }
            format_of(args)
        }
        Command::Ingest(args) => {
            if matches!(config.corpus, CorpusSource::Synthetic(_)) {
                bail!("`ingest` needs a manifest or packed corpus source; use `synth` for the synthetic corpus");
            }
            format_of(args)
        }
        _ => CorpusFormat::default(),
    };
    let mut p = Pipeline::open(config)?;
    p.stage_with(stage, format)?;
    p.write_summary()?;
    Ok(())
}

fn serve_command(model: Option<&PathBuf>, fixed: Option<usize>, classes: Option<usize>, name: &str) -> anyhow::Result<()> {
    let stdin = io::stdin();
    let input = BufReader::new(stdin.lock());
    let output = io::stdout().lock();
    match (model, fixed) {
        (Some(path), None) => {
            let model = nn::load_model(path)?;
            serve(input, output, name, model.classes(), |img| model.predict(img))?;
        }
        (None, Some(class)) => {
            let k = classes.context("--fixed needs --classes")?;
            if class >= k {
                bail!("--fixed {class} out of range for {k} classes");
            }
            serve(input, output, name, k, |_| {
                let mut p = vec![0.0; k];
                p[class] = 1.0;
                Ok(p)
            })?;
        }
        _ => bail!("serve needs exactly one of --model or --fixed"),
    }
    Ok(())
}
