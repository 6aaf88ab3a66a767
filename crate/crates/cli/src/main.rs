//! `rrx`: corpus generation, retriever and reader training, annotation,
//! evaluation and benchmarking for the retriever-reader pipeline.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rrx_core::config::{Config, Preset};
use rrx_core::passage::PassageKind;
use rrx_core::reader::Task;

#[derive(Debug, Parser)]
#[command(name = "rrx", version, about = "Retriever-reader entity linking and relation extraction")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Config file applied on top of the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "tiny")]
    pub preset: PresetArg,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub task: Option<TaskArg>,
    /// Entity candidates per window for the selected task.
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    /// Relation candidates per window for the selected task.
    #[arg(long, global = true)]
    pub top_k_relations: Option<usize>,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Fixed-order gradient reduction for bit-identical runs.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Directory holding every artifact and manifest.
    #[arg(long, global = true, default_value = "run")]
    pub run_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Paper,
    Desk,
    Tiny,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    El,
    Re,
    Cie,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Entity,
    Relation,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::El => Task::El,
            TaskArg::Re => Task::Re,
            TaskArg::Cie => Task::Cie,
        }
    }
}

impl From<KindArg> for PassageKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Entity => PassageKind::Entity,
            KindArg::Relation => PassageKind::Relation,
        }
    }
}

impl Global {
    pub fn task(&self) -> Option<Task> {
        self.task.map(Task::from)
    }

    pub fn require_task(&self) -> Result<Task> {
        self.task().context("this command needs --task el|re|cie")
    }

    /// Preset, then config file, then `--set`, then the dedicated flags.
    pub fn config(&self) -> Result<Config> {
        let preset = match self.preset {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Desk => Preset::Desk,
            PresetArg::Tiny => Preset::Tiny,
        };
        let mut cfg = Config::preset(preset);
        if let Some(path) = &self.config {
            cfg = Config::load(path, cfg).with_context(|| format!("loading {}", path.display()))?;
        }
        for kv in &self.overrides {
            let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        let cie = self.task() == Some(Task::Cie);
        if let Some(k) = self.top_k {
            *(if cie { &mut cfg.cie_top_k } else { &mut cfg.top_k }) = k;
        }
        if let Some(k) = self.top_k_relations {
            *(if cie { &mut cfg.cie_top_k_relations } else { &mut cfg.top_k_relations }) = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.run_dir.join(name)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with entity and relation passages.
    Synth,
    /// Train a bi-encoder retriever with in-batch and mined negatives.
    TrainRetriever(commands::TrainRetrieverArgs),
    /// Encode a passage collection into a flat index.
    BuildIndex(commands::BuildIndexArgs),
    /// Retrieve and cache the top candidates of every window.
    Candidates(commands::CandidatesArgs),
    /// Train the reader for the selected task.
    TrainReader(commands::TrainReaderArgs),
    /// Annotate documents, optionally with fewer candidates than in training.
    Annotate(commands::AnnotateArgs),
    /// Score predictions against gold documents.
    Eval(commands::EvalArgs),
    /// Time annotation and report F1 for several candidate counts.
    Bench(commands::BenchArgs),
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let cfg = g.config()?;
    rrx_numerics::Exec::init_workers(cfg.workers);
    match &cli.command {
        Command::Synth => commands::synth(g, &cfg),
        Command::TrainRetriever(a) => commands::train_retriever(g, &cfg, a),
        Command::BuildIndex(a) => commands::build_index(g, &cfg, a),
        Command::Candidates(a) => commands::candidates(g, &cfg, a),
        Command::TrainReader(a) => commands::train_reader(g, &cfg, a),
        Command::Annotate(a) => commands::annotate(g, &cfg, a),
        Command::Eval(a) => commands::eval(g, &cfg, a),
        Command::Bench(a) => commands::bench(g, &cfg, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
