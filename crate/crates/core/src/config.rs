//! Flat `key = value` run configuration with named presets.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Unknown keys and unparsable values are errors. A file may start
//! from a preset with `preset = tiny` on its first non-comment line.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rrx_numerics::{snapshot, Exec, OptimizerConfig, OptimizerKind};

use crate::encoder::EncoderConfig;
use crate::error::{io_err, CoreError, Result};
use crate::pipeline::run::{ExampleOptions, WindowSpec};
use crate::pipeline::synth::SynthSpec;
use crate::reader::train::ReaderTrainConfig;
use crate::reader::{LossWeights, ReaderConfig, Task};
use crate::retriever::train::RetrieverTrainConfig;
use crate::retriever::RetrieverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Desk,
    Tiny,
}

impl FromStr for Preset {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "desk" => Ok(Self::Desk),
            "tiny" => Ok(Self::Tiny),
            other => Err(CoreError::Config(format!("unknown preset `{other}` (expected paper, desk or tiny)"))),
        }
    }
}

macro_rules! config {
    ($( $field:ident : $ty:ty = $key:literal, $doc:literal; )*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct Config {
            $( #[doc = $doc] pub $field: $ty, )*
        }

        /// Every key with its description, in file order.
        pub const KEYS: &[(&str, &str)] = &[$( ($key, $doc), )*];

        impl Config {
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( $key => {
                        self.$field = parse_value::<$ty>(value)
                            .map_err(|e| CoreError::Config(format!("{key}: cannot parse `{value}`: {e}")))?;
                    } )*
                    other => return Err(CoreError::Config(format!("unknown key `{other}`"))),
                }
                Ok(())
            }

            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( ($key, self.$field.to_string()), )*]
            }
        }
    };
}

fn parse_value<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

config! {
    seed: u64 = "seed", "Base random seed for initialization, shuffling and mining.";
    workers: usize = "workers", "Worker threads; 0 uses every core, 1 runs sequentially.";
    deterministic: bool = "deterministic", "Reduce gradients in a fixed order so runs are bit-identical.";

    window: usize = "window", "Window length W in words.";
    stride: usize = "stride", "Window stride S in words.";
    prefix_first_word: bool = "prefix_first_word", "Prepend the document's first word to every window.";
    top_k: usize = "top_k", "Entity candidates per window for entity linking.";
    top_k_relations: usize = "top_k_relations", "Relation candidates per window for relation extraction.";
    cie_top_k: usize = "cie.top_k", "Entity candidates per window in the joint task.";
    cie_top_k_relations: usize = "cie.top_k_relations", "Relation candidates per window in the joint task.";
    threshold: f64 = "threshold", "Decision threshold for starts, ends and triplets.";
    self_pairs: bool = "self_pairs", "Allow triplets whose subject and object are the same span.";

    retriever_hidden: usize = "retriever.hidden", "Retriever encoder width H.";
    retriever_layers: usize = "retriever.layers", "Retriever encoder blocks.";
    retriever_heads: usize = "retriever.heads", "Retriever attention heads.";
    retriever_ffn_mult: usize = "retriever.ffn_mult", "Retriever feed-forward width as a multiple of H.";
    retriever_max_len: usize = "retriever.max_len", "Longest query or passage the retriever encodes.";
    retriever_max_passage_len: usize = "retriever.max_passage_len", "Passage tokens kept by the retriever.";
    retriever_epochs: usize = "retriever.epochs", "Retriever training epochs.";
    retriever_query_batch: usize = "retriever.query_batch", "Queries per retriever step.";
    retriever_passage_batch: usize = "retriever.passage_batch", "Passages per retriever step (gold, mined, then random fill).";
    retriever_optimizer: OptimizerKind = "retriever.optimizer", "Retriever optimizer: adamw or radam.";
    retriever_lr: f64 = "retriever.lr", "Retriever peak learning rate.";
    retriever_weight_decay: f64 = "retriever.weight_decay", "Retriever decoupled weight decay.";
    retriever_warmup_steps: u64 = "retriever.warmup_steps", "Retriever linear warmup steps.";
    retriever_hard_negatives: bool = "retriever.hard_negatives", "Mine hard negatives from the current index.";
    retriever_mining_prob: f64 = "retriever.mining_prob", "Probability that a query receives mined negatives.";
    retriever_mining_cap: usize = "retriever.mining_cap", "Mined negatives per query.";
    retriever_mining_fraction: f64 = "retriever.mining_fraction", "Re-index and re-mine every this fraction of an epoch.";
    retriever_eval_k: usize = "retriever.eval_k", "k for validation recall@k.";

    reader_hidden: usize = "reader.hidden", "Reader encoder width H.";
    reader_layers: usize = "reader.layers", "Reader encoder blocks.";
    reader_heads: usize = "reader.heads", "Reader attention heads.";
    reader_ffn_mult: usize = "reader.ffn_mult", "Reader feed-forward width as a multiple of H.";
    reader_max_len: usize = "reader.max_len", "Longest reader input; passages are trimmed to fit.";
    reader_max_passage_len: usize = "reader.max_passage_len", "Reader tokens kept per candidate passage.";
    reader_steps: u64 = "reader.steps", "Reader optimizer steps.";
    reader_token_budget: usize = "reader.token_budget", "Summed input tokens per reader batch.";
    reader_optimizer: OptimizerKind = "reader.optimizer", "Reader optimizer: adamw or radam.";
    reader_lr: f64 = "reader.lr", "Reader peak learning rate.";
    reader_weight_decay: f64 = "reader.weight_decay", "Reader decoupled weight decay.";
    reader_warmup_steps: u64 = "reader.warmup_steps", "Reader linear warmup steps.";
    reader_layer_decay: f64 = "reader.layer_decay", "Per-layer learning-rate decay; 0 disables it.";
    reader_eval_interval: u64 = "reader.eval_interval", "Validate every this many steps; 0 disables validation.";
    reader_swap_mentions: bool = "reader.swap_mentions", "RE only: swap gold mention surfaces in permuted copies.";
    reader_dropout: f64 = "reader.dropout", "Encoder dropout rate while training the reader.";
    reader_permutations: usize = "reader.permutations", "Training copies per window with shuffled entity candidates; 0 keeps retrieval order.";
    loss_weight_start: f64 = "reader.loss_weight.start", "Weight of the start loss.";
    loss_weight_end: f64 = "reader.loss_weight.end", "Weight of the end loss.";
    loss_weight_el: f64 = "reader.loss_weight.el", "Weight of the linking loss.";
    loss_weight_rel: f64 = "reader.loss_weight.rel", "Weight of the relation loss.";

    synth_entities: usize = "synth.entities", "Entities that occur in synthetic documents.";
    synth_distractors: usize = "synth.distractors", "Confusable entities that never occur.";
    synth_relations: usize = "synth.relations", "Relation types.";
    synth_documents: usize = "synth.documents", "Synthetic documents.";
    synth_nme_entities: usize = "synth.nme_entities", "Out-of-KB names.";
    synth_nme_rate: f64 = "synth.nme_rate", "Probability that a plain mention is out of KB.";
    synth_ambiguity_rate: f64 = "synth.ambiguity_rate", "Probability that a title starts with a shared word.";
    synth_adversarial: bool = "synth.adversarial", "Distractors copy their twin's text except the key word.";
    synth_relation_rate: f64 = "synth.relation_rate", "Probability that a sentence states a relation.";
    synth_dev_fraction: f64 = "synth.dev_fraction", "Fraction of documents held out for validation.";
    synth_test_fraction: f64 = "synth.test_fraction", "Fraction of documents held out for testing.";
}

impl Config {
    pub fn preset(p: Preset) -> Self {
        let tiny = Self {
            seed: 0,
            workers: 0,
            deterministic: true,
            window: 16,
            stride: 8,
            prefix_first_word: true,
            top_k: 10,
            top_k_relations: 5,
            cie_top_k: 10,
            cie_top_k_relations: 5,
            threshold: 0.5,
            self_pairs: false,
            retriever_hidden: 64,
            retriever_layers: 1,
            retriever_heads: 2,
            retriever_ffn_mult: 2,
            retriever_max_len: 64,
            retriever_max_passage_len: 16,
            retriever_epochs: 5,
            retriever_query_batch: 16,
            retriever_passage_batch: 32,
            retriever_optimizer: OptimizerKind::AdamW,
            retriever_lr: 3e-3,
            retriever_weight_decay: 0.01,
            retriever_warmup_steps: 0,
            retriever_hard_negatives: true,
            retriever_mining_prob: 1.0,
            retriever_mining_cap: 8,
            retriever_mining_fraction: 0.5,
            retriever_eval_k: 10,
            reader_hidden: 64,
            reader_layers: 2,
            reader_heads: 4,
            reader_ffn_mult: 2,
            reader_max_len: 128,
            reader_max_passage_len: 4,
            reader_steps: 3000,
            reader_token_budget: 512,
            reader_optimizer: OptimizerKind::AdamW,
            reader_lr: 2e-3,
            reader_weight_decay: 0.01,
            reader_warmup_steps: 50,
            reader_layer_decay: 0.0,
            reader_eval_interval: 250,
            reader_permutations: 30,
            reader_dropout: 0.0,
            reader_swap_mentions: true,
            loss_weight_start: 1.0,
            loss_weight_end: 1.0,
            loss_weight_el: 1.0,
            loss_weight_rel: 1.0,
            synth_entities: 50,
            synth_distractors: 50,
            synth_relations: 5,
            synth_documents: 300,
            synth_nme_entities: 10,
            synth_nme_rate: 0.1,
            synth_ambiguity_rate: 0.3,
            synth_adversarial: false,
            synth_relation_rate: 0.5,
            synth_dev_fraction: 0.15,
            synth_test_fraction: 0.15,
        };
        match p {
            Preset::Tiny => tiny,
            Preset::Desk => Self {
                window: 32,
                stride: 16,
                top_k: 20,
                top_k_relations: 10,
                cie_top_k: 20,
                cie_top_k_relations: 10,
                retriever_hidden: 64,
                retriever_layers: 2,
                retriever_heads: 4,
                retriever_query_batch: 32,
                retriever_passage_batch: 64,
                retriever_mining_cap: 15,
                retriever_mining_fraction: 0.1,
                reader_hidden: 64,
                reader_layers: 2,
                reader_heads: 4,
                reader_max_len: 256,
                reader_steps: 3000,
                reader_token_budget: 2048,
                reader_lr: 1e-3,
                reader_warmup_steps: 100,
                reader_permutations: 4,
                reader_dropout: 0.1,
                synth_entities: 200,
                synth_distractors: 200,
                synth_relations: 10,
                synth_documents: 2000,
                ..tiny
            },
            Preset::Paper => Self {
                deterministic: false,
                window: 32,
                stride: 16,
                top_k: 100,
                top_k_relations: 24,
                cie_top_k: 25,
                cie_top_k_relations: 20,
                retriever_hidden: 768,
                retriever_layers: 12,
                retriever_heads: 12,
                retriever_ffn_mult: 4,
                retriever_max_len: 64,
                retriever_max_passage_len: 64,
                retriever_query_batch: 64,
                retriever_passage_batch: 400,
                retriever_optimizer: OptimizerKind::RAdam,
                retriever_lr: 1e-5,
                retriever_mining_prob: 0.2,
                retriever_mining_cap: 15,
                retriever_mining_fraction: 0.1,
                reader_hidden: 768,
                reader_layers: 12,
                reader_heads: 12,
                reader_ffn_mult: 4,
                reader_max_len: 1024,
                reader_max_passage_len: 64,
                reader_steps: 50_000,
                reader_token_budget: 2048,
                reader_lr: 1e-5,
                reader_warmup_steps: 5000,
                reader_layer_decay: 0.9,
                reader_eval_interval: 1000,
                reader_permutations: 0,
                reader_swap_mentions: false,
                ..Self::preset(Preset::Desk)
            },
        }
    }

    /// Parses a config file body on top of `base`.
    pub fn parse_onto(mut base: Self, text: &str) -> Result<Self> {
        let mut first = true;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "preset" {
                if !first {
                    return Err(CoreError::Config(format!("line {}: `preset` must come first", n + 1)));
                }
                base = Self::preset(v.parse()?);
            } else {
                base.set(k, v).map_err(|e| CoreError::Config(format!("line {}: {e}", n + 1)))?;
            }
            first = false;
        }
        base.validate()?;
        Ok(base)
    }

    pub fn load(path: &Path, base: Self) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse_onto(base, &text)
    }

    pub fn validate(&self) -> Result<()> {
        self.window_spec().validate()?;
        let bad = |m: &str| Err(CoreError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        if self.retriever_query_batch == 0 || self.retriever_passage_batch == 0 || self.reader_token_budget == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.retriever_mining_fraction > 0.0 && self.retriever_mining_fraction <= 1.0) {
            return bad("retriever.mining_fraction must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.reader_dropout) {
            return bad("reader.dropout must lie in [0, 1)");
        }
        self.retriever_encoder().validate()?;
        self.reader_encoder().validate()?;
        Ok(())
    }

    /// Canonical text form; parsing it reproduces `self`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn hash(&self) -> String {
        snapshot::sha256_hex(self.to_file_string().as_bytes())
    }

    pub fn exec(&self) -> Exec {
        Exec::from_workers(self.workers)
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec { window: self.window, stride: self.stride, prefix_first_word: self.prefix_first_word }
    }

    /// Entity and relation candidate counts for a task.
    pub fn k_for(&self, task: Task) -> (usize, usize) {
        match task {
            Task::El => (self.top_k, 0),
            Task::Re => (0, self.top_k_relations),
            Task::Cie => (self.cie_top_k, self.cie_top_k_relations),
        }
    }

    fn retriever_encoder(&self) -> EncoderConfig {
        EncoderConfig {
            hidden: self.retriever_hidden,
            layers: self.retriever_layers,
            heads: self.retriever_heads,
            ffn_mult: self.retriever_ffn_mult,
            max_len: self.retriever_max_len,
            vocab_size: 1,
        }
    }

    fn reader_encoder(&self) -> EncoderConfig {
        EncoderConfig {
            hidden: self.reader_hidden,
            layers: self.reader_layers,
            heads: self.reader_heads,
            ffn_mult: self.reader_ffn_mult,
            max_len: self.reader_max_len,
            vocab_size: 1,
        }
    }

    pub fn retriever(&self) -> RetrieverConfig {
        RetrieverConfig { encoder: self.retriever_encoder(), max_passage_len: self.retriever_max_passage_len }
    }

    pub fn retriever_train(&self) -> RetrieverTrainConfig {
        RetrieverTrainConfig {
            epochs: self.retriever_epochs,
            query_batch: self.retriever_query_batch,
            passage_batch: self.retriever_passage_batch,
            optimizer: OptimizerConfig {
                kind: self.retriever_optimizer,
                lr: self.retriever_lr,
                weight_decay: self.retriever_weight_decay,
                warmup_steps: self.retriever_warmup_steps,
                ..Default::default()
            },
            hard_negatives: self.retriever_hard_negatives,
            mining_prob: self.retriever_mining_prob,
            mining_cap: self.retriever_mining_cap,
            mining_fraction: self.retriever_mining_fraction,
            eval_k: self.retriever_eval_k,
            seed: self.seed,
            exec: self.exec(),
            deterministic: self.deterministic,
        }
    }

    pub fn reader(&self, task: Task) -> ReaderConfig {
        ReaderConfig {
            task,
            encoder: self.reader_encoder(),
            threshold: self.threshold,
            self_pairs: self.self_pairs,
            loss_weights: LossWeights {
                start: self.loss_weight_start,
                end: self.loss_weight_end,
                el: self.loss_weight_el,
                rel: self.loss_weight_rel,
            },
            max_passage_len: self.reader_max_passage_len,
        }
    }

    pub fn reader_train(&self) -> ReaderTrainConfig {
        ReaderTrainConfig {
            steps: self.reader_steps,
            token_budget: self.reader_token_budget,
            optimizer: OptimizerConfig {
                kind: self.reader_optimizer,
                lr: self.reader_lr,
                weight_decay: self.reader_weight_decay,
                warmup_steps: self.reader_warmup_steps,
                total_steps: self.reader_steps,
                layer_decay: (self.reader_layer_decay > 0.0).then_some(self.reader_layer_decay),
                ..Default::default()
            },
            eval_interval: self.reader_eval_interval,
            dropout: self.reader_dropout,
            seed: self.seed,
            exec: self.exec(),
            deterministic: self.deterministic,
        }
    }

    /// Options for building training examples (gold injected).
    pub fn training_examples(&self) -> ExampleOptions {
        ExampleOptions {
            inject_gold: true,
            permutations: self.reader_permutations,
            swap_mentions: self.reader_swap_mentions,
            seed: self.seed,
        }
    }

    pub fn synth(&self) -> SynthSpec {
        SynthSpec {
            entities: self.synth_entities,
            distractors: self.synth_distractors,
            relations: self.synth_relations,
            documents: self.synth_documents,
            nme_entities: self.synth_nme_entities,
            nme_rate: self.synth_nme_rate,
            ambiguity_rate: self.synth_ambiguity_rate,
            adversarial: self.synth_adversarial,
            relation_rate: self.synth_relation_rate,
            ..SynthSpec::default()
        }
    }
}
