//! Single-pass reader: one encoder forward per window, then span detection,
//! entity linking and/or relation extraction over the shared states.

pub mod cie;
pub mod el;
pub mod input;
pub mod re;
pub mod spans;
pub mod train;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rrx_numerics::snapshot::{self, Dtype};
use rrx_numerics::{Graph, ParameterStore, Var};
use serde::{Deserialize, Serialize};

use crate::encoder::{Dropout, Encoder, EncoderConfig};
use crate::error::{CoreError, Result};
use crate::passage::Passage;
use crate::vocab::Vocabulary;

pub use el::{el_loss, link_inference, ElHead, LinkedMention};
pub use input::{assemble_input, Candidate, ReaderInput};
pub use re::{re_inference, triplet_index, ReHead, Triplet};
pub use spans::{decode_spans, Span, SpanHead};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    El,
    Re,
    Cie,
}

impl Task {
    pub fn links(self) -> bool {
        matches!(self, Task::El | Task::Cie)
    }

    pub fn relates(self) -> bool {
        matches!(self, Task::Re | Task::Cie)
    }
}

impl FromStr for Task {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "el" => Ok(Task::El),
            "re" => Ok(Task::Re),
            "cie" => Ok(Task::Cie),
            other => Err(CoreError::Config(format!("unknown task `{other}` (expected el, re or cie)"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::El => "el",
            Task::Re => "re",
            Task::Cie => "cie",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub start: f64,
    pub end: f64,
    pub el: f64,
    pub rel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { start: 1.0, end: 1.0, el: 1.0, rel: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderConfig {
    pub task: Task,
    pub encoder: EncoderConfig,
    pub threshold: f64,
    pub self_pairs: bool,
    pub loss_weights: LossWeights,
    /// Reader-side passage tokens kept per candidate before length trimming.
    pub max_passage_len: usize,
}

/// Gold supervision for one window, with teacher-forced mentions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowGold {
    pub spans: Vec<Span>,
    /// Entity slot per span (0 = NME); used when the task links.
    pub entity_slots: Vec<usize>,
    /// `(subject index, object index, relation candidate index)` into `spans`.
    pub triplets: Vec<(usize, usize, usize)>,
}

/// Loss components for one window; absent heads contribute nothing.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub start: Var,
    pub end: Var,
    pub el: Option<Var>,
    pub rel: Option<Var>,
    pub total: Var,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowPrediction {
    pub spans: Vec<Span>,
    pub links: Vec<LinkedMention>,
    pub triplets: Vec<Triplet>,
}

#[derive(Debug)]
pub struct Reader {
    pub cfg: ReaderConfig,
    pub vocab: Vocabulary,
    pub store: ParameterStore,
    pub encoder: Encoder,
    pub span: SpanHead,
    pub el: Option<ElHead>,
    pub re: Option<ReHead>,
}

impl Reader {
    pub fn new(mut cfg: ReaderConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        cfg.encoder.vocab_size = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let h = cfg.encoder.hidden;
        let encoder = Encoder::init(cfg.encoder.clone(), "reader.enc", &mut store, &mut rng)?;
        let span = SpanHead::init("reader.span", h, &mut store, &mut rng)?;
        let el = if cfg.task.links() {
            Some(ElHead::init("reader.el", h, &mut store, &mut rng)?)
        } else {
            None
        };
        let re = if cfg.task.relates() {
            let width = if cfg.task == Task::Cie { 3 * h } else { 2 * h };
            Some(ReHead::init("reader.re", h, width, &mut store, &mut rng)?)
        } else {
            None
        };
        Ok(Self { cfg, vocab, store, encoder, span, el, re })
    }

    pub fn task(&self) -> Task {
        self.cfg.task
    }

    /// Reader tokens of a passage, cut to `max_passage_len`.
    pub fn candidate(&self, p: &Passage) -> Candidate {
        let words: Vec<&str> = p.reader_text().split_whitespace().collect();
        let mut tokens = self.vocab.encode_words(&words);
        tokens.truncate(self.cfg.max_passage_len);
        Candidate { id: p.id.clone(), tokens }
    }

    pub fn candidates(&self, ids: &[String], passages: &HashMap<String, Passage>) -> Result<Vec<Candidate>> {
        ids.iter()
            .map(|id| {
                passages
                    .get(id)
                    .map(|p| self.candidate(p))
                    .ok_or_else(|| CoreError::Validation(format!("unknown candidate passage `{id}`")))
            })
            .collect()
    }

    pub fn assemble<S: AsRef<str>>(&self, words: &[S], entities: &[Candidate], relations: &[Candidate]) -> Result<ReaderInput> {
        let query = self.vocab.encode_words(words);
        assemble_input(&self.vocab, &query, entities, relations, self.cfg.task, self.cfg.encoder.max_len)
    }


    /// Relation-head mention inputs, conditioned on linking in cIE mode.
    fn mention_inputs(&self, g: &mut Graph, x: Var, input: &ReaderInput, spans: &[Span], link_logits: Option<Var>) -> Result<Var> {
        let reps = spans::span_reps(g, x, spans)?;
        match (self.cfg.task, link_logits) {
            (Task::Cie, Some(l)) => {
                let probs = g.softmax_rows(l)?;
                let st = g.rows(x, &input.entity_st)?;
                cie::condition_mention_reps(g, reps, probs, st)
            }
            (Task::Cie, None) => Err(CoreError::Contract("joint relation input needs link logits".into())),
            _ => Ok(reps),
        }
    }

    /// All task losses for one window from a single encoder forward.
    pub fn loss(&self, g: &mut Graph, input: &ReaderInput, gold: &WindowGold) -> Result<LossParts> {
        self.loss_with(g, input, gold, None)
    }

    /// [`Reader::loss`] with encoder dropout, for training.
    pub fn loss_with(&self, g: &mut Graph, input: &ReaderInput, gold: &WindowGold, dropout: Option<Dropout>) -> Result<LossParts> {
        let q = input.query_len;
        if self.cfg.task.links() && gold.entity_slots.len() != gold.spans.len() {
            return Err(CoreError::Validation("one entity slot per gold span required".into()));
        }
        let x = self.encoder.forward_with(g, &input.ids, dropout)?;
        let (start, end) = self.span.losses(g, x, q, &gold.spans)?;
        let w = self.cfg.loss_weights;
        let mut total = g.scale(start, w.start)?;
        let e = g.scale(end, w.end)?;
        total = g.add(total, e)?;

        let mut el = None;
        let mut link_logits = None;
        if let (Some(head), false) = (&self.el, gold.spans.is_empty()) {
            let (m, e) = head.project(g, x, &gold.spans, &input.entity_st)?;
            let logits = head.link_logits(g, m, e)?;
            let l = el_loss(g, logits, &gold.entity_slots)?;
            let s = g.scale(l, w.el)?;
            total = g.add(total, s)?;
            el = Some(l);
            link_logits = Some(logits);
        }

        let mut rel = None;
        if let (Some(head), false, false) = (&self.re, gold.spans.is_empty(), input.relation_st.is_empty()) {
            let n = gold.spans.len();
            let k = input.relation_st.len();
            let xm = self.mention_inputs(g, x, input, &gold.spans, link_logits)?;
            let (s, o, r) = head.project(g, xm, x, &input.relation_st)?;
            let logits = head.triplet_logits(g, s, o, r)?;
            let mut positive = vec![false; n * n * k];
            for &(a, b, kk) in &gold.triplets {
                if a >= n || b >= n || kk >= k {
                    return Err(CoreError::Validation("gold triplet outside the window's mentions or candidates".into()));
                }
                positive[triplet_index(a, b, kk, n, k)] = true;
            }
            let l = spans::binary_nll(g, logits, &positive)?;
            let s = g.scale(l, w.rel)?;
            total = g.add(total, s)?;
            rel = Some(l);
        }
        Ok(LossParts { start, end, el, rel, total })
    }

    /// Decoded spans, links and triplets for one window. Inference order is
    /// spans, linking, conditioning, relations.
    pub fn predict(&self, input: &ReaderInput) -> Result<WindowPrediction> {
        let mut g = Graph::new(&self.store);
        let x = self.encoder.forward(&mut g, &input.ids)?;
        let q = input.query_len;
        let ps = self.span.start_probs(&mut g, x, q)?;
        let spans = decode_spans(&ps, |s| self.span.end_probs(&mut g, x, s, q), self.cfg.threshold)?;
        let mut out = WindowPrediction { spans: spans.clone(), ..Default::default() };
        if spans.is_empty() {
            return Ok(out);
        }
        let mut link_logits = None;
        if let Some(head) = &self.el {
            let (m, e) = head.project(&mut g, x, &spans, &input.entity_st)?;
            let logits = head.link_logits(&mut g, m, e)?;
            let probs = g.softmax_rows(logits)?;
            out.links = link_inference(&spans, g.value(probs), &input.entities);
            link_logits = Some(logits);
        }
        if let (Some(head), false) = (&self.re, input.relation_st.is_empty()) {
            let xm = self.mention_inputs(&mut g, x, input, &spans, link_logits)?;
            let (s, o, r) = head.project(&mut g, xm, x, &input.relation_st)?;
            let logits = head.triplet_logits(&mut g, s, o, r)?;
            let probs = re::triplet_probs(&g, logits);
            out.triplets = re_inference(&spans, &probs, &input.relations, self.cfg.threshold, self.cfg.self_pairs);
        }
        Ok(out)
    }

    fn vocab_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".vocab");
        PathBuf::from(p)
    }

    pub fn snapshot_bytes(&self, with_optimizer: bool) -> Result<Vec<u8>> {
        let vocab = self.vocab.to_file_string();
        let meta = serde_json::json!({
            "kind": "reader",
            "config": self.cfg,
            "vocab_sha256": snapshot::sha256_hex(vocab.as_bytes()),
        });
        Ok(snapshot::encode_store(&self.store, meta, Dtype::F64, with_optimizer)?)
    }

    /// Writes the snapshot and its vocabulary file (`<path>.vocab`); returns
    /// the snapshot hash.
    pub fn save(&self, path: &Path, with_optimizer: bool) -> Result<String> {
        let bytes = self.snapshot_bytes(with_optimizer)?;
        snapshot::write_bytes(path, &bytes)?;
        self.vocab.save(&Self::vocab_path(path))?;
        Ok(snapshot::sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let snap = snapshot::read(path)?;
        if snap.header.meta.get("kind").and_then(|v| v.as_str()) != Some("reader") {
            return Err(CoreError::Validation(format!("{} is not a reader snapshot", path.display())));
        }
        let cfg: ReaderConfig = serde_json::from_value(snap.header.meta["config"].clone())
            .map_err(crate::error::json_err("reader config"))?;
        let vocab = Vocabulary::load(&Self::vocab_path(path))?;
        let want = snap.header.meta.get("vocab_sha256").and_then(|v| v.as_str()).unwrap_or_default();
        if snapshot::sha256_hex(vocab.to_file_string().as_bytes()) != want {
            return Err(CoreError::Validation("vocabulary does not match the reader snapshot".into()));
        }
        let mut reader = Reader::new(cfg, vocab, 0)?;
        snapshot::restore_store(&mut reader.store, &snap)?;
        Ok(reader)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;

    pub(crate) fn tiny_reader(task: Task, seed: u64) -> Reader {
        let mut vocab = Vocabulary::new(8);
        for w in ["a", "b", "c", "d", "e", "f", "x", "y"] {
            vocab.add(w);
        }
        let cfg = ReaderConfig {
            task,
            encoder: EncoderConfig { hidden: 8, layers: 1, heads: 2, ffn_mult: 2, max_len: 40, vocab_size: 0 },
            threshold: 0.5,
            self_pairs: false,
            loss_weights: LossWeights::default(),
            max_passage_len: 4,
        };
        Reader::new(cfg, vocab, seed).unwrap()
    }

    fn cands(r: &Reader, ids: &[(&str, &str)]) -> Vec<Candidate> {
        ids.iter()
            .map(|(id, text)| Candidate { id: id.to_string(), tokens: r.vocab.encode_words(&text.split(' ').collect::<Vec<_>>()) })
            .collect()
    }

    fn zero_heads(r: &mut Reader) {
        for id in r.store.ids().collect::<Vec<_>>() {
            if !r.store.name(id).starts_with("reader.enc") {
                r.store.values_mut(id).fill(0.0);
            }
        }
    }

    #[test]
    fn zero_heads_give_closed_form_losses() {
        let mut r = tiny_reader(Task::Cie, 1);
        zero_heads(&mut r);
        let ents = cands(&r, &[("E1", "a b"), ("E2", "c")]);
        let rels = cands(&r, &[("R1", "x"), ("R2", "y"), ("R3", "x y")]);
        let input = r.assemble(&["a", "b", "d", "c", "e"], &ents, &rels).unwrap();
        let gold = WindowGold {
            spans: vec![Span::new(1, 2), Span::new(4, 4)],
            entity_slots: vec![1, 2],
            triplets: vec![(0, 1, 2)],
        };
        let mut g = Graph::new(&r.store);
        let parts = r.loss(&mut g, &input, &gold).unwrap();
        let v = |x: Var| g.value(x).item();
        assert_abs_diff_eq!(v(parts.start), 5.0 * LN_2, epsilon = 1e-12);
        // ends scored for t in 1..=5 and 4..=5
        assert_abs_diff_eq!(v(parts.end), 7.0 * LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(v(parts.el.unwrap()), 2.0 * 3f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(v(parts.rel.unwrap()), 12.0 * LN_2, epsilon = 1e-12);
        let sum = v(parts.start) + v(parts.end) + v(parts.el.unwrap()) + v(parts.rel.unwrap());
        assert_abs_diff_eq!(v(parts.total), sum, epsilon = 1e-12);
    }

    #[test]
    fn prediction_uses_one_forward_regardless_of_candidates() {
        let r = tiny_reader(Task::El, 2);
        for k in [0, 1, 6] {
            let ents: Vec<Candidate> = (0..k).map(|i| Candidate { id: format!("E{i}"), tokens: vec![5, 6] }).collect();
            let input = r.assemble(&["a", "b"], &ents, &[]).unwrap();
            r.encoder.reset_forward_count();
            r.predict(&input).unwrap();
            assert_eq!(r.encoder.forward_count(), 1);
        }
    }

    #[test]
    fn heads_match_task() {
        assert!(tiny_reader(Task::El, 0).re.is_none());
        assert!(tiny_reader(Task::Re, 0).el.is_none());
        let c = tiny_reader(Task::Cie, 0);
        assert_eq!(c.store.value(c.re.as_ref().unwrap().w_subject).shape(), &[24, 8]);
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = tiny_reader(Task::Re, 3);
        let path = dir.path().join("reader.snap");
        let h1 = r.save(&path, false).unwrap();
        let back = Reader::load(&path).unwrap();
        assert_eq!(back.cfg, r.cfg);
        assert_eq!(back.save(&dir.path().join("again.snap"), false).unwrap(), h1);
    }

    #[test]
    fn task_parsing() {
        assert_eq!("cie".parse::<Task>().unwrap(), Task::Cie);
        assert!("ner".parse::<Task>().is_err());
        assert_eq!(Task::Re.to_string(), "re");
    }
}
