//! Dense bi-encoder retrieval over entity and relation passages.

pub mod index;
pub mod loss;
pub mod mining;
pub mod train;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rrx_numerics::snapshot::{self, Dtype};
use rrx_numerics::{Exec, Graph, ParameterStore, Var};
use serde::{Deserialize, Serialize};

use crate::encoder::{pool, Encoder, EncoderConfig};
use crate::error::{CoreError, Result};
use crate::passage::Passage;
use crate::vocab::{TokenId, Vocabulary, PAD};

pub use index::FlatIndex;
pub use loss::{nce_loss, nce_loss_value};
pub use mining::mine_hard_negatives;
pub use train::{train_retriever, RetrieverExample, RetrieverTrainConfig, RetrieverTrainReport};

/// `sim(q, p) = q · p`, unnormalized and without temperature.
pub fn sim(q: &[f64], p: &[f64]) -> Result<f64> {
    if q.len() != p.len() {
        return Err(CoreError::Contract(format!("similarity of {}- and {}-dimensional vectors", q.len(), p.len())));
    }
    Ok(q.iter().zip(p).map(|(a, b)| a * b).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieverConfig {
    pub encoder: EncoderConfig,
    /// Passage tokens kept before encoding.
    pub max_passage_len: usize,
}

#[derive(Debug)]
pub struct Retriever {
    pub cfg: RetrieverConfig,
    pub vocab: Vocabulary,
    pub store: ParameterStore,
    pub encoder: Encoder,
}

impl Retriever {
    pub fn new(mut cfg: RetrieverConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        cfg.encoder.vocab_size = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let encoder = Encoder::init(cfg.encoder.clone(), "retriever.enc", &mut store, &mut rng)?;
        Ok(Self { cfg, vocab, store, encoder })
    }

    pub fn query_tokens<S: AsRef<str>>(&self, words: &[S]) -> Vec<TokenId> {
        let mut ids = self.vocab.encode_words(words);
        ids.truncate(self.cfg.encoder.max_len);
        ids
    }

    pub fn passage_tokens(&self, p: &Passage) -> Vec<TokenId> {
        let words: Vec<&str> = p.text.split_whitespace().collect();
        let mut ids = self.vocab.encode_words(&words);
        ids.truncate(self.cfg.max_passage_len.min(self.cfg.encoder.max_len));
        ids
    }

    /// Mean-pooled encoding of one sequence inside `g`.
    pub fn embed_in(&self, g: &mut Graph, ids: &[TokenId]) -> Result<Var> {
        let x = self.encoder.forward(g, ids)?;
        let mask: Vec<bool> = ids.iter().map(|&t| t != PAD).collect();
        pool(g, x, &mask)
    }

    pub fn embed(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let v = self.embed_in(&mut g, ids)?;
        Ok(g.value(v).data().to_vec())
    }

    pub fn embed_many(&self, seqs: &[Vec<TokenId>], exec: Exec) -> Result<Vec<Vec<f64>>> {
        exec.map(seqs, |s| self.embed(s)).into_iter().collect()
    }

    /// Flat index over every non-NME passage.
    pub fn build_index(&self, passages: &[Passage], exec: Exec) -> Result<FlatIndex> {
        let kept: Vec<&Passage> = passages.iter().filter(|p| !p.is_nme).collect();
        let seqs: Vec<Vec<TokenId>> = kept.iter().map(|p| self.passage_tokens(p)).collect();
        let embs = self.embed_many(&seqs, exec)?;
        FlatIndex::new(kept.iter().map(|p| p.id.clone()).collect(), embs, self.hash()?)
    }

    pub fn snapshot_bytes(&self, with_optimizer: bool) -> Result<Vec<u8>> {
        let vocab = self.vocab.to_file_string();
        let meta = serde_json::json!({
            "kind": "retriever",
            "config": self.cfg,
            "vocab_sha256": snapshot::sha256_hex(vocab.as_bytes()),
        });
        Ok(snapshot::encode_store(&self.store, meta, Dtype::F64, with_optimizer)?)
    }

    /// Hash of the parameter-only snapshot, used to key indexes and caches.
    pub fn hash(&self) -> Result<String> {
        Ok(snapshot::sha256_hex(&self.snapshot_bytes(false)?))
    }

    fn vocab_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".vocab");
        PathBuf::from(p)
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.snapshot_bytes(false)?;
        snapshot::write_bytes(path, &bytes)?;
        self.vocab.save(&Self::vocab_path(path))?;
        Ok(snapshot::sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let snap = snapshot::read(path)?;
        if snap.header.meta.get("kind").and_then(|v| v.as_str()) != Some("retriever") {
            return Err(CoreError::Validation(format!("{} is not a retriever snapshot", path.display())));
        }
        let cfg: RetrieverConfig = serde_json::from_value(snap.header.meta["config"].clone())
            .map_err(crate::error::json_err("retriever config"))?;
        let vocab = Vocabulary::load(&Self::vocab_path(path))?;
        let want = snap.header.meta.get("vocab_sha256").and_then(|v| v.as_str()).unwrap_or_default();
        if snapshot::sha256_hex(vocab.to_file_string().as_bytes()) != want {
            return Err(CoreError::Validation("vocabulary does not match the retriever snapshot".into()));
        }
        let mut r = Retriever::new(cfg, vocab, 0)?;
        snapshot::restore_store(&mut r.store, &snap)?;
        Ok(r)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::passage::PassageKind;

    pub(crate) fn tiny_retriever(seed: u64) -> Retriever {
        let vocab = Vocabulary::build(["alpha", "beta", "gamma", "delta", "the", "city", "river"], 0);
        let cfg = RetrieverConfig {
            encoder: EncoderConfig { hidden: 8, layers: 1, heads: 2, ffn_mult: 2, max_len: 16, vocab_size: 0 },
            max_passage_len: 4,
        };
        Retriever::new(cfg, vocab, seed).unwrap()
    }

    #[test]
    fn sim_cases() {
        assert_eq!(sim(&[1.0, 0.0], &[0.5, 2.0]).unwrap(), 0.5);
        assert_eq!(sim(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert_eq!(sim(&[1.5, -2.0], &[0.3, 4.0]).unwrap(), sim(&[0.3, 4.0], &[1.5, -2.0]).unwrap());
        assert!(sim(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn index_skips_nme_and_rebuild_is_idempotent() {
        let r = tiny_retriever(1);
        let mk = |id: &str, text: &str, nme| Passage { id: id.into(), kind: PassageKind::Entity, text: text.into(), title: None, is_nme: nme };
        let ps = vec![mk("a", "alpha city", false), mk("n", "gamma", true), mk("b", "beta river the delta gamma", false)];
        let i1 = r.build_index(&ps, Exec::Parallel).unwrap();
        let i2 = r.build_index(&ps, Exec::Sequential).unwrap();
        assert_eq!(i1.ids(), &["a".to_string(), "b".to_string()]);
        assert_eq!(i1, i2);
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = tiny_retriever(2);
        let path = dir.path().join("r.snap");
        let h = r.save(&path).unwrap();
        assert_eq!(h, r.hash().unwrap());
        let back = Retriever::load(&path).unwrap();
        assert_eq!(back.embed(&[3, 4]).unwrap(), r.embed(&[3, 4]).unwrap());
    }
}
