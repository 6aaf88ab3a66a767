//! Contrastive retriever training with in-batch and mined hard negatives.
//!
//! Each step encodes every query and passage on its own graph (in parallel),
//! computes the NCE loss on a small detached graph over the pooled
//! embeddings, and pushes the embedding gradients back through each
//! sequence graph before one optimizer update.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rrx_numerics::{optimizer_step, Exec, Graph, OptimizerConfig, Tensor};

use crate::error::{CoreError, Result};
use crate::passage::Passage;
use crate::retriever::{mine_hard_negatives, nce_loss, FlatIndex, Retriever};
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub struct RetrieverExample {
    pub id: String,
    pub query: Vec<TokenId>,
    pub gold: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RetrieverTrainConfig {
    pub epochs: usize,
    pub query_batch: usize,
    pub passage_batch: usize,
    pub optimizer: OptimizerConfig,
    pub hard_negatives: bool,
    pub mining_prob: f64,
    pub mining_cap: usize,
    /// Rebuild the index (and re-mine) every this fraction of an epoch.
    pub mining_fraction: f64,
    pub eval_k: usize,
    pub seed: u64,
    pub exec: Exec,
    pub deterministic: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrieverTrainReport {
    pub losses: Vec<f64>,
    /// Validation recall@k after each index rebuild, keyed by step.
    pub recall: Vec<(u64, f64)>,
}

/// Fraction of (query, gold passage) pairs whose passage is in the query's
/// top-`k`.
pub fn recall_at_k(r: &Retriever, index: &FlatIndex, examples: &[RetrieverExample], k: usize, exec: Exec) -> Result<f64> {
    let queries: Vec<Vec<TokenId>> = examples.iter().map(|e| e.query.clone()).collect();
    let embs = r.embed_many(&queries, exec)?;
    let hits = index.search_batch(&embs, k, exec)?;
    let (mut found, mut total) = (0usize, 0usize);
    for (ex, top) in examples.iter().zip(&hits) {
        for g in &ex.gold {
            total += 1;
            found += usize::from(top.iter().any(|(id, _)| id == g));
        }
    }
    Ok(if total == 0 { 0.0 } else { found as f64 / total as f64 })
}

/// One GradCache-style update; returns the loss.
fn step(
    r: &mut Retriever,
    queries: &[&[TokenId]],
    passages: &[&[TokenId]],
    gold: &[Vec<usize>],
    cfg: &RetrieverTrainConfig,
) -> Result<f64> {
    let h = r.cfg.encoder.hidden;
    let (loss, grads) = {
        let rr = &*r;
        let seqs: Vec<&[TokenId]> = queries.iter().chain(passages).copied().collect();
        let forwards = cfg
            .exec
            .map(&seqs, |s| -> Result<_> {
                let mut g = Graph::new(&rr.store);
                let v = rr.embed_in(&mut g, s)?;
                Ok((g, v))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let rows = |range: std::ops::Range<usize>| -> Vec<f64> {
            range.flat_map(|i| forwards[i].0.value(forwards[i].1).data().to_vec()).collect()
        };
        let nq = queries.len();
        let np = passages.len();
        let mut d = Graph::detached();
        let q = d.input(Tensor::new(vec![nq, h], rows(0..nq))?.with_grad())?;
        let p = d.input(Tensor::new(vec![np, h], rows(nq..nq + np))?.with_grad())?;
        let pt = d.transpose(p)?;
        let scores = d.matmul(q, pt)?;
        let loss = nce_loss(&mut d, scores, gold)?;
        let back = d.backward_full(loss)?;
        let zeros = vec![0.0; nq * h];
        let dq = back.wrt(q).unwrap_or(&zeros).to_vec();
        let zeros = vec![0.0; np * h];
        let dp = back.wrt(p).unwrap_or(&zeros).to_vec();
        let idx: Vec<usize> = (0..nq + np).collect();
        let parts = cfg
            .exec
            .map(&idx, |&i| -> Result<_> {
                let seed = if i < nq { &dq[i * h..(i + 1) * h] } else { &dp[(i - nq) * h..(i - nq + 1) * h] };
                let (g, v) = &forwards[i];
                Ok(g.backward_seeded(*v, seed)?.into_params())
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        (d.value(loss).item(), cfg.exec.sum_gradients(parts, cfg.deterministic))
    };
    r.store.zero_grad();
    r.store.accumulate(&grads);
    optimizer_step(&mut r.store, &cfg.optimizer)?;
    Ok(loss)
}

pub fn train_retriever(
    r: &mut Retriever,
    passages: &[Passage],
    train: &[RetrieverExample],
    val: &[RetrieverExample],
    cfg: &RetrieverTrainConfig,
) -> Result<RetrieverTrainReport> {
    let kept: Vec<&Passage> = passages.iter().filter(|p| !p.is_nme).collect();
    let pos: HashMap<&str, usize> = kept.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
    for ex in train.iter().chain(val) {
        if ex.gold.is_empty() {
            return Err(CoreError::Validation(format!("example `{}` has no gold passage", ex.id)));
        }
        if let Some(g) = ex.gold.iter().find(|g| !pos.contains_key(g.as_str())) {
            return Err(CoreError::Validation(format!("example `{}` references unknown passage `{g}`", ex.id)));
        }
    }
    if cfg.query_batch == 0 || cfg.passage_batch == 0 {
        return Err(CoreError::Config("batch sizes must be positive".into()));
    }
    let p_tokens: Vec<Vec<TokenId>> = kept.iter().map(|p| r.passage_tokens(p)).collect();
    let gold_idx: Vec<Vec<usize>> = train.iter().map(|e| e.gold.iter().map(|g| pos[g.as_str()]).collect()).collect();
    let gold_sets: Vec<HashSet<String>> = train.iter().map(|e| e.gold.iter().cloned().collect()).collect();
    let max_gold = gold_idx.iter().map(Vec::len).max().unwrap_or(0);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps_per_epoch = train.len().div_ceil(cfg.query_batch);
    let refresh = ((steps_per_epoch as f64 * cfg.mining_fraction).round() as u64).max(1);
    let mut mined: Vec<Vec<usize>> = vec![Vec::new(); train.len()];
    let mut report = RetrieverTrainReport::default();
    let mut step_no = 0u64;

    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.query_batch) {
            if step_no.is_multiple_of(refresh) {
                let index = r.build_index(passages, cfg.exec)?;
                if !val.is_empty() {
                    report.recall.push((step_no, recall_at_k(r, &index, val, cfg.eval_k, cfg.exec)?));
                }
                if cfg.hard_negatives {
                    let queries: Vec<Vec<TokenId>> = train.iter().map(|e| e.query.clone()).collect();
                    let embs = r.embed_many(&queries, cfg.exec)?;
                    let top = index.search_batch(&embs, cfg.mining_cap + max_gold, cfg.exec)?;
                    mined = mine_hard_negatives(&top, &gold_sets, cfg.mining_cap, cfg.mining_prob, &mut rng)
                        .into_iter()
                        .map(|ids| ids.iter().map(|id| pos[id.as_str()]).collect())
                        .collect();
                }
            }

            let mut chosen: Vec<usize> = Vec::with_capacity(cfg.passage_batch);
            let mut in_batch = HashSet::new();
            for &q in batch {
                for &p in &gold_idx[q] {
                    if in_batch.insert(p) {
                        chosen.push(p);
                    }
                }
            }
            for &q in batch {
                for &p in &mined[q] {
                    if chosen.len() < cfg.passage_batch && in_batch.insert(p) {
                        chosen.push(p);
                    }
                }
            }
            let target = cfg.passage_batch.min(kept.len());
            while chosen.len() < target {
                let p = rng.gen_range(0..kept.len());
                if in_batch.insert(p) {
                    chosen.push(p);
                }
            }
            let slot: HashMap<usize, usize> = chosen.iter().enumerate().map(|(i, &p)| (p, i)).collect();
            let gold: Vec<Vec<usize>> = batch.iter().map(|&q| gold_idx[q].iter().map(|p| slot[p]).collect()).collect();
            let q_seqs: Vec<&[TokenId]> = batch.iter().map(|&q| train[q].query.as_slice()).collect();
            let p_seqs: Vec<&[TokenId]> = chosen.iter().map(|&p| p_tokens[p].as_slice()).collect();
            report.losses.push(step(r, &q_seqs, &p_seqs, &gold, cfg)?);
            step_no += 1;
        }
    }
    if !val.is_empty() {
        let index = r.build_index(passages, cfg.exec)?;
        report.recall.push((step_no, recall_at_k(r, &index, val, cfg.eval_k, cfg.exec)?));
    }
    Ok(report)
}
