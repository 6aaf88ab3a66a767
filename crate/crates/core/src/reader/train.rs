//! Reader optimization with token-budget batches and best-step selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rrx_numerics::{optimizer_step, Exec, Graph, OptimizerConfig};

use crate::encoder::Dropout;
use crate::error::{CoreError, Result};
use crate::reader::{Reader, ReaderInput, WindowGold};

#[derive(Debug, Clone, PartialEq)]
pub struct ReaderExample {
    pub window_id: String,
    pub input: ReaderInput,
    pub gold: WindowGold,
}

#[derive(Debug, Clone)]
pub struct ReaderTrainConfig {
    /// Total optimizer steps, counted from a fresh store.
    pub steps: u64,
    /// Maximum summed input length per batch (a single longer input still
    /// forms its own batch).
    pub token_budget: usize,
    pub optimizer: OptimizerConfig,
    /// Evaluate every this many steps; 0 disables evaluation.
    pub eval_interval: u64,
    /// Encoder dropout rate during training.
    pub dropout: f64,
    pub seed: u64,
    pub exec: Exec,
    pub deterministic: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReaderTrainReport {
    pub losses: Vec<f64>,
    pub evals: Vec<(u64, f64)>,
    pub best: Option<(u64, f64)>,
}

/// Greedy token-budget batches over one seeded shuffle of the examples.
fn epoch_batches(lengths: &[usize], budget: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    let mut out = Vec::new();
    let mut cur = Vec::new();
    let mut used = 0;
    for i in order {
        if !cur.is_empty() && used + lengths[i] > budget {
            out.push(std::mem::take(&mut cur));
            used = 0;
        }
        used += lengths[i];
        cur.push(i);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// The batches for steps `from..to`, a pure function of the seed so that a
/// resumed run sees the same data order.
pub fn batch_schedule(lengths: &[usize], budget: usize, seed: u64, from: u64, to: u64) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if lengths.is_empty() {
        return out;
    }
    let mut step = 0;
    let mut epoch = 0;
    while step < to {
        for b in epoch_batches(lengths, budget, seed, epoch) {
            if step >= from && step < to {
                out.push(b);
            }
            step += 1;
            if step >= to {
                break;
            }
        }
        epoch += 1;
    }
    out
}

/// Mean loss over `batch` and the matching averaged gradient step.
pub fn train_step(reader: &mut Reader, examples: &[ReaderExample], batch: &[usize], cfg: &ReaderTrainConfig) -> Result<f64> {
    let step = reader.store.step;
    let parts = {
        let r = &*reader;
        cfg.exec.map(batch, |&i| -> Result<_> {
            let ex = &examples[i];
            let mut g = Graph::new(&r.store);
            let dropout = Dropout {
                rate: cfg.dropout,
                seed: cfg.seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (i as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F),
            };
            let parts = r.loss_with(&mut g, &ex.input, &ex.gold, Some(dropout))?;
            Ok((g.value(parts.total).item(), g.backward(parts.total)?))
        })
    };
    let mut losses = Vec::with_capacity(parts.len());
    let mut grads = Vec::with_capacity(parts.len());
    for p in parts {
        let (l, g) = p?;
        losses.push(l);
        grads.push(g);
    }
    let n = batch.len() as f64;
    let mut total = cfg.exec.sum_gradients(grads, cfg.deterministic);
    total.scale(1.0 / n);
    reader.store.zero_grad();
    reader.store.accumulate(&total);
    optimizer_step(&mut reader.store, &cfg.optimizer)?;
    Ok(losses.iter().sum::<f64>() / n)
}

/// Trains from the store's current step up to `cfg.steps`. When `eval` is
/// given it runs every `eval_interval` steps and after the last one; the
/// parameters of the best-scoring step are restored at the end.
pub fn train_reader(
    reader: &mut Reader,
    examples: &[ReaderExample],
    cfg: &ReaderTrainConfig,
    mut eval: Option<&mut dyn FnMut(&Reader) -> Result<f64>>,
) -> Result<ReaderTrainReport> {
    if examples.is_empty() {
        return Err(CoreError::Validation("no reader training examples".into()));
    }
    let lengths: Vec<usize> = examples.iter().map(|e| e.input.len()).collect();
    let from = reader.store.step;
    let schedule = batch_schedule(&lengths, cfg.token_budget, cfg.seed, from, cfg.steps);
    let mut report = ReaderTrainReport::default();
    let mut best_values: Option<Vec<Vec<f64>>> = None;
    let last = cfg.steps;
    for batch in &schedule {
        let loss = train_step(reader, examples, batch, cfg)?;
        report.losses.push(loss);
        let step = reader.store.step;
        let due = cfg.eval_interval > 0 && (step.is_multiple_of(cfg.eval_interval) || step == last);
        if let (Some(f), true) = (eval.as_mut(), due) {
            let score = f(reader)?;
            report.evals.push((step, score));
            if report.best.is_none_or(|(_, b)| score > b) {
                report.best = Some((step, score));
                best_values = Some(reader.store.ids().map(|id| reader.store.value(id).data().to_vec()).collect());
            }
        }
    }
    if let Some(values) = best_values {
        for (id, v) in reader.store.ids().collect::<Vec<_>>().into_iter().zip(values) {
            reader.store.set_values(id, &v)?;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reader::tests::tiny_reader;
    use crate::reader::{Candidate, Span, Task};

    fn examples(r: &Reader) -> Vec<ReaderExample> {
        let ents = vec![
            Candidate { id: "E1".into(), tokens: r.vocab.encode_words(&["a"]) },
            Candidate { id: "E2".into(), tokens: r.vocab.encode_words(&["c"]) },
        ];
        let mk = |words: &[&str], spans: Vec<Span>, slots: Vec<usize>| ReaderExample {
            window_id: words.join("_"),
            input: r.assemble(words, &ents, &[]).unwrap(),
            gold: WindowGold { spans, entity_slots: slots, triplets: vec![] },
        };
        vec![
            mk(&["x", "a", "y"], vec![Span::new(2, 2)], vec![1]),
            mk(&["c", "y", "y"], vec![Span::new(1, 1)], vec![2]),
            mk(&["y", "x", "e"], vec![Span::new(3, 3)], vec![0]),
            mk(&["a", "x", "c"], vec![Span::new(1, 1), Span::new(3, 3)], vec![1, 2]),
        ]
    }

    fn cfg(steps: u64) -> ReaderTrainConfig {
        ReaderTrainConfig {
            steps,
            token_budget: 30,
            optimizer: OptimizerConfig { lr: 5e-3, ..Default::default() },
            eval_interval: 0,
            dropout: 0.0,
            seed: 4,
            exec: Exec::Parallel,
            deterministic: true,
        }
    }

    #[test]
    fn schedule_respects_budget_and_resumes() {
        let lengths = [10, 12, 7, 30, 5, 9];
        let all = batch_schedule(&lengths, 25, 1, 0, 9);
        assert_eq!(all.len(), 9);
        for b in &all {
            let used: usize = b.iter().map(|&i| lengths[i]).sum();
            assert!(used <= 25 || b.len() == 1);
        }
        assert_eq!(batch_schedule(&lengths, 25, 1, 4, 9), all[4..].to_vec());
    }

    #[test]
    fn loss_decreases_on_a_toy_set() {
        let mut r = tiny_reader(Task::El, 7);
        let ex = examples(&r);
        let report = train_reader(&mut r, &ex, &cfg(60), None).unwrap();
        let head: f64 = report.losses[..5].iter().sum();
        let tail: f64 = report.losses[report.losses.len() - 5..].iter().sum();
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn resume_reproduces_the_next_step_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = tiny_reader(Task::El, 9);
        let ex = examples(&a);
        train_reader(&mut a, &ex, &cfg(5), None).unwrap();
        let path = dir.path().join("mid.snap");
        a.save(&path, true).unwrap();
        train_reader(&mut a, &ex, &cfg(6), None).unwrap();
        let mut b = Reader::load(&path).unwrap();
        train_reader(&mut b, &ex, &cfg(6), None).unwrap();
        assert_eq!(a.snapshot_bytes(true).unwrap(), b.snapshot_bytes(true).unwrap());
    }

    #[test]
    fn best_step_is_restored() {
        let mut r = tiny_reader(Task::El, 11);
        let ex = examples(&r);
        let mut calls = 0;
        let mut eval = |_: &Reader| -> Result<f64> {
            calls += 1;
            Ok(if calls == 2 { 1.0 } else { 0.0 })
        };
        let mut c = cfg(6);
        c.eval_interval = 2;
        let report = train_reader(&mut r, &ex, &c, Some(&mut eval)).unwrap();
        assert_eq!(report.best, Some((4, 1.0)));
        assert_eq!(report.evals.len(), 3);
    }
}
