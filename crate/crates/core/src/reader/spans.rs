//! Start/end span detection shared by every task.

use std::collections::BTreeSet;

use rand::Rng;
use rrx_numerics::{ops::two_class_first, Graph, ParamId, ParameterStore, Tensor, Var};

use crate::encoder::fan_in_std;
use crate::error::{CoreError, Result};

/// Query span, 1-based and inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn check(self, q_len: usize) -> Result<Self> {
        if self.start >= 1 && self.start <= self.end && self.end <= q_len {
            Ok(self)
        } else {
            Err(CoreError::Span { start: self.start, end: self.end, len: q_len })
        }
    }
}

/// `σ_0` of each row of an n×2 logit matrix.
pub fn first_class_probs(logits: &Tensor) -> Vec<f64> {
    (0..logits.rows())
        .map(|i| two_class_first(logits.at(i, 0), logits.at(i, 1)))
        .collect()
}

/// `-Σ_i log σ_{c_i}(logits_i)` with class 0 where `positive[i]` and class 1
/// elsewhere.
pub fn binary_nll(g: &mut Graph, logits: Var, positive: &[bool]) -> Result<Var> {
    let ls = g.log_softmax_rows(logits)?;
    let mut w = vec![0.0; 2 * positive.len()];
    for (i, &p) in positive.iter().enumerate() {
        w[2 * i + usize::from(!p)] = -1.0;
    }
    Ok(g.weighted_sum(ls, w)?)
}

pub(crate) fn zero_loss(g: &mut Graph) -> Result<Var> {
    Ok(g.constant(Tensor::scalar(0.0))?)
}

/// Rows of `X` holding the start and end token of each span, as `[X_s; X_t]`.
pub(crate) fn span_reps(g: &mut Graph, x: Var, spans: &[Span]) -> Result<Var> {
    let starts: Vec<usize> = spans.iter().map(|s| s.start - 1).collect();
    let ends: Vec<usize> = spans.iter().map(|s| s.end - 1).collect();
    let xs = g.rows(x, &starts)?;
    let xt = g.rows(x, &ends)?;
    Ok(g.concat_cols(&[xs, xt])?)
}

#[derive(Debug, Clone)]
pub struct SpanHead {
    pub w_s: ParamId,
    pub b_s: ParamId,
    pub w_e: ParamId,
    pub b_e: ParamId,
}

impl SpanHead {
    pub fn init<R: Rng>(prefix: &str, hidden: usize, store: &mut ParameterStore, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w_s: store.insert_normal(&format!("{prefix}.w_s"), &[hidden, 2], fan_in_std(hidden), 0, rng)?,
            b_s: store.insert_zeros(&format!("{prefix}.b_s"), &[2], 0)?,
            w_e: store.insert_normal(&format!("{prefix}.w_e"), &[2 * hidden, 2], fan_in_std(2 * hidden), 0, rng)?,
            b_e: store.insert_zeros(&format!("{prefix}.b_e"), &[2], 0)?,
        })
    }

    /// `W_S^T X_s + b_S` for the query tokens `s = 1..=q_len` (q_len×2).
    pub fn start_logits(&self, g: &mut Graph, x: Var, q_len: usize) -> Result<Var> {
        let rows: Vec<usize> = (0..q_len).collect();
        let xq = g.rows(x, &rows)?;
        let (w, b) = (g.param(self.w_s), g.param(self.b_s));
        Ok(g.linear(xq, w, b)?)
    }

    /// `W_E^T [X_s; X_t] + b_E` for each (s, t) pair (n×2).
    pub fn end_logits(&self, g: &mut Graph, x: Var, pairs: &[Span]) -> Result<Var> {
        let xm = span_reps(g, x, pairs)?;
        let (w, b) = (g.param(self.w_e), g.param(self.b_e));
        Ok(g.linear(xm, w, b)?)
    }

    pub fn start_probs(&self, g: &mut Graph, x: Var, q_len: usize) -> Result<Vec<f64>> {
        let l = self.start_logits(g, x, q_len)?;
        Ok(first_class_probs(g.value(l)))
    }

    /// `p_E(t | X, s)` for `t = s..=q_len`.
    pub fn end_probs(&self, g: &mut Graph, x: Var, s: usize, q_len: usize) -> Result<Vec<f64>> {
        if s == 0 || s > q_len {
            return Err(CoreError::Span { start: s, end: s, len: q_len });
        }
        let pairs: Vec<Span> = (s..=q_len).map(|t| Span::new(s, t)).collect();
        let l = self.end_logits(g, x, &pairs)?;
        Ok(first_class_probs(g.value(l)))
    }

    /// `(L_S, L_E)` with the end loss conditioned on gold starts only.
    pub fn losses(&self, g: &mut Graph, x: Var, q_len: usize, gold: &[Span]) -> Result<(Var, Var)> {
        for s in gold {
            s.check(q_len)?;
        }
        let starts: BTreeSet<usize> = gold.iter().map(|s| s.start).collect();
        let logits = self.start_logits(g, x, q_len)?;
        let is_start: Vec<bool> = (1..=q_len).map(|s| starts.contains(&s)).collect();
        let l_s = binary_nll(g, logits, &is_start)?;
        if starts.is_empty() {
            return Ok((l_s, zero_loss(g)?));
        }
        let ends: BTreeSet<Span> = gold.iter().copied().collect();
        let pairs: Vec<Span> = starts
            .iter()
            .flat_map(|&s| (s..=q_len).map(move |t| Span::new(s, t)))
            .collect();
        let is_end: Vec<bool> = pairs.iter().map(|p| ends.contains(p)).collect();
        let logits = self.end_logits(g, x, &pairs)?;
        let l_e = binary_nll(g, logits, &is_end)?;
        Ok((l_s, l_e))
    }
}

/// Threshold decoding: every start with `p_S > threshold` and, for each, every
/// end with `p_E > threshold`. `end_probs(s)` returns `p_E(t | s)` for
/// `t = s..=|q|`. Overlapping and nested spans are all kept.
pub fn decode_spans<F>(start_probs: &[f64], mut end_probs: F, threshold: f64) -> Result<Vec<Span>>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    let mut out = Vec::new();
    for (i, &ps) in start_probs.iter().enumerate() {
        if ps <= threshold {
            continue;
        }
        let s = i + 1;
        for (j, &pe) in end_probs(s)?.iter().enumerate() {
            if pe > threshold {
                out.push(Span::new(s, s + j));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    fn head(h: usize, zero: bool) -> (ParameterStore, SpanHead) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParameterStore::new();
        let head = SpanHead::init("span", h, &mut store, &mut rng).unwrap();
        if zero {
            for id in store.ids().collect::<Vec<_>>() {
                store.values_mut(id).fill(0.0);
            }
        }
        (store, head)
    }

    fn random_x(g: &mut Graph, l: usize, h: usize, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..l * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        g.input(Tensor::new(vec![l, h], data).unwrap()).unwrap()
    }

    #[test]
    fn zero_weights_give_half_probabilities() {
        let (store, head) = head(4, true);
        let mut g = Graph::new(&store);
        let x = random_x(&mut g, 9, 4, 1);
        let ps = head.start_probs(&mut g, x, 5).unwrap();
        assert_eq!(ps, vec![0.5; 5]);
        let pe = head.end_probs(&mut g, x, 2, 5).unwrap();
        assert_eq!(pe, vec![0.5; 4]);
        assert!(head.end_probs(&mut g, x, 6, 5).is_err());
        assert!(head.end_probs(&mut g, x, 0, 5).is_err());
    }

    #[test]
    fn end_distribution_depends_on_start() {
        let (store, head) = head(4, false);
        let mut g = Graph::new(&store);
        let x = random_x(&mut g, 6, 4, 2);
        let a = head.end_probs(&mut g, x, 1, 6).unwrap();
        let b = head.end_probs(&mut g, x, 2, 6).unwrap();
        assert_ne!(a[2], b[1]);
        assert!(a.iter().chain(&b).all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn uniform_losses_match_the_sums() {
        let (store, head) = head(4, true);
        let mut g = Graph::new(&store);
        let x = random_x(&mut g, 7, 4, 3);
        let (ls, le) = head.losses(&mut g, x, 4, &[Span::new(2, 3)]).unwrap();
        assert_abs_diff_eq!(g.value(ls).item(), 4.0 * LN_2, epsilon = 1e-12);
        // ends t = 2, 3, 4 under the single gold start
        assert_abs_diff_eq!(g.value(le).item(), 3.0 * LN_2, epsilon = 1e-12);
        let (ls8, le8) = head.losses(&mut g, x, 7, &[]).unwrap();
        let (ls4, _) = head.losses(&mut g, x, 4, &[]).unwrap();
        assert_abs_diff_eq!(g.value(ls8).item(), 7.0 / 4.0 * g.value(ls4).item(), epsilon = 1e-12);
        assert_eq!(g.value(le8).item(), 0.0);
        assert!(head.losses(&mut g, x, 4, &[Span::new(3, 5)]).is_err());
    }

    #[test]
    fn threshold_rule_example() {
        let ps = [0.9, 0.2, 0.6];
        let spans = decode_spans(
            &ps,
            |s| Ok(if s == 1 { vec![0.2, 0.7, 0.4] } else { vec![0.8] }),
            0.5,
        )
        .unwrap();
        assert_eq!(spans, vec![Span::new(1, 2), Span::new(3, 3)]);
        let none = decode_spans(&[0.5, 0.1], |_| Ok(vec![1.0, 1.0]), 0.5).unwrap();
        assert!(none.is_empty());
    }

    proptest! {
        #[test]
        fn decode_matches_brute_force(q in 1usize..12, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ps: Vec<f64> = (0..q).map(|_| rng.gen()).collect();
            let pe: Vec<Vec<f64>> = (1..=q).map(|s| (s..=q).map(|_| rng.gen()).collect()).collect();
            let got = decode_spans(&ps, |s| Ok(pe[s - 1].clone()), 0.5).unwrap();
            let mut want = Vec::new();
            for s in 1..=q {
                for t in s..=q {
                    if ps[s - 1] > 0.5 && pe[s - 1][t - s] > 0.5 {
                        want.push(Span::new(s, t));
                    }
                }
            }
            prop_assert_eq!(got, want);
        }
    }
}
