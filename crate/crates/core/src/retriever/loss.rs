//! Multi-label NCE over a query × passage score matrix.

use rrx_numerics::{Graph, Tensor, Var};

use crate::error::{CoreError, Result};

const MASKED: f64 = -1e9;

fn negatives(gold: &[usize], num_passages: usize) -> Vec<usize> {
    (0..num_passages).filter(|p| !gold.contains(p)).collect()
}

fn check(gold: &[Vec<usize>], nq: usize, np: usize) -> Result<()> {
    if gold.len() != nq {
        return Err(CoreError::Contract(format!("{} gold lists for {nq} queries", gold.len())));
    }
    for (q, g) in gold.iter().enumerate() {
        if g.is_empty() {
            return Err(CoreError::Contract(format!("query {q} has no gold passage in the batch")));
        }
        if g.iter().any(|&p| p >= np) {
            return Err(CoreError::Contract(format!("query {q} gold outside the passage batch")));
        }
    }
    Ok(())
}

/// For each query `q` and gold passage `p+`:
/// `-log(e^{s(q,p+)} / (e^{s(q,p+)} + Σ_{p-} e^{s(q,p-)}))`, where the
/// negatives are every batch passage not gold for `q`; summed per query and
/// averaged over queries. `scores` is nq×np.
pub fn nce_loss(g: &mut Graph, scores: Var, gold: &[Vec<usize>]) -> Result<Var> {
    let (nq, np) = (g.value(scores).rows(), g.value(scores).cols());
    check(gold, nq, np)?;
    let rows: Vec<(usize, usize, Vec<usize>)> = gold
        .iter()
        .enumerate()
        .flat_map(|(q, gs)| {
            let neg = negatives(gs, np);
            gs.iter().map(move |&p| (q, p, neg.clone()))
        })
        .collect();
    let width = 1 + rows.iter().map(|r| r.2.len()).max().unwrap_or(0);
    let mut index = Vec::with_capacity(rows.len() * width);
    let mut mask = vec![0.0; rows.len() * width];
    for (i, (q, p, neg)) in rows.iter().enumerate() {
        index.push(q * np + p);
        index.extend(neg.iter().map(|n| q * np + n));
        for j in 1 + neg.len()..width {
            index.push(q * np + p);
            mask[i * width + j] = MASKED;
        }
    }
    let gathered = g.gather(scores, index, vec![rows.len(), width])?;
    let masked = g.add_const(gathered, &Tensor::new(vec![rows.len(), width], mask)?)?;
    let ls = g.log_softmax_rows(masked)?;
    let mut w = vec![0.0; rows.len() * width];
    for i in 0..rows.len() {
        w[i * width] = -1.0 / nq as f64;
    }
    Ok(g.weighted_sum(ls, w)?)
}

/// Direct evaluation of the same objective on a plain score matrix.
pub fn nce_loss_value(scores: &Tensor, gold: &[Vec<usize>]) -> Result<f64> {
    let (nq, np) = (scores.rows(), scores.cols());
    check(gold, nq, np)?;
    let mut total = 0.0;
    for (q, gs) in gold.iter().enumerate() {
        let neg = negatives(gs, np);
        for &p in gs {
            let pos = scores.at(q, p);
            let max = neg.iter().map(|&n| scores.at(q, n)).fold(pos, f64::max);
            let denom: f64 = (pos - max).exp() + neg.iter().map(|&n| (scores.at(q, n) - max).exp()).sum::<f64>();
            total += -((pos - max) - denom.ln());
        }
    }
    Ok(total / nq as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn graph_loss(scores: &Tensor, gold: &[Vec<usize>]) -> f64 {
        let mut g = Graph::detached();
        let s = g.input(scores.clone()).unwrap();
        let l = nce_loss(&mut g, s, gold).unwrap();
        g.value(l).item()
    }

    #[test]
    fn uniform_scores_give_log_of_batch() {
        let s = Tensor::zeros(&[1, 4]);
        assert_abs_diff_eq!(graph_loss(&s, &[vec![2]]), 4f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn dominant_positive_tends_to_zero() {
        let s = Tensor::from_rows(&[vec![60.0, 0.0, 0.0]]).unwrap();
        assert!(graph_loss(&s, &[vec![0]]) < 1e-25);
    }

    #[test]
    fn two_positives_are_independent_terms() {
        // equal positives a, negatives b and c: each term is -log(e^a / (e^a + e^b + e^c))
        let (a, b, c) = (0.7, -0.2, 1.1);
        let s = Tensor::from_rows(&[vec![a, b, a, c]]).unwrap();
        let term = -(a - (a.exp() + b.exp() + c.exp()).ln());
        assert_abs_diff_eq!(graph_loss(&s, &[vec![0, 2]]), 2.0 * term, epsilon = 1e-12);
    }

    #[test]
    fn missing_gold_is_a_contract_error() {
        let mut g = Graph::detached();
        let s = g.input(Tensor::zeros(&[2, 3])).unwrap();
        assert!(nce_loss(&mut g, s, &[vec![0], vec![]]).is_err());
        assert!(nce_loss(&mut g, s, &[vec![0], vec![3]]).is_err());
    }

    proptest! {
        #[test]
        fn graph_matches_direct_evaluation(
            nq in 1usize..5, np in 2usize..7, seed in any::<u64>()
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..nq * np).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let s = Tensor::new(vec![nq, np], data).unwrap();
            let gold: Vec<Vec<usize>> = (0..nq).map(|_| {
                let mut g: Vec<usize> = (0..np).filter(|_| rng.gen_bool(0.3)).collect();
                if g.is_empty() { g.push(rng.gen_range(0..np)); }
                g
            }).collect();
            let direct = nce_loss_value(&s, &gold).unwrap();
            prop_assert!(direct >= 0.0);
            prop_assert!((graph_loss(&s, &gold) - direct).abs() < 1e-9);
        }
    }
}
