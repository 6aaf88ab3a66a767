//! Relation inputs conditioned on entity linking for joint extraction.

use rrx_numerics::{Graph, Var};

use crate::error::{CoreError, Result};

/// `[X_s; X_t; σ(E^T M) X_ST]`: appends to each span representation the
/// link-probability-weighted mean of the entity special-token states.
pub fn condition_mention_reps(g: &mut Graph, span_reps: Var, link_probs: Var, st_states: Var) -> Result<Var> {
    let (n, k1) = (g.value(link_probs).rows(), g.value(link_probs).cols());
    if g.value(span_reps).rows() != n || g.value(st_states).rows() != k1 {
        return Err(CoreError::Contract(format!(
            "conditioning shapes {:?}, {:?}, {:?}",
            g.shape(span_reps),
            g.shape(link_probs),
            g.shape(st_states)
        )));
    }
    let avg = g.matmul(link_probs, st_states)?;
    Ok(g.concat_cols(&[span_reps, avg])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rrx_numerics::Tensor;

    fn states() -> Tensor {
        Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 4.0], vec![-3.0, 0.0]]).unwrap()
    }

    #[test]
    fn one_hot_picks_the_slot_and_uniform_averages() {
        let mut g = Graph::detached();
        let reps = g.input(Tensor::zeros(&[2, 4])).unwrap();
        let st = g.input(states()).unwrap();
        let p = g
            .input(Tensor::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0 / 3.0; 3]]).unwrap())
            .unwrap();
        let out = condition_mention_reps(&mut g, reps, p, st).unwrap();
        assert_eq!(g.shape(out), &[2, 6]);
        assert_eq!(&g.value(out).row(0)[4..], &[0.5, 4.0]);
        assert_abs_diff_eq!(g.value(out).at(1, 4), -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g.value(out).at(1, 5), 2.0 / 3.0, epsilon = 1e-12);
        let bad = g.input(Tensor::zeros(&[3, 4])).unwrap();
        assert!(condition_mention_reps(&mut g, bad, p, st).is_err());
    }

    proptest! {
        #[test]
        fn block_is_a_convex_combination(w in prop::collection::vec(0.01f64..1.0, 3)) {
            let total: f64 = w.iter().sum();
            let probs: Vec<f64> = w.iter().map(|v| v / total).collect();
            let mut g = Graph::detached();
            let reps = g.input(Tensor::zeros(&[1, 2])).unwrap();
            let st = g.input(states()).unwrap();
            let p = g.input(Tensor::from_rows(&[probs]).unwrap()).unwrap();
            let out = condition_mention_reps(&mut g, reps, p, st).unwrap();
            let s = states();
            for j in 0..2 {
                let col: Vec<f64> = (0..3).map(|i| s.at(i, j)).collect();
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let v = g.value(out).at(0, 2 + j);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
