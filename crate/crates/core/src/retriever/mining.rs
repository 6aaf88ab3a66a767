//! Hard negatives mined from the current index.

use std::collections::HashSet;

use rand::Rng;

/// For each query, with probability `prob`, the first `cap` retrieved ids
/// that are not gold for it. One draw is made per query in order, so the
/// result depends only on the RNG state and the inputs.
pub fn mine_hard_negatives<R: Rng>(
    retrieved: &[Vec<(String, f64)>],
    gold: &[HashSet<String>],
    cap: usize,
    prob: f64,
    rng: &mut R,
) -> Vec<Vec<String>> {
    retrieved
        .iter()
        .zip(gold)
        .map(|(ranked, gs)| {
            let draw: f64 = rng.gen();
            if draw >= prob {
                return Vec::new();
            }
            ranked
                .iter()
                .filter(|(id, _)| !gs.contains(id))
                .take(cap)
                .map(|(id, _)| id.clone())
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ranked(ids: &[&str]) -> Vec<(String, f64)> {
        ids.iter().enumerate().map(|(i, id)| (id.to_string(), -(i as f64))).collect()
    }

    fn gold(ids: &[&str]) -> HashSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn filter_and_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = mine_hard_negatives(&[ranked(&["g", "n1", "n2", "n3"])], &[gold(&["g"])], 2, 1.0, &mut rng);
        assert_eq!(out, vec![vec!["n1".to_string(), "n2".to_string()]]);
    }

    #[test]
    fn disabled_mining_adds_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = mine_hard_negatives(&vec![ranked(&["a", "b"]); 5], &vec![gold(&[]); 5], 3, 0.0, &mut rng);
        assert!(out.iter().all(Vec::is_empty));
    }

    #[test]
    fn same_seed_same_result() {
        let r = vec![ranked(&["a", "b", "c"]); 50];
        let g = vec![gold(&["a"]); 50];
        let run = |s| mine_hard_negatives(&r, &g, 1, 0.3, &mut ChaCha8Rng::seed_from_u64(s));
        assert_eq!(run(5), run(5));
        let mined = run(5).iter().filter(|v| !v.is_empty()).count();
        assert!(mined > 0 && mined < 50);
    }
}
