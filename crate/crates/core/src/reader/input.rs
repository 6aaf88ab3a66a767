//! Joint reader input: the query followed by every candidate, each introduced
//! by its own `<ST_i>` token.

use crate::error::{CoreError, Result};
use crate::reader::Task;
use crate::vocab::{TokenId, Vocabulary, SEP};

/// A retrieved candidate with its reader-side tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReaderInput {
    pub ids: Vec<TokenId>,
    pub query_len: usize,
    /// Sequence positions of `<ST_0>` … `<ST_K>`; only `<ST_0>` for RE.
    pub entity_st: Vec<usize>,
    /// Sequence positions of the relation candidates' `<ST>` tokens.
    pub relation_st: Vec<usize>,
    /// Entity candidate ids in rank order (slot k+1 holds `entities[k]`).
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub num_sep: usize,
    /// Candidate tokens removed to fit the maximum length.
    pub trimmed: usize,
}

impl ReaderInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_st(&self) -> usize {
        self.entity_st.len() + self.relation_st.len()
    }
}

/// Removes one token at a time from the longest passage, the lowest-ranked
/// one on ties, until `budget` is met. Returns the number removed.
fn trim(lens: &mut [usize], budget: usize) -> usize {
    let mut total: usize = lens.iter().sum();
    let mut removed = 0;
    while total > budget {
        let (idx, _) = lens
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(&b.0)))
            .expect("non-empty when over budget");
        lens[idx] -= 1;
        total -= 1;
        removed += 1;
    }
    removed
}

/// Lays out `query [SEP] <ST_0> <ST_1> e_1 … <ST_K> e_K` (EL), the same with
/// relation candidates (RE), or both blocks separated by a second `[SEP]`
/// with ST indices continuing at K+1 (cIE).
pub fn assemble_input(
    vocab: &Vocabulary,
    query: &[TokenId],
    entities: &[Candidate],
    relations: &[Candidate],
    task: Task,
    max_len: usize,
) -> Result<ReaderInput> {
    let (entities, relations) = match task {
        Task::El => (entities, &[][..]),
        Task::Re => (&[][..], relations),
        Task::Cie => (entities, relations),
    };
    let num_sep = if task == Task::Cie { 2 } else { 1 };
    let num_st = 1 + entities.len() + relations.len();
    let fixed = query.len() + num_sep + num_st;
    if query.len() + num_sep > max_len || fixed > max_len {
        return Err(CoreError::Length { len: fixed, max: max_len });
    }
    let mut lens: Vec<usize> = entities.iter().chain(relations).map(|c| c.tokens.len()).collect();
    let trimmed = trim(&mut lens, max_len - fixed);

    let mut ids = Vec::with_capacity(fixed + lens.iter().sum::<usize>());
    ids.extend_from_slice(query);
    ids.push(SEP);
    let mut entity_st = vec![ids.len()];
    ids.push(vocab.st(0)?);
    let mut st = 1;
    let mut lens_iter = lens.iter();
    for c in entities {
        entity_st.push(ids.len());
        ids.push(vocab.st(st)?);
        st += 1;
        ids.extend_from_slice(&c.tokens[..*lens_iter.next().expect("one length per candidate")]);
    }
    if task == Task::Cie {
        ids.push(SEP);
    }
    let mut relation_st = Vec::with_capacity(relations.len());
    for c in relations {
        relation_st.push(ids.len());
        ids.push(vocab.st(st)?);
        st += 1;
        ids.extend_from_slice(&c.tokens[..*lens_iter.next().expect("one length per candidate")]);
    }
    Ok(ReaderInput {
        ids,
        query_len: query.len(),
        entity_st,
        relation_st,
        entities: entities.iter().map(|c| c.id.clone()).collect(),
        relations: relations.iter().map(|c| c.id.clone()).collect(),
        num_sep,
        trimmed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cand(id: &str, n: usize) -> Candidate {
        Candidate { id: id.into(), tokens: vec![40; n] }
    }

    fn identity(inp: &ReaderInput, passages: usize) -> bool {
        inp.len() == inp.query_len + inp.num_sep + inp.num_st() + passages
    }

    #[test]
    fn el_length_accounting() {
        let v = Vocabulary::new(4);
        let inp = assemble_input(&v, &[30; 5], &[cand("a", 3), cand("b", 3)], &[], Task::El, 64).unwrap();
        assert_eq!(inp.len(), 15);
        assert!(identity(&inp, 6));
        assert_eq!(inp.entity_st, vec![6, 7, 11]);
        assert_eq!(inp.ids[inp.entity_st[0]], v.st(0).unwrap());
        assert_eq!(inp.entities, vec!["a", "b"]);
    }

    #[test]
    fn no_candidates_leaves_nme_slot() {
        let v = Vocabulary::new(1);
        let inp = assemble_input(&v, &[30, 31], &[], &[], Task::El, 8).unwrap();
        assert_eq!(inp.ids, vec![30, 31, SEP, v.st(0).unwrap()]);
    }

    #[test]
    fn cie_layout_continues_st_indices() {
        let v = Vocabulary::new(4);
        let inp = assemble_input(&v, &[30], &[cand("e1", 1), cand("e2", 1)], &[cand("r1", 2)], Task::Cie, 64).unwrap();
        let st: Vec<TokenId> = inp.entity_st.iter().chain(&inp.relation_st).map(|&p| inp.ids[p]).collect();
        assert_eq!(st, (0..4).map(|i| v.st(i).unwrap()).collect::<Vec<_>>());
        assert_eq!(inp.ids.iter().filter(|&&t| t == SEP).count(), 2);
        assert!(identity(&inp, 4));
    }

    #[test]
    fn re_layout_keeps_unscored_st0() {
        let v = Vocabulary::new(3);
        let inp = assemble_input(&v, &[30, 31], &[cand("e", 1)], &[cand("r1", 1), cand("r2", 1)], Task::Re, 64).unwrap();
        assert_eq!(inp.entity_st, vec![3]);
        assert_eq!(inp.relation_st, vec![4, 6]);
        assert!(inp.entities.is_empty());
    }

    #[test]
    fn trimming_hits_longest_then_lowest_ranked() {
        let v = Vocabulary::new(4);
        let inp = assemble_input(&v, &[30; 3], &[cand("a", 4), cand("b", 4), cand("c", 2)], &[], Task::El, 3 + 1 + 4 + 8).unwrap();
        assert_eq!(inp.trimmed, 2);
        // lengths become 3, 3, 2
        assert_eq!(inp.entity_st, vec![4, 5, 9, 13]);
        assert!(identity(&inp, 8));
    }

    #[test]
    fn oversized_query_or_too_many_candidates_rejected() {
        let v = Vocabulary::new(2);
        assert!(assemble_input(&v, &[30; 10], &[], &[], Task::El, 10).is_err());
        let many: Vec<Candidate> = (0..3).map(|i| cand(&i.to_string(), 1)).collect();
        assert!(assemble_input(&v, &[30], &many, &[], Task::El, 64).is_err());
    }

    proptest! {
        #[test]
        fn length_identity_always_holds(q in 1usize..20, lens in prop::collection::vec(0usize..12, 0..8), max in 20usize..80) {
            let v = Vocabulary::new(9);
            let cands: Vec<Candidate> = lens.iter().enumerate().map(|(i, &n)| cand(&i.to_string(), n)).collect();
            if let Ok(inp) = assemble_input(&v, &vec![30; q], &cands, &[], Task::El, max) {
                let kept = lens.iter().sum::<usize>() - inp.trimmed;
                prop_assert!(identity(&inp, kept));
                prop_assert!(inp.len() <= max);
            } else {
                prop_assert!(q + 2 + lens.len() > max);
            }
        }
    }
}
