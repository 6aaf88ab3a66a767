//! Overlapping fixed-size windows over documents.

use crate::pipeline::document::{Document, GoldMention, GoldTriplet};
use crate::reader::Span;

/// A slice of a document used as one query, with window-local gold.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub doc_id: String,
    /// Word offset of the slice inside the document.
    pub start: usize,
    /// Query words: the optional document first word followed by the slice.
    pub words: Vec<String>,
    pub prefixed: bool,
    /// The slice ends before the end of the document.
    pub truncated: bool,
    /// Gold spans in query coordinates (1-based inclusive, prefix included).
    pub mentions: Vec<GoldMention>,
    pub triplets: Vec<GoldTriplet>,
}

impl Window {
    pub fn id(&self) -> String {
        format!("{}#{}", self.doc_id, self.start)
    }

    pub fn prefix_len(&self) -> usize {
        usize::from(self.prefixed)
    }

    /// Number of document words in the slice.
    pub fn slice_len(&self) -> usize {
        self.words.len() - self.prefix_len()
    }

    /// Document span (1-based inclusive) for a query-local span, or `None`
    /// when it touches the prefix.
    pub fn to_document(&self, local: Span) -> Option<Span> {
        let p = self.prefix_len();
        if local.start <= p {
            return None;
        }
        Some(Span {
            start: local.start - p + self.start,
            end: local.end - p + self.start,
        })
    }

    fn to_local(&self, doc: Span) -> Option<Span> {
        let end = self.start + self.slice_len();
        if doc.start > self.start && doc.end <= end {
            let p = self.prefix_len();
            Some(Span {
                start: doc.start - self.start + p,
                end: doc.end - self.start + p,
            })
        } else {
            None
        }
    }
}

/// Windows start at `0, S, 2S, …` and cover `[iS, min(iS + W, len))`;
/// generation stops with the first window that reaches the document end.
/// Gold spans not fully inside a window are dropped from that window.
pub fn make_windows(doc: &Document, window: usize, stride: usize, prefix_first_word: bool) -> Vec<Window> {
    assert!(window >= stride && stride >= 1, "need W >= S >= 1");
    let len = doc.words.len();
    let mut out = Vec::new();
    if len == 0 {
        return out;
    }
    let mut start = 0;
    loop {
        let end = (start + window).min(len);
        let mut words = Vec::with_capacity(end - start + 1);
        if prefix_first_word {
            words.push(doc.words[0].clone());
        }
        words.extend_from_slice(&doc.words[start..end]);
        let mut w = Window {
            doc_id: doc.doc_id.clone(),
            start,
            words,
            prefixed: prefix_first_word,
            truncated: end < len,
            mentions: Vec::new(),
            triplets: Vec::new(),
        };
        w.mentions = doc
            .mentions
            .iter()
            .filter_map(|m| w.to_local(m.span).map(|span| GoldMention { span, entity: m.entity.clone() }))
            .collect();
        w.triplets = doc
            .triplets
            .iter()
            .filter_map(|t| {
                Some(GoldTriplet {
                    subject: w.to_local(t.subject)?,
                    object: w.to_local(t.object)?,
                    relation: t.relation.clone(),
                })
            })
            .collect();
        out.push(w);
        if end >= len {
            break;
        }
        start += stride;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(len: usize, mentions: &[(usize, usize)]) -> Document {
        Document {
            doc_id: "d".into(),
            words: (0..len).map(|i| format!("w{i}")).collect(),
            mentions: mentions
                .iter()
                .map(|&(s, e)| GoldMention { span: Span { start: s, end: e }, entity: "E".into() })
                .collect(),
            triplets: vec![],
        }
    }

    fn ranges(ws: &[Window]) -> Vec<(usize, usize)> {
        ws.iter().map(|w| (w.start, w.start + w.slice_len())).collect()
    }

    #[test]
    fn forced_window_layouts() {
        assert_eq!(ranges(&make_windows(&doc(48, &[]), 32, 16, false)), vec![(0, 32), (16, 48)]);
        assert_eq!(ranges(&make_windows(&doc(20, &[]), 32, 16, false)), vec![(0, 20)]);
        assert!(make_windows(&doc(0, &[]), 32, 16, false).is_empty());
        assert_eq!(
            ranges(&make_windows(&doc(50, &[]), 32, 16, false)),
            vec![(0, 32), (16, 48), (32, 50)]
        );
    }

    #[test]
    fn prefix_shifts_local_spans() {
        let d = doc(40, &[(18, 19)]);
        let ws = make_windows(&d, 32, 16, true);
        assert_eq!(ws[0].words[0], "w0");
        assert_eq!(ws[0].words.len(), 33);
        // doc span (18,19) is words 17..=18 (0-based); window 0 local = (19,20)
        assert_eq!(ws[0].mentions[0].span, Span { start: 19, end: 20 });
        assert_eq!(ws[1].mentions[0].span, Span { start: 3, end: 4 });
        assert_eq!(ws[1].to_document(Span { start: 3, end: 4 }), Some(Span { start: 18, end: 19 }));
        assert_eq!(ws[1].to_document(Span { start: 1, end: 2 }), None);
    }

    #[test]
    fn boundary_cut_mentions_dropped() {
        let d = doc(48, &[(31, 34)]);
        let ws = make_windows(&d, 32, 16, false);
        assert!(ws[0].mentions.is_empty());
        assert_eq!(ws[1].mentions.len(), 1);
    }

    proptest! {
        #[test]
        fn every_word_is_covered(len in 1usize..300, stride in 1usize..40, extra in 0usize..40) {
            let w = stride + extra;
            let ws = make_windows(&doc(len, &[]), w, stride, false);
            let mut covered = vec![false; len];
            for win in &ws {
                for i in win.start..win.start + win.slice_len() { covered[i] = true; }
            }
            prop_assert!(covered.iter().all(|&c| c));
            for pair in ws.windows(2) {
                if pair[1].start + pair[1].slice_len() < len || pair[1].slice_len() == w {
                    prop_assert_eq!(pair[0].start + pair[0].slice_len() - pair[1].start, w - stride);
                }
            }
        }

        #[test]
        fn short_mentions_survive_windowing(len in 2usize..200, stride in 1usize..20, s in 0usize..200, mlen in 1usize..30) {
            let w = 2 * stride;
            let mlen = mlen.min(stride + 1);
            prop_assume!(s + mlen <= len);
            let d = doc(len, &[(s + 1, s + mlen)]);
            let ws = make_windows(&d, w, stride, false);
            prop_assert!(ws.iter().any(|win| !win.mentions.is_empty()));
        }
    }
}
