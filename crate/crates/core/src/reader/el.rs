//! Entity linking head: mentions and candidate start tokens projected into a
//! shared space, with slot 0 standing for NME.

use rand::Rng;
use rrx_numerics::{Graph, ParamId, ParameterStore, Tensor, Var};

use crate::encoder::fan_in_std;
use crate::error::{CoreError, Result};
use crate::pipeline::document::NME;
use crate::reader::spans::{span_reps, Span};

#[derive(Debug, Clone, PartialEq)]
pub struct LinkedMention {
    pub span: Span,
    pub entity: String,
    pub probability: f64,
}

#[derive(Debug, Clone)]
pub struct ElHead {
    pub w_m: ParamId,
    pub b_m: ParamId,
}

impl ElHead {
    pub fn init<R: Rng>(prefix: &str, hidden: usize, store: &mut ParameterStore, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w_m: store.insert_normal(&format!("{prefix}.w_m"), &[2 * hidden, hidden], fan_in_std(2 * hidden), 0, rng)?,
            b_m: store.insert_zeros(&format!("{prefix}.b_m"), &[hidden], 0)?,
        })
    }

    /// `M` (|spans|×H) and `E_{0:K}` ((K+1)×H), both through the same `W_M`;
    /// each special-token vector is repeated to width 2H.
    pub fn project(&self, g: &mut Graph, x: Var, spans: &[Span], st: &[usize]) -> Result<(Var, Var)> {
        if spans.is_empty() || st.is_empty() {
            return Err(CoreError::Contract("entity projection needs spans and slots".into()));
        }
        let xm = span_reps(g, x, spans)?;
        let (w, b) = (g.param(self.w_m), g.param(self.b_m));
        let m = g.linear(xm, w, b)?;
        let m = g.gelu(m)?;
        let xst = g.rows(x, st)?;
        let rep = g.concat_cols(&[xst, xst])?;
        let e = g.linear(rep, w, b)?;
        let e = g.gelu(e)?;
        Ok((m, e))
    }

    /// Slot logits `E_{0:K}^T M` per mention (|spans|×(K+1)).
    pub fn link_logits(&self, g: &mut Graph, m: Var, e: Var) -> Result<Var> {
        let et = g.transpose(e)?;
        Ok(g.matmul(m, et)?)
    }
}

/// `L_EL = -Σ_m log p_ent(gold slot of m)`.
pub fn el_loss(g: &mut Graph, logits: Var, gold_slots: &[usize]) -> Result<Var> {
    let k1 = g.value(logits).cols();
    if gold_slots.len() != g.value(logits).rows() || gold_slots.iter().any(|&s| s >= k1) {
        return Err(CoreError::Contract("gold slots do not match the link logits".into()));
    }
    let ls = g.log_softmax_rows(logits)?;
    let mut w = vec![0.0; gold_slots.len() * k1];
    for (i, &s) in gold_slots.iter().enumerate() {
        w[i * k1 + s] = -1.0;
    }
    Ok(g.weighted_sum(ls, w)?)
}

/// Argmax slot per span, lowest slot on ties; slot 0 is NME.
pub fn link_inference(spans: &[Span], probs: &Tensor, manifest: &[String]) -> Vec<LinkedMention> {
    spans
        .iter()
        .enumerate()
        .map(|(i, &span)| {
            let row = probs.row(i);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            let entity = if best == 0 { NME.to_string() } else { manifest[best - 1].clone() };
            LinkedMention { span, entity, probability: row[best] }
        })
        .collect()
}
