//! Relation extraction head over Hadamard triplet representations.

use rand::Rng;
use rrx_numerics::{Graph, ParamId, ParameterStore, Var};

use crate::encoder::fan_in_std;
use crate::error::{CoreError, Result};
use crate::reader::spans::{first_class_probs, Span};

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub subject: Span,
    pub object: Span,
    pub relation: String,
    pub probability: f64,
}

#[derive(Debug, Clone)]
pub struct ReHead {
    pub w_subject: ParamId,
    pub b_subject: ParamId,
    pub w_object: ParamId,
    pub b_object: ParamId,
    pub w_r: ParamId,
    pub b_r: ParamId,
    pub w_rel: ParamId,
    pub b_rel: ParamId,
}

/// Flat row of triplet `(m, m', k)` among `n` mentions and `k_rel` relations.
pub fn triplet_index(m: usize, m2: usize, k: usize, n: usize, k_rel: usize) -> usize {
    (m * n + m2) * k_rel + k
}

impl ReHead {
    /// `input_width` is 2H for plain RE and 3H when conditioned on linking.
    pub fn init<R: Rng>(
        prefix: &str,
        hidden: usize,
        input_width: usize,
        store: &mut ParameterStore,
        rng: &mut R,
    ) -> Result<Self> {
        let p = |s: &str| format!("{prefix}.{s}");
        Ok(Self {
            w_subject: store.insert_normal(&p("w_subject"), &[input_width, hidden], fan_in_std(input_width), 0, rng)?,
            b_subject: store.insert_zeros(&p("b_subject"), &[hidden], 0)?,
            w_object: store.insert_normal(&p("w_object"), &[input_width, hidden], fan_in_std(input_width), 0, rng)?,
            b_object: store.insert_zeros(&p("b_object"), &[hidden], 0)?,
            w_r: store.insert_normal(&p("w_r"), &[hidden, hidden], fan_in_std(hidden), 0, rng)?,
            b_r: store.insert_zeros(&p("b_r"), &[hidden], 0)?,
            w_rel: store.insert_normal(&p("w_rel"), &[hidden, 2], fan_in_std(hidden), 0, rng)?,
            b_rel: store.insert_zeros(&p("b_rel"), &[2], 0)?,
        })
    }

    fn ff(g: &mut Graph, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let (w, b) = (g.param(w), g.param(b));
        let z = g.linear(x, w, b)?;
        Ok(g.gelu(z)?)
    }

    /// `(S, O, R)` from mention inputs `xm` (n×2H or n×3H) and the relation
    /// special-token positions.
    pub fn project(&self, g: &mut Graph, xm: Var, x: Var, rel_st: &[usize]) -> Result<(Var, Var, Var)> {
        if rel_st.is_empty() {
            return Err(CoreError::Contract("relation projection needs candidates".into()));
        }
        let s = Self::ff(g, xm, self.w_subject, self.b_subject)?;
        let o = Self::ff(g, xm, self.w_object, self.b_object)?;
        let xr = g.rows(x, rel_st)?;
        let r = Self::ff(g, xr, self.w_r, self.b_r)?;
        Ok((s, o, r))
    }

    /// `W_rel^T (S_m ⊙ O_m' ⊙ R_k) + b_rel` for every `(m, m', k)`, one row
    /// each in [`triplet_index`] order.
    pub fn triplet_logits(&self, g: &mut Graph, s: Var, o: Var, r: Var) -> Result<Var> {
        let n = g.value(s).rows();
        let k = g.value(r).rows();
        let mut im = Vec::with_capacity(n * n * k);
        let mut io = Vec::with_capacity(n * n * k);
        let mut ir = Vec::with_capacity(n * n * k);
        for m in 0..n {
            for m2 in 0..n {
                for kk in 0..k {
                    im.push(m);
                    io.push(m2);
                    ir.push(kk);
                }
            }
        }
        let sm = g.rows(s, &im)?;
        let om = g.rows(o, &io)?;
        let rm = g.rows(r, &ir)?;
        let t = g.mul(sm, om)?;
        let t = g.mul(t, rm)?;
        let (w, b) = (g.param(self.w_rel), g.param(self.b_rel));
        Ok(g.linear(t, w, b)?)
    }
}

/// `p_rel` per triplet row.
pub fn triplet_probs(g: &Graph, logits: Var) -> Vec<f64> {
    first_class_probs(g.value(logits))
}

/// Every `(m, m', k)` with probability above `threshold`; self-pairs only
/// when `self_pairs` is set.
pub fn re_inference(
    spans: &[Span],
    probs: &[f64],
    manifest: &[String],
    threshold: f64,
    self_pairs: bool,
) -> Vec<Triplet> {
    let n = spans.len();
    let k_rel = manifest.len();
    let mut out = Vec::new();
    for m in 0..n {
        for m2 in 0..n {
            if m == m2 && !self_pairs {
                continue;
            }
            for k in 0..k_rel {
                let p = probs[triplet_index(m, m2, k, n, k_rel)];
                if p > threshold {
                    out.push(Triplet {
                        subject: spans[m],
                        object: spans[m2],
                        relation: manifest[k].clone(),
                        probability: p,
                    });
                }
            }
        }
    }
    out
}
