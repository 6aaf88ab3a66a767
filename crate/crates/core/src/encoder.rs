//! Bidirectional post-LN transformer encoder with learned absolute positions.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rrx_numerics::{Graph, ParamId, ParameterStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::vocab::{TokenId, PAD};

const LN_EPS: f64 = 1e-5;
const MASKED: f64 = -1e9;
pub(crate) const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub max_len: usize,
    pub vocab_size: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(CoreError::Config(format!(
                "hidden size {} must be a positive multiple of the head count {}",
                self.hidden, self.heads
            )));
        }
        if self.max_len == 0 || self.vocab_size == 0 || self.ffn_mult == 0 {
            return Err(CoreError::Config("encoder sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Training-time dropout on the embedding output and on both residual
/// branches of every block. Masks are drawn from `seed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
    pub seed: u64,
}

struct Masks {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Masks {
    fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        let keep = 1.0 - self.rate;
        let shape = g.shape(x).to_vec();
        let n = shape.iter().product();
        let m = (0..n).map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let m = g.constant(Tensor::new(shape, m)?)?;
        Ok(g.mul(x, m)?)
    }
}

#[derive(Debug, Clone)]
struct LayerParams {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

/// Encoder architecture bound to its parameters inside a shared store.
#[derive(Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
    tok: ParamId,
    pos: ParamId,
    ln0_g: ParamId,
    ln0_b: ParamId,
    layers: Vec<LayerParams>,
    forwards: AtomicUsize,
}

impl Clone for Encoder {
    fn clone(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            tok: self.tok,
            pos: self.pos,
            ln0_g: self.ln0_g,
            ln0_b: self.ln0_b,
            layers: self.layers.clone(),
            forwards: AtomicUsize::new(self.forward_count()),
        }
    }
}

impl Encoder {
    /// Registers freshly initialized parameters under `prefix`. Depths for
    /// layer-wise decay count from the top: the last block sits at depth 1,
    /// embeddings at `layers + 1`.
    pub fn init<R: Rng>(cfg: EncoderConfig, prefix: &str, store: &mut ParameterStore, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let f = h * cfg.ffn_mult;
        let emb_depth = cfg.layers + 1;
        let p = |s: &str| format!("{prefix}.{s}");
        let tok = store.insert_normal(&p("tok"), &[cfg.vocab_size, h], INIT_STD, emb_depth, rng)?;
        let pos = store.insert(&p("pos"), sinusoid(cfg.max_len, h)?, emb_depth)?;
        let ln0_g = store.insert_ones(&p("ln0.g"), &[h], emb_depth)?;
        let ln0_b = store.insert_zeros(&p("ln0.b"), &[h], emb_depth)?;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let d = cfg.layers - l;
            let q = |s: &str| format!("{prefix}.l{l}.{s}");
            let mut w = |name: &str, shape: &[usize]| store.insert_normal(&q(name), shape, fan_in_std(shape[0]), d, rng);
            let (wq, wk, wv, wo) = (w("wq", &[h, h])?, w("wk", &[h, h])?, w("wv", &[h, h])?, w("wo", &[h, h])?);
            let (w1, w2) = (w("w1", &[h, f])?, w("w2", &[f, h])?);
            layers.push(LayerParams {
                wq,
                wk,
                wv,
                wo,
                w1,
                w2,
                bq: store.insert_zeros(&q("bq"), &[h], d)?,
                bk: store.insert_zeros(&q("bk"), &[h], d)?,
                bv: store.insert_zeros(&q("bv"), &[h], d)?,
                bo: store.insert_zeros(&q("bo"), &[h], d)?,
                b1: store.insert_zeros(&q("b1"), &[f], d)?,
                b2: store.insert_zeros(&q("b2"), &[h], d)?,
                ln1_g: store.insert_ones(&q("ln1.g"), &[h], d)?,
                ln1_b: store.insert_zeros(&q("ln1.b"), &[h], d)?,
                ln2_g: store.insert_ones(&q("ln2.g"), &[h], d)?,
                ln2_b: store.insert_zeros(&q("ln2.b"), &[h], d)?,
            });
        }
        Ok(Self {
            cfg,
            tok,
            pos,
            ln0_g,
            ln0_b,
            layers,
            forwards: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Number of `forward` calls made so far.
    pub fn forward_count(&self) -> usize {
        self.forwards.load(Ordering::Relaxed)
    }

    pub fn reset_forward_count(&self) {
        self.forwards.store(0, Ordering::Relaxed);
    }

    fn layer_norm(&self, g: &mut Graph, x: Var, gain: ParamId, bias: ParamId) -> Result<Var> {
        let n = g.layer_norm(x, LN_EPS)?;
        let (gv, bv) = (g.param(gain), g.param(bias));
        let scaled = g.mul_row(n, gv)?;
        Ok(g.add_row(scaled, bv)?)
    }

    fn dense(&self, g: &mut Graph, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let (wv, bv) = (g.param(w), g.param(b));
        Ok(g.linear(x, wv, bv)?)
    }

    /// Contextual states `X` (l×H) for `ids`. PAD positions are excluded as
    /// attention keys, so trailing padding never alters real-token rows.
    pub fn forward(&self, g: &mut Graph, ids: &[TokenId]) -> Result<Var> {
        self.forward_with(g, ids, None)
    }

    /// [`Encoder::forward`] with optional dropout; a zero rate is the identity.
    pub fn forward_with(&self, g: &mut Graph, ids: &[TokenId], dropout: Option<Dropout>) -> Result<Var> {
        let mut masks = match dropout {
            Some(d) if !(0.0..1.0).contains(&d.rate) => {
                return Err(CoreError::Config(format!("dropout rate {} outside [0, 1)", d.rate)));
            }
            Some(d) if d.rate > 0.0 => Some(Masks { rate: d.rate, rng: ChaCha8Rng::seed_from_u64(d.seed) }),
            _ => None,
        };
        let mut drop = |g: &mut Graph, x: Var| match masks.as_mut() {
            Some(m) => m.apply(g, x),
            None => Ok(x),
        };
        let l = ids.len();
        if l == 0 {
            return Err(CoreError::Contract("cannot encode an empty sequence".into()));
        }
        if l > self.cfg.max_len {
            return Err(CoreError::Length { len: l, max: self.cfg.max_len });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.cfg.vocab_size) {
            return Err(CoreError::Contract(format!("token id {bad} outside the vocabulary")));
        }
        self.forwards.fetch_add(1, Ordering::Relaxed);

        let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let tok = g.param(self.tok);
        let pos = g.param(self.pos);
        let x = g.rows(tok, &rows)?;
        let positions: Vec<usize> = (0..l).collect();
        let p = g.rows(pos, &positions)?;
        let sum = g.add(x, p)?;
        let h = self.layer_norm(g, sum, self.ln0_g, self.ln0_b)?;
        let mut h = drop(g, h)?;

        let mask = if ids.contains(&PAD) {
            let mut m = vec![0.0; l * l];
            for (j, _) in ids.iter().enumerate().filter(|(_, &id)| id == PAD) {
                (0..l).for_each(|i| m[i * l + j] = MASKED);
            }
            Some(Tensor::new(vec![l, l], m)?)
        } else {
            None
        };

        let hd = self.cfg.hidden / self.cfg.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        for lp in &self.layers {
            let q = self.dense(g, h, lp.wq, lp.bq)?;
            let k = self.dense(g, h, lp.wk, lp.bk)?;
            let v = self.dense(g, h, lp.wv, lp.bv)?;
            let mut heads = Vec::with_capacity(self.cfg.heads);
            for i in 0..self.cfg.heads {
                let (a, b) = (i * hd, (i + 1) * hd);
                let qh = g.slice_cols(q, a, b)?;
                let kh = g.slice_cols(k, a, b)?;
                let vh = g.slice_cols(v, a, b)?;
                let kt = g.transpose(kh)?;
                let s = g.matmul(qh, kt)?;
                let mut s = g.scale(s, scale)?;
                if let Some(m) = &mask {
                    s = g.add_const(s, m)?;
                }
                let attn = g.softmax_rows(s)?;
                heads.push(g.matmul(attn, vh)?);
            }
            let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
            let o = self.dense(g, cat, lp.wo, lp.bo)?;
            let o = drop(g, o)?;
            let r = g.add(h, o)?;
            h = self.layer_norm(g, r, lp.ln1_g, lp.ln1_b)?;
            let f = self.dense(g, h, lp.w1, lp.b1)?;
            let f = g.gelu(f)?;
            let f = self.dense(g, f, lp.w2, lp.b2)?;
            let f = drop(g, f)?;
            let r = g.add(h, f)?;
            h = self.layer_norm(g, r, lp.ln2_g, lp.ln2_b)?;
        }
        Ok(h)
    }
}

/// Init std for a dense matrix with `fan_in` input rows.
pub fn fan_in_std(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// Sinusoidal table scaled so its entries have rms [`INIT_STD`], used as
/// the starting point of the learned position embeddings.
fn sinusoid(len: usize, h: usize) -> Result<Tensor> {
    let amp = INIT_STD * std::f64::consts::SQRT_2;
    let mut data = Vec::with_capacity(len * h);
    for i in 0..len {
        for j in 0..h {
            let freq = 10_000f64.powf(-((j / 2 * 2) as f64) / h as f64);
            let a = i as f64 * freq;
            data.push(amp * if j % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Ok(Tensor::new(vec![len, h], data)?)
}

/// Mean of the rows of `x` whose `mask` entry is true.
pub fn pool(g: &mut Graph, x: Var, mask: &[bool]) -> Result<Var> {
    let keep: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    if keep.is_empty() {
        return Err(CoreError::Contract("pooling over an all-masked sequence".into()));
    }
    if keep.len() == g.value(x).rows() {
        return Ok(g.mean_rows(x)?);
    }
    let sel = g.rows(x, &keep)?;
    Ok(g.mean_rows(sel)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rrx_numerics::{check_gradients, GradCheckOptions};

    fn tiny(max_len: usize) -> (ParameterStore, Encoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParameterStore::new();
        let cfg = EncoderConfig {
            hidden: 16,
            layers: 2,
            heads: 2,
            ffn_mult: 2,
            max_len,
            vocab_size: 12,
        };
        let enc = Encoder::init(cfg, "enc", &mut store, &mut rng).unwrap();
        (store, enc)
    }

    #[test]
    fn output_shape_and_counter() {
        let (store, enc) = tiny(16);
        let mut g = Graph::new(&store);
        let x = enc.forward(&mut g, &[3, 4, 5, 6, 7, 8, 9]).unwrap();
        assert_eq!(g.shape(x), &[7, 16]);
        assert_eq!(enc.forward_count(), 1);
    }

    #[test]
    fn over_length_and_empty_rejected() {
        let (store, enc) = tiny(4);
        let mut g = Graph::new(&store);
        assert!(matches!(enc.forward(&mut g, &[3; 5]), Err(CoreError::Length { len: 5, max: 4 })));
        assert!(enc.forward(&mut g, &[]).is_err());
    }

    #[test]
    fn trailing_padding_is_exactly_invisible() {
        let (store, enc) = tiny(16);
        let ids = [5, 9, 3, 7];
        let mut g = Graph::new(&store);
        let x = enc.forward(&mut g, &ids).unwrap();
        let base = g.value(x).data().to_vec();
        let mut padded = ids.to_vec();
        padded.extend([PAD, PAD, PAD]);
        let mut g2 = Graph::new(&store);
        let y = enc.forward(&mut g2, &padded).unwrap();
        assert_eq!(&g2.value(y).data()[..base.len()], &base[..]);
    }

    #[test]
    fn permuting_pad_tail_keeps_real_rows() {
        let (store, enc) = tiny(16);
        let a = [5, 9, 3, PAD, PAD];
        let mut g = Graph::new(&store);
        let x = enc.forward(&mut g, &a).unwrap();
        let mut g2 = Graph::new(&store);
        let y = enc.forward(&mut g2, &a).unwrap();
        assert_eq!(&g.value(x).data()[..48], &g2.value(y).data()[..48]);
    }

    #[test]
    fn encode_is_deterministic() {
        let (store, enc) = tiny(16);
        let run = || {
            let mut g = Graph::new(&store);
            let x = enc.forward(&mut g, &[4, 4, 8]).unwrap();
            g.value(x).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn pool_cases() {
        let mut g = Graph::detached();
        let x = g.input(Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap()).unwrap();
        let p = pool(&mut g, x, &[true, true]).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 1.0]);
        let p = pool(&mut g, x, &[false, true]).unwrap();
        assert_eq!(g.value(p).data(), &[0.0, 2.0]);
        let same = g.input(Tensor::from_rows(&vec![vec![1.5, -1.0]; 3]).unwrap()).unwrap();
        let p = pool(&mut g, same, &[true; 3]).unwrap();
        assert_eq!(g.value(p).data(), &[1.5, -1.0]);
        assert!(pool(&mut g, x, &[false, false]).is_err());
    }

    #[test]
    fn embedding_gradient_matches_finite_differences() {
        let (store, enc) = tiny(16);
        let ids = [3u32, 7, 7, 10, 4];
        let loss = |s: &ParameterStore| -> Result<_> {
            let mut g = Graph::new(s);
            let x = enc.forward(&mut g, &ids)?;
            let m = pool(&mut g, x, &[true; 5])?;
            let w: Vec<f64> = (0..16).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
            let l = g.weighted_sum(m, w)?;
            Ok((g.value(l).item(), g.backward(l)?))
        };
        let report =
            check_gradients(&store, |n| n == "enc.tok" || n == "enc.pos", &GradCheckOptions::default(), loss).unwrap();
        assert!(report.passes(1e-4), "{:?}", report.worst());
    }

    #[test]
    fn dropout_is_seeded_and_off_at_zero() {
        let (store, enc) = tiny(16);
        let ids = [4, 9, 3, 8, 5];
        let run = |d: Option<Dropout>| {
            let mut g = Graph::new(&store);
            let x = enc.forward_with(&mut g, &ids, d).unwrap();
            g.value(x).data().to_vec()
        };
        let plain = run(None);
        assert_eq!(run(Some(Dropout { rate: 0.0, seed: 1 })), plain);
        let a = run(Some(Dropout { rate: 0.3, seed: 1 }));
        assert_eq!(run(Some(Dropout { rate: 0.3, seed: 1 })), a);
        assert_ne!(a, plain);
        assert_ne!(run(Some(Dropout { rate: 0.3, seed: 2 })), a);
        let mut g = Graph::new(&store);
        assert!(enc.forward_with(&mut g, &ids, Some(Dropout { rate: 1.0, seed: 0 })).is_err());
    }
}
