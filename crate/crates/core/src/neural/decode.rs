//! Incremental (key/value cached) evaluation and greedy decoding.

use super::model::{
    final_base, layer_base, layer_norm_row, Transformer, B1, B2, BK, BO, BQ, BV, EMB_POSITION, EMB_ROLE, EMB_SEGMENT,
    EMB_TOKEN, LN1_B, LN1_G, LN2_B, LN2_G, W1, W2, WK, WO, WQ, WV,
};
use super::tensor::{dot, gelu, softmax_in_place, Scalar};
use super::EmbeddingMode;
use crate::error::{Error, Result};
use crate::linearize::{Role, Segment, TaggedSequence};

/// A model that consumes one token at a time and can report next-token logits.
pub trait DecodeSession {
    /// Appends a token; returns next-token logits when `want_logits` is set.
    fn feed(&mut self, token: u32, role: Role, segment: Segment, want_logits: bool) -> Result<Option<Vec<f32>>>;

    /// Maximum number of tokens the session can hold.
    fn capacity(&self) -> usize;
}

pub struct KvSession<'m, T> {
    model: &'m Transformer<T>,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
}

impl<'m, T: Scalar> KvSession<'m, T> {
    pub fn new(model: &'m Transformer<T>) -> Self {
        let layers = model.config().layers;
        let cap = model.config().max_positions * model.config().hidden;
        Self {
            model,
            keys: (0..layers).map(|_| Vec::with_capacity(cap)).collect(),
            values: (0..layers).map(|_| Vec::with_capacity(cap)).collect(),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Like [`DecodeSession::feed`] but returns logits in the model's precision.
    pub fn feed_native(&mut self, token: u32, role: Role, segment: Segment, want_logits: bool) -> Result<Option<Vec<T>>> {
        let m = self.model;
        let cfg = m.config();
        let p = m.params();
        let (d, f, heads) = (cfg.hidden, cfg.ffn_dim(), cfg.heads);
        let dh = d / heads;
        if self.len >= cfg.max_positions {
            return Err(Error::structural(format!("position {} exceeds max_positions {}", self.len, cfg.max_positions)));
        }
        if token as usize >= cfg.vocab_size {
            return Err(Error::structural(format!("token id {token} outside vocabulary")));
        }
        let pos = self.len;
        let mut x: Vec<T> = (0..d)
            .map(|j| p.get(EMB_TOKEN)[token as usize * d + j] + p.get(EMB_POSITION)[pos * d + j])
            .collect();
        if cfg.embedding_mode == EmbeddingMode::TokenPositionRoleSegment {
            for j in 0..d {
                x[j] += p.get(EMB_ROLE)[role.index() * d + j] + p.get(EMB_SEGMENT)[segment.index() * d + j];
            }
        }
        let scale = T::one() / T::of(dh as f64).sqrt();
        let n = pos + 1;
        let mut scores = vec![T::zero(); n];
        for l in 0..cfg.layers {
            let b = layer_base(l);
            let a = layer_norm_row(&x, p.get(b + LN1_G), p.get(b + LN1_B));
            let q = m.vec_mat(&a, b + WQ, d, d, b + BQ);
            let k = m.vec_mat(&a, b + WK, d, d, b + BK);
            let v = m.vec_mat(&a, b + WV, d, d, b + BV);
            self.keys[l].extend_from_slice(&k);
            self.values[l].extend_from_slice(&v);
            let (keys, values) = (&self.keys[l], &self.values[l]);
            let mut ctx = vec![T::zero(); d];
            for h in 0..heads {
                let off = h * dh;
                let qh = &q[off..off + dh];
                for (j, s) in scores.iter_mut().enumerate() {
                    *s = dot(qh, &keys[j * d + off..j * d + off + dh]) * scale;
                }
                softmax_in_place(&mut scores);
                for (j, &pj) in scores.iter().enumerate() {
                    for (c, &vv) in ctx[off..off + dh].iter_mut().zip(&values[j * d + off..j * d + off + dh]) {
                        *c += pj * vv;
                    }
                }
            }
            let attn = m.vec_mat(&ctx, b + WO, d, d, b + BO);
            x.iter_mut().zip(&attn).for_each(|(xi, &o)| *xi += o);
            let c = layer_norm_row(&x, p.get(b + LN2_G), p.get(b + LN2_B));
            let hidden: Vec<T> = m.vec_mat(&c, b + W1, d, f, b + B1).into_iter().map(gelu).collect();
            let out = m.vec_mat(&hidden, b + W2, f, d, b + B2);
            x.iter_mut().zip(&out).for_each(|(xi, &o)| *xi += o);
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::numeric(format!("layer {l} output")));
            }
        }
        self.len += 1;
        if !want_logits {
            return Ok(None);
        }
        let fb = final_base(cfg);
        let z = layer_norm_row(&x, p.get(fb), p.get(fb + 1));
        Ok(Some(m.logits_from_hidden(&z)))
    }
}

impl<T: Scalar> DecodeSession for KvSession<'_, T> {
    fn feed(&mut self, token: u32, role: Role, segment: Segment, want_logits: bool) -> Result<Option<Vec<f32>>> {
        Ok(self
            .feed_native(token, role, segment, want_logits)?
            .map(|l| l.into_iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect()))
    }

    fn capacity(&self) -> usize {
        self.model.config().max_positions
    }
}

/// Lowest index among the maximal logits.
pub fn argmax(logits: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Feeds `prefix`, then repeatedly appends the argmax token (role and segment
/// `State`) until `stop_token` is produced, `max_new` tokens exist, or the
/// session is full. The returned tokens include the stop token when reached.
pub fn greedy_decode<S: DecodeSession + ?Sized>(session: &mut S, prefix: &TaggedSequence, stop_token: u32, max_new: usize) -> Result<Vec<u32>> {
    if prefix.is_empty() {
        return Err(Error::structural("greedy_decode needs a nonempty prefix"));
    }
    let n = prefix.len();
    let mut logits = None;
    for i in 0..n {
        logits = session.feed(prefix.token_ids()[i], prefix.roles()[i], prefix.segments()[i], i + 1 == n)?;
    }
    let mut out = Vec::new();
    let mut logits = logits.expect("last prefix position returns logits");
    while out.len() < max_new {
        let next = argmax(&logits);
        out.push(next);
        if next == stop_token || n + out.len() >= session.capacity() || out.len() == max_new {
            break;
        }
        logits = session
            .feed(next, Role::State, Segment::State, true)?
            .expect("logits requested");
    }
    Ok(out)
}
