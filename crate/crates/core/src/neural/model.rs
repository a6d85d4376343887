//! Pre-norm causal transformer with summed token/position/role/segment
//! embeddings and a weight-tied output projection.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{
    add_bias, bias_grad, dot, gelu, gelu_grad, log_sum_exp, matmul, matmul_acc, matmul_nt, matmul_tn_acc,
    softmax_in_place, Parameters, Scalar, Tensor,
};
use super::{EmbeddingMode, ModelConfig};
use crate::error::{Error, Result};
use crate::linearize::TaggedSequence;

const LN_EPS: f64 = 1e-5;
/// Amplitude of the sinusoidal position initialization.
const POSITION_SCALE: f64 = 0.028;

pub(crate) const EMB_TOKEN: usize = 0;
pub(crate) const EMB_POSITION: usize = 1;
pub(crate) const EMB_ROLE: usize = 2;
pub(crate) const EMB_SEGMENT: usize = 3;
const EMBEDDINGS: usize = 4;

pub(crate) const LN1_G: usize = 0;
pub(crate) const LN1_B: usize = 1;
pub(crate) const WQ: usize = 2;
pub(crate) const BQ: usize = 3;
pub(crate) const WK: usize = 4;
pub(crate) const BK: usize = 5;
pub(crate) const WV: usize = 6;
pub(crate) const BV: usize = 7;
pub(crate) const WO: usize = 8;
pub(crate) const BO: usize = 9;
pub(crate) const LN2_G: usize = 10;
pub(crate) const LN2_B: usize = 11;
pub(crate) const W1: usize = 12;
pub(crate) const B1: usize = 13;
pub(crate) const W2: usize = 14;
pub(crate) const B2: usize = 15;
const PER_LAYER: usize = 16;

pub(crate) fn layer_base(layer: usize) -> usize {
    EMBEDDINGS + layer * PER_LAYER
}

pub(crate) fn final_base(config: &ModelConfig) -> usize {
    EMBEDDINGS + config.layers * PER_LAYER
}

/// Names and shapes of every parameter tensor, in storage order.
pub fn parameter_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.hidden;
    let f = config.ffn_dim();
    let mut out = vec![
        ("embed.token".to_string(), vec![config.vocab_size, d]),
        ("embed.position".to_string(), vec![config.max_positions, d]),
        ("embed.role".to_string(), vec![config.role_count, d]),
        ("embed.segment".to_string(), vec![config.segment_count, d]),
    ];
    for l in 0..config.layers {
        let p = |s: &str| format!("layer{l}.{s}");
        out.extend([
            (p("ln1.gain"), vec![d]),
            (p("ln1.bias"), vec![d]),
            (p("attn.query.weight"), vec![d, d]),
            (p("attn.query.bias"), vec![d]),
            (p("attn.key.weight"), vec![d, d]),
            (p("attn.key.bias"), vec![d]),
            (p("attn.value.weight"), vec![d, d]),
            (p("attn.value.bias"), vec![d]),
            (p("attn.output.weight"), vec![d, d]),
            (p("attn.output.bias"), vec![d]),
            (p("ln2.gain"), vec![d]),
            (p("ln2.bias"), vec![d]),
            (p("ffn.up.weight"), vec![d, f]),
            (p("ffn.up.bias"), vec![f]),
            (p("ffn.down.weight"), vec![f, d]),
            (p("ffn.down.bias"), vec![d]),
        ]);
    }
    out.push(("final_ln.gain".to_string(), vec![d]));
    out.push(("final_ln.bias".to_string(), vec![d]));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-layer softmax attention weights: `[layer][head]` → row-major `n×n`.
pub type AttentionMaps<T> = Vec<Vec<Vec<T>>>;

pub struct ForwardOutput<T> {
    /// Row-major `n × vocab_size`.
    pub logits: Vec<T>,
    pub attention: Option<AttentionMaps<T>>,
}

#[derive(Clone, Debug)]
pub struct Transformer<T> {
    config: ModelConfig,
    params: Parameters<T>,
}

struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

struct LayerCache<T> {
    ln1: LnCache<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
    drop1: Option<Vec<T>>,
    ln2: LnCache<T>,
    c: Vec<T>,
    hpre: Vec<T>,
    hact: Vec<T>,
    drop2: Option<Vec<T>>,
}

struct Cache<T> {
    n: usize,
    layers: Vec<LayerCache<T>>,
    lnf: LnCache<T>,
    z: Vec<T>,
}

fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T], d: usize) -> (Vec<T>, LnCache<T>) {
    let n = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); n];
    let inv_d = T::one() / T::of(d as f64);
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let r = T::one() / (var + T::of(LN_EPS)).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[i * d + j] = h;
            y[i * d + j] = h * gain[j] + bias[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward<T: Scalar>(dy: &[T], cache: &LnCache<T>, gain: &[T], dgain: &mut [T], dbias: &mut [T], d: usize) -> Vec<T> {
    let n = dy.len() / d;
    let mut dx = vec![T::zero(); dy.len()];
    let inv_d = T::one() / T::of(d as f64);
    let mut dxhat = vec![T::zero(); d];
    for i in 0..n {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let r = cache.rstd[i];
        for j in 0..d {
            dx[i * d + j] = r * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

fn check_finite<T: Scalar>(values: &[T], location: impl FnOnce() -> String) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(location()))
    }
}

fn dropout_mask<T: Scalar>(len: usize, p: f64, rng: &mut dyn RngCore) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    (0..len).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect()
}

impl<T: Scalar> Transformer<T> {
    /// Seeded random initialization.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let out_scale = 1.0 / ((2 * config.layers.max(1)) as f64).sqrt();
        let tensors = parameter_layout(config)
            .into_iter()
            .map(|(name, shape)| {
                let mut t = Tensor::zeros(name.clone(), shape.clone());
                let std = if name.starts_with("embed.") {
                    Some(0.02)
                } else if name.ends_with(".weight") {
                    let fan_in = shape[0] as f64;
                    let s = 1.0 / fan_in.sqrt();
                    Some(if name.contains("output") || name.contains("down") { s * out_scale } else { s })
                } else {
                    None
                };
                if name == "embed.position" {
                    let d = shape[1];
                    for (i, x) in t.data.iter_mut().enumerate() {
                        let (p, j) = ((i / d) as f64, i % d);
                        let angle = p / 10_000f64.powf((j - j % 2) as f64 / d as f64);
                        let wave = if j % 2 == 0 { angle.sin() } else { angle.cos() };
                        *x = T::of(POSITION_SCALE * wave);
                    }
                } else if let Some(std) = std {
                    let a = std * 3f64.sqrt();
                    t.data.iter_mut().for_each(|x| *x = T::of(rng.gen_range(-a..a)));
                } else if name.ends_with(".gain") {
                    t.data.iter_mut().for_each(|x| *x = T::one());
                }
                t
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            params: Parameters::new(tensors),
        })
    }

    /// Every parameter zero, including normalization gains.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let tensors = parameter_layout(config)
            .into_iter()
            .map(|(name, shape)| Tensor::zeros(name, shape))
            .collect();
        Ok(Self {
            config: config.clone(),
            params: Parameters::new(tensors),
        })
    }

    pub fn from_parameters(config: &ModelConfig, params: Parameters<T>) -> Result<Self> {
        config.validate()?;
        let layout = parameter_layout(config);
        if layout.len() != params.tensors().len()
            || layout
                .iter()
                .zip(params.tensors())
                .any(|((name, shape), t)| *name != t.name || *shape != t.shape)
        {
            return Err(Error::structural("parameter tensors do not match the model configuration"));
        }
        if let Some(t) = params.tensors().iter().find(|t| !t.all_finite()) {
            return Err(Error::numeric(format!("parameter tensor {}", t.name)));
        }
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Parameters<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters<T> {
        &mut self.params
    }

    pub fn into_parameters(self) -> Parameters<T> {
        self.params
    }

    fn check_sequence(&self, seq: &TaggedSequence) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::structural("empty sequence"));
        }
        if seq.len() > self.config.max_positions {
            return Err(Error::structural(format!(
                "sequence length {} exceeds max_positions {}",
                seq.len(),
                self.config.max_positions
            )));
        }
        if let Some(&id) = seq.token_ids().iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(Error::structural(format!("token id {id} outside vocabulary of {}", self.config.vocab_size)));
        }
        Ok(())
    }

    /// Row i = token + position (+ role + segment) embedding rows.
    pub fn embed(&self, seq: &TaggedSequence) -> Result<Vec<T>> {
        self.check_sequence(seq)?;
        let d = self.config.hidden;
        let tok = self.params.get(EMB_TOKEN);
        let pos = self.params.get(EMB_POSITION);
        let role = self.params.get(EMB_ROLE);
        let seg = self.params.get(EMB_SEGMENT);
        let full = self.config.embedding_mode == EmbeddingMode::TokenPositionRoleSegment;
        let mut x = vec![T::zero(); seq.len() * d];
        for i in 0..seq.len() {
            let row = &mut x[i * d..(i + 1) * d];
            let t = seq.token_ids()[i] as usize;
            let p = seq.positions()[i];
            for j in 0..d {
                row[j] = tok[t * d + j] + pos[p * d + j];
            }
            if full {
                let r = seq.roles()[i].index();
                let s = seq.segments()[i].index();
                for j in 0..d {
                    row[j] += role[r * d + j] + seg[s * d + j];
                }
            }
        }
        Ok(x)
    }

    fn run(&self, seq: &TaggedSequence, mut dropout_rng: Option<&mut dyn RngCore>, capture: bool) -> Result<(Cache<T>, Option<AttentionMaps<T>>)> {
        let cfg = &self.config;
        let (n, d, f, heads) = (seq.len(), cfg.hidden, cfg.ffn_dim(), cfg.heads);
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let p_drop = cfg.dropout;
        let mut x = self.embed(seq)?;
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut maps = capture.then(Vec::new);

        for l in 0..cfg.layers {
            let b = layer_base(l);
            let w = |k: usize| self.params.get(b + k);
            let (a, ln1) = layer_norm(&x, w(LN1_G), w(LN1_B), d);
            let mut q = matmul(&a, w(WQ), n, d, d);
            add_bias(&mut q, w(BQ));
            let mut k = matmul(&a, w(WK), n, d, d);
            add_bias(&mut k, w(BK));
            let mut v = matmul(&a, w(WV), n, d, d);
            add_bias(&mut v, w(BV));

            let mut probs = vec![T::zero(); heads * n * n];
            let mut ctx = vec![T::zero(); n * d];
            for h in 0..heads {
                let off = h * dh;
                for i in 0..n {
                    let row = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                    let qi = &q[i * d + off..i * d + off + dh];
                    for j in 0..=i {
                        row[j] = dot(qi, &k[j * d + off..j * d + off + dh]) * scale;
                    }
                    softmax_in_place(&mut row[..=i]);
                    let ci = &mut ctx[i * d + off..i * d + off + dh];
                    for j in 0..=i {
                        let pij = row[j];
                        for (c, &vv) in ci.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                            *c += pij * vv;
                        }
                    }
                }
            }
            if let Some(maps) = maps.as_mut() {
                maps.push((0..heads).map(|h| probs[h * n * n..(h + 1) * n * n].to_vec()).collect());
            }

            let mut attn_out = matmul(&ctx, w(WO), n, d, d);
            add_bias(&mut attn_out, w(BO));
            let drop1 = match dropout_rng.as_deref_mut() {
                Some(rng) if p_drop > 0.0 => {
                    let m = dropout_mask::<T>(n * d, p_drop, rng);
                    attn_out.iter_mut().zip(&m).for_each(|(o, &mk)| *o *= mk);
                    Some(m)
                }
                _ => None,
            };
            for (xi, &o) in x.iter_mut().zip(&attn_out) {
                *xi += o;
            }

            let (c, ln2) = layer_norm(&x, w(LN2_G), w(LN2_B), d);
            let mut hpre = matmul(&c, w(W1), n, d, f);
            add_bias(&mut hpre, w(B1));
            let hact: Vec<T> = hpre.iter().map(|&h| gelu(h)).collect();
            let mut ffn_out = matmul(&hact, w(W2), n, f, d);
            add_bias(&mut ffn_out, w(B2));
            let drop2 = match dropout_rng.as_deref_mut() {
                Some(rng) if p_drop > 0.0 => {
                    let m = dropout_mask::<T>(n * d, p_drop, rng);
                    ffn_out.iter_mut().zip(&m).for_each(|(o, &mk)| *o *= mk);
                    Some(m)
                }
                _ => None,
            };
            for (xi, &o) in x.iter_mut().zip(&ffn_out) {
                *xi += o;
            }
            check_finite(&x, || format!("layer {l} output"))?;

            layers.push(LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                ctx,
                drop1,
                ln2,
                c,
                hpre,
                hact,
                drop2,
            });
        }
        let fb = final_base(cfg);
        let (z, lnf) = layer_norm(&x, self.params.get(fb), self.params.get(fb + 1), d);
        Ok((Cache { n, layers, lnf, z }, maps))
    }

    /// Full logits for every position. Eval mode is deterministic; Train mode
    /// applies dropout drawn from `rng` when the config enables it.
    pub fn forward(&self, seq: &TaggedSequence, mode: Mode, rng: Option<&mut dyn RngCore>, capture_attention: bool) -> Result<ForwardOutput<T>> {
        let rng = if mode == Mode::Train { rng } else { None };
        let (cache, attention) = self.run(seq, rng, capture_attention)?;
        let logits = matmul_nt(&cache.z, self.params.get(EMB_TOKEN), cache.n, self.config.hidden, self.config.vocab_size);
        check_finite(&logits, || "output logits".to_string())?;
        Ok(ForwardOutput { logits, attention })
    }

    /// Mean target-token NLL and its gradient with respect to every parameter.
    /// Dropout is applied when `dropout_rng` is given and the config enables it.
    pub fn loss_and_grad(&self, seq: &TaggedSequence, dropout_rng: Option<&mut dyn RngCore>) -> Result<(T, Parameters<T>)> {
        let rows = predictor_rows(seq)?;
        let (cache, _) = self.run(seq, dropout_rng, false)?;
        let cfg = &self.config;
        let (n, d, vsz) = (cache.n, cfg.hidden, cfg.vocab_size);
        let emb = self.params.get(EMB_TOKEN);

        let m = rows.len();
        let mut zr = Vec::with_capacity(m * d);
        for &(r, _) in &rows {
            zr.extend_from_slice(&cache.z[r * d..(r + 1) * d]);
        }
        let mut dlogits = matmul_nt(&zr, emb, m, d, vsz);
        let inv_m = T::one() / T::of(m as f64);
        let mut loss = T::zero();
        for (i, &(_, target)) in rows.iter().enumerate() {
            let row = &mut dlogits[i * vsz..(i + 1) * vsz];
            loss += log_sum_exp(row) - row[target as usize];
            softmax_in_place(row);
            row[target as usize] -= T::one();
            row.iter_mut().for_each(|g| *g *= inv_m);
        }
        loss *= inv_m;
        if !loss.is_finite() {
            return Err(Error::numeric("loss"));
        }

        let mut grads = self.params.zeros_like();
        matmul_tn_acc(&dlogits, &zr, m, vsz, d, grads.get_mut(EMB_TOKEN));
        let dzr = matmul(&dlogits, emb, m, vsz, d);
        let mut dz = vec![T::zero(); n * d];
        for (i, &(r, _)) in rows.iter().enumerate() {
            for j in 0..d {
                dz[r * d + j] += dzr[i * d + j];
            }
        }
        self.backward(seq, &cache, dz, &mut grads)?;
        Ok((loss, grads))
    }

    fn backward(&self, seq: &TaggedSequence, cache: &Cache<T>, dz: Vec<T>, grads: &mut Parameters<T>) -> Result<()> {
        let cfg = &self.config;
        let (n, d, f, heads) = (cache.n, cfg.hidden, cfg.ffn_dim(), cfg.heads);
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();

        let fb = final_base(cfg);
        let mut dx = {
            let (head, tail) = grads.tensors_mut().split_at_mut(fb + 1);
            layer_norm_backward(&dz, &cache.lnf, self.params.get(fb), &mut head[fb].data, &mut tail[0].data, d)
        };

        for l in (0..cfg.layers).rev() {
            let lc = &cache.layers[l];
            let b = layer_base(l);
            let w = |k: usize| self.params.get(b + k);

            // Feed-forward branch.
            let mut dffn = dx.clone();
            if let Some(m) = &lc.drop2 {
                dffn.iter_mut().zip(m).for_each(|(g, &mk)| *g *= mk);
            }
            matmul_tn_acc(&lc.hact, &dffn, n, f, d, grads.get_mut(b + W2));
            bias_grad(&dffn, grads.get_mut(b + B2));
            let mut dh_act = matmul_nt(&dffn, w(W2), n, d, f);
            for (g, &h) in dh_act.iter_mut().zip(&lc.hpre) {
                *g *= gelu_grad(h);
            }
            matmul_tn_acc(&lc.c, &dh_act, n, d, f, grads.get_mut(b + W1));
            bias_grad(&dh_act, grads.get_mut(b + B1));
            let dc = matmul_nt(&dh_act, w(W1), n, f, d);
            let dx_ln2 = {
                let t = grads.tensors_mut();
                let (g, rest) = t[b + LN2_G..].split_at_mut(1);
                layer_norm_backward(&dc, &lc.ln2, w(LN2_G), &mut g[0].data, &mut rest[0].data, d)
            };
            for (a, &g) in dx.iter_mut().zip(&dx_ln2) {
                *a += g;
            }

            // Attention branch.
            let mut dattn = dx.clone();
            if let Some(m) = &lc.drop1 {
                dattn.iter_mut().zip(m).for_each(|(g, &mk)| *g *= mk);
            }
            matmul_tn_acc(&lc.ctx, &dattn, n, d, d, grads.get_mut(b + WO));
            bias_grad(&dattn, grads.get_mut(b + BO));
            let dctx = matmul_nt(&dattn, w(WO), n, d, d);

            let mut dq = vec![T::zero(); n * d];
            let mut dk = vec![T::zero(); n * d];
            let mut dv = vec![T::zero(); n * d];
            let mut dp = vec![T::zero(); n];
            for h in 0..heads {
                let off = h * dh;
                for i in 0..n {
                    let prow = &lc.probs[(h * n + i) * n..(h * n + i) * n + i + 1];
                    let dci = &dctx[i * d + off..i * d + off + dh];
                    let mut weighted = T::zero();
                    for j in 0..=i {
                        let vj = &lc.v[j * d + off..j * d + off + dh];
                        dp[j] = dot(dci, vj);
                        weighted += dp[j] * prow[j];
                        let pij = prow[j];
                        for (g, &c) in dv[j * d + off..j * d + off + dh].iter_mut().zip(dci) {
                            *g += pij * c;
                        }
                    }
                    let qi = &lc.q[i * d + off..i * d + off + dh];
                    for j in 0..=i {
                        let ds = prow[j] * (dp[j] - weighted) * scale;
                        if ds == T::zero() {
                            continue;
                        }
                        let kj = &lc.k[j * d + off..j * d + off + dh];
                        for (g, &kv) in dq[i * d + off..i * d + off + dh].iter_mut().zip(kj) {
                            *g += ds * kv;
                        }
                        for (g, &qv) in dk[j * d + off..j * d + off + dh].iter_mut().zip(qi) {
                            *g += ds * qv;
                        }
                    }
                }
            }
            matmul_tn_acc(&lc.a, &dq, n, d, d, grads.get_mut(b + WQ));
            bias_grad(&dq, grads.get_mut(b + BQ));
            matmul_tn_acc(&lc.a, &dk, n, d, d, grads.get_mut(b + WK));
            bias_grad(&dk, grads.get_mut(b + BK));
            matmul_tn_acc(&lc.a, &dv, n, d, d, grads.get_mut(b + WV));
            bias_grad(&dv, grads.get_mut(b + BV));
            let mut da = matmul_nt(&dq, w(WQ), n, d, d);
            for (a, g) in da.iter_mut().zip(matmul_nt(&dk, w(WK), n, d, d)) {
                *a += g;
            }
            for (a, g) in da.iter_mut().zip(matmul_nt(&dv, w(WV), n, d, d)) {
                *a += g;
            }
            let dx_ln1 = {
                let t = grads.tensors_mut();
                let (g, rest) = t[b + LN1_G..].split_at_mut(1);
                layer_norm_backward(&da, &lc.ln1, w(LN1_G), &mut g[0].data, &mut rest[0].data, d)
            };
            for (a, &g) in dx.iter_mut().zip(&dx_ln1) {
                *a += g;
            }
        }

        let full = cfg.embedding_mode == EmbeddingMode::TokenPositionRoleSegment;
        for i in 0..n {
            let row = &dx[i * d..(i + 1) * d];
            let mut add = |idx: usize, r: usize| {
                for (g, &v) in grads.get_mut(idx)[r * d..(r + 1) * d].iter_mut().zip(row) {
                    *g += v;
                }
            };
            add(EMB_TOKEN, seq.token_ids()[i] as usize);
            add(EMB_POSITION, seq.positions()[i]);
            if full {
                add(EMB_ROLE, seq.roles()[i].index());
                add(EMB_SEGMENT, seq.segments()[i].index());
            }
        }
        for t in grads.tensors() {
            if !t.all_finite() {
                return Err(Error::numeric(format!("gradient of {}", t.name)));
            }
        }
        Ok(())
    }

    /// Mean NLL of the target tokens, evaluated in Eval mode.
    pub fn loss(&self, seq: &TaggedSequence) -> Result<T> {
        let out = self.forward(seq, Mode::Eval, None, false)?;
        nll_loss(&out.logits, self.config.vocab_size, seq)
    }

    /// Hidden state after the final norm for a single appended position,
    /// used by the incremental decoder.
    pub(crate) fn logits_from_hidden(&self, z: &[T]) -> Vec<T> {
        matmul_nt(z, self.params.get(EMB_TOKEN), 1, self.config.hidden, self.config.vocab_size)
    }

    pub(crate) fn vec_mat(&self, x: &[T], idx: usize, k: usize, m: usize, bias: usize) -> Vec<T> {
        let mut out = self.params.get(bias).to_vec();
        matmul_acc(x, self.params.get(idx), 1, k, m, &mut out);
        out
    }
}

/// `(predictor row, target token)` for every loss-bearing position.
fn predictor_rows(seq: &TaggedSequence) -> Result<Vec<(usize, u32)>> {
    let mut rows = Vec::new();
    for (t, &m) in seq.target_mask().iter().enumerate() {
        if m {
            if t == 0 {
                return Err(Error::Contract("target at position 0 has no predecessor".into()));
            }
            rows.push((t - 1, seq.token_ids()[t]));
        }
    }
    if rows.is_empty() {
        return Err(Error::Contract("sequence has no target positions".into()));
    }
    Ok(rows)
}

/// Mean over target positions t of `−log softmax(logits[t−1])[token_t]`.
pub fn nll_loss<T: Scalar>(logits: &[T], vocab_size: usize, seq: &TaggedSequence) -> Result<T> {
    if logits.len() != seq.len() * vocab_size {
        return Err(Error::structural("logits do not match sequence length"));
    }
    let rows = predictor_rows(seq)?;
    let mut total = T::zero();
    for &(r, target) in &rows {
        let row = &logits[r * vocab_size..(r + 1) * vocab_size];
        total += log_sum_exp(row) - row[target as usize];
    }
    Ok(total / T::of(rows.len() as f64))
}

/// Layer norm of one row; shared with the incremental decoder.
pub(crate) fn layer_norm_row<T: Scalar>(x: &[T], gain: &[T], bias: &[T]) -> Vec<T> {
    layer_norm(x, gain, bias, x.len()).0
}
