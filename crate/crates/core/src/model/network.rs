//! Forward pass of the network on a [`Tape`].
//!
//! Data flow for one batch:
//!
//! ```text
//! context ids ─ embed (current turn × W) + PE ─ general encoder ─ G_h
//! G_h ─ sentiment projection ─ S_att_pos (per position), S_att_pooled
//! G_h (query) × embedded context (key/value) ─ K experts ─ mean pool ─ [B, K, d]
//! W_att = S_att_pos · experts;  S_h = W_att + G_h
//! S_h ─ mean pool ─ emotion projection ─ E_att
//! response ─ M listeners (causal self-attn, cross-attn on S_h) ─ Σ E_att·D_i
//!          ─ meta decoder ─ vocabulary logits
//! ```

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ParameterStore};
use crate::autograd::{Graph, Scalar, Tensor, Var};
use crate::corpus::Batch;
use crate::error::{Error, Result};

const MASK_VALUE: f64 = -1e9;
const LN_EPS: f64 = 1e-5;

/// A graph plus lazily bound parameters.
pub struct Tape<'s, T: Scalar> {
    pub graph: Graph<T>,
    store: &'s ParameterStore<T>,
    bound: HashMap<String, Var>,
    trainable: bool,
    dropout: Option<(T, ChaCha8Rng)>,
}

impl<'s, T: Scalar> Tape<'s, T> {
    pub fn new(store: &'s ParameterStore<T>, trainable: bool) -> Self {
        Tape {
            graph: Graph::new(),
            store,
            bound: HashMap::new(),
            trainable,
            dropout: None,
        }
    }

    /// Enables inverted dropout with probability `p`.
    pub fn with_dropout(mut self, p: f64, rng: ChaCha8Rng) -> Self {
        if p > 0.0 {
            self.dropout = Some((T::from_f64_lossy(p), rng));
        }
        self
    }

    pub fn param(&mut self, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let value = self.store.expect(name).clone();
        let v = if self.trainable {
            self.graph.param(value)
        } else {
            self.graph.constant(value)
        };
        self.bound.insert(name.to_string(), v);
        v
    }

    /// Parameters touched by the forward pass, with their graph handles.
    pub fn bound(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bound.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Embedding lookup. Inference tapes copy only the needed rows.
    fn embed(&mut self, ids: Vec<usize>) -> Var {
        if self.trainable {
            let table = self.param("embedding");
            self.graph.gather(table, ids)
        } else {
            let table = self.store.expect("embedding");
            let d = table.last_dim();
            let mut data = Vec::with_capacity(ids.len() * d);
            for &id in &ids {
                data.extend_from_slice(table.row(id));
            }
            self.graph.constant(Tensor::new(vec![ids.len(), d], data))
        }
    }

    fn dropout(&mut self, x: Var) -> Var {
        let Some((p, rng)) = self.dropout.as_mut() else {
            return x;
        };
        let p = *p;
        let keep = T::one() / (T::one() - p);
        let n = self.graph.value(x).len();
        let mask = (0..n)
            .map(|_| {
                if T::from_f64_lossy(rng.gen::<f64>()) < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        self.graph.mul_const(x, mask)
    }

    fn linear(&mut self, x: Var, prefix: &str, w: &str, b: &str) -> Var {
        let wv = self.param(&format!("{prefix}.{w}"));
        let bv = self.param(&format!("{prefix}.{b}"));
        let y = self.graph.matmul(x, wv);
        self.graph.add_bias(y, bv)
    }

    fn norm(&mut self, x: Var, prefix: &str) -> Var {
        let g = self.param(&format!("{prefix}.gamma"));
        let b = self.param(&format!("{prefix}.beta"));
        self.graph.layer_norm(x, g, b, LN_EPS)
    }

    fn ffn(&mut self, x: Var, prefix: &str) -> Var {
        let h = self.linear(x, prefix, "w1", "b1");
        let h = self.graph.gelu(h);
        self.linear(h, prefix, "w2", "b2")
    }

    /// Multi-head attention of `q_in[B, Lq, d]` over `kv_in[B, Lk, d]`.
    /// Keys where `key_mask` is false, and future keys when `causal`, get
    /// zero weight.
    fn attention(
        &mut self,
        prefix: &str,
        q_in: Var,
        kv_in: Var,
        key_mask: &[bool],
        causal: bool,
        heads: usize,
    ) -> Var {
        let (b, lq, d) = dims3(&self.graph, q_in);
        let lk = self.graph.shape(kv_in)[1];
        let dh = d / heads;
        let q = self.linear(q_in, prefix, "wq", "bq");
        let k = self.linear(kv_in, prefix, "wk", "bk");
        let v = self.linear(kv_in, prefix, "wv", "bv");
        let qh = self.graph.split_heads(q, heads);
        let kh = self.graph.split_heads(k, heads);
        let vh = self.graph.split_heads(v, heads);
        let scores = self.graph.bmm(qh, kh, true);
        let scores = self
            .graph
            .scale(scores, T::one() / T::from_usize(dh).unwrap().sqrt());
        let mut bias = vec![T::zero(); b * heads * lq * lk];
        let masked = T::from_f64_lossy(MASK_VALUE);
        for bi in 0..b {
            for h in 0..heads {
                for i in 0..lq {
                    for j in 0..lk {
                        if !key_mask[bi * lk + j] || (causal && j > i) {
                            bias[((bi * heads + h) * lq + i) * lk + j] = masked;
                        }
                    }
                }
            }
        }
        let scores = self
            .graph
            .add_const(scores, &Tensor::new(vec![b * heads, lq, lk], bias));
        let probs = self.graph.softmax(scores);
        let ctx = self.graph.bmm(probs, vh, false);
        let merged = self.graph.merge_heads(ctx, heads);
        self.linear(merged, prefix, "wo", "bo")
    }
}

fn dims3<T: Scalar>(g: &Graph<T>, v: Var) -> (usize, usize, usize) {
    let s = g.shape(v);
    (s[0], s[1], s[2])
}

/// Sinusoidal position codes `[len, d]`.
pub fn positional_encoding<T: Scalar>(len: usize, d: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); len * d];
    for pos in 0..len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            data[pos * d + i] = T::from_f64_lossy(v);
        }
    }
    Tensor::new(vec![len, d], data)
}

fn tile_positions<T: Scalar>(batch: usize, len: usize, d: usize) -> Tensor<T> {
    let pe = positional_encoding::<T>(len, d);
    let mut data = Vec::with_capacity(batch * len * d);
    for _ in 0..batch {
        data.extend_from_slice(pe.data());
    }
    Tensor::new(vec![batch, len, d], data)
}

/// Context ids in encoder order plus per-position turn weights.
pub fn arrange_context(cfg: &ModelConfig, batch: &Batch) -> (Vec<usize>, Vec<f64>) {
    let (b, l) = (batch.size, batch.context_len);
    let w = cfg.effective_turn_weight();
    let mut ids = Vec::with_capacity(b * l);
    let mut weights = Vec::with_capacity(b * l);
    for bi in 0..b {
        let row = batch.context_row(bi);
        let range = batch.current_turn[bi].clone();
        let used = batch.context_mask[bi * l..(bi + 1) * l].iter().filter(|&&m| m).count();
        let mut order: Vec<usize> = Vec::with_capacity(l);
        if cfg.current_turn_first {
            order.extend(range.clone());
            order.extend((0..used).filter(|j| !range.contains(j)));
        } else {
            order.extend(0..used);
        }
        order.extend(used..l);
        for j in order {
            ids.push(row[j]);
            weights.push(if range.contains(&j) { w } else { 1.0 });
        }
    }
    (ids, weights)
}

/// Which loss terms enter the total.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossTerms {
    pub sentiment: bool,
    pub emotion: bool,
    pub response: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        LossTerms {
            sentiment: true,
            emotion: true,
            response: true,
        }
    }
}

/// Graph handles of one forward pass.
pub struct ForwardVars {
    pub context_mask: Vec<bool>,
    pub g_h: Var,
    pub s_att_pos: Var,
    pub s_att_pooled: Var,
    pub expert_out: Option<Var>,
    pub w_att: Option<Var>,
    pub s_h: Var,
    pub e_att: Var,
    pub token_logits: Option<Var>,
    pub l1: Option<Var>,
    pub l2: Option<Var>,
    pub l3: Option<Var>,
    pub total: Option<Var>,
}

pub struct Encoded {
    pub context_mask: Vec<bool>,
    pub embedded: Var,
    pub g_h: Var,
    pub s_att_pos: Var,
    pub s_att_pooled: Var,
    pub sentiment_logp: Var,
    pub expert_out: Option<Var>,
    pub w_att: Option<Var>,
    pub s_h: Var,
    pub e_att: Var,
    pub emotion_logp: Var,
}

/// Weighted context embeddings `[B, L, d]` including position codes.
pub fn embed_context<T: Scalar>(tape: &mut Tape<'_, T>, cfg: &ModelConfig, batch: &Batch) -> Var {
    let (b, l) = (batch.size, batch.context_len);
    let (ids, weights) = arrange_context(cfg, batch);
    let e = tape.embed(ids);
    let e = if weights.iter().any(|&w| w != 1.0) {
        let ed = cfg.embed_dim;
        let scale = weights
            .iter()
            .flat_map(|&w| std::iter::repeat_n(T::from_f64_lossy(w), ed))
            .collect();
        tape.graph.mul_const(e, scale)
    } else {
        e
    };
    let e = tape.graph.reshape(e, &[b, l, cfg.embed_dim]);
    let e = if cfg.embed_dim != cfg.d_model {
        let p = tape.param("embed_proj");
        tape.graph.matmul(e, p)
    } else {
        e
    };
    let e = tape.graph.add_const(e, &tile_positions(b, l, cfg.d_model));
    tape.dropout(e)
}

pub fn general_encode<T: Scalar>(tape: &mut Tape<'_, T>, cfg: &ModelConfig, x: Var, mask: &[bool]) -> Var {
    let mut x = x;
    for i in 0..cfg.n_layers {
        let p = format!("encoder.{i}");
        let h = tape.norm(x, &format!("{p}.ln1"));
        let a = tape.attention(&format!("{p}.self_attn"), h, h, mask, false, cfg.n_heads);
        let a = tape.dropout(a);
        x = tape.graph.add(x, a);
        let h = tape.norm(x, &format!("{p}.ln2"));
        let f = tape.ffn(h, &format!("{p}.ffn"));
        let f = tape.dropout(f);
        x = tape.graph.add(x, f);
    }
    tape.norm(x, "encoder.ln_f")
}

/// Returns `(S_att_pos, S_att_pooled, log S_att_pooled)`.
pub fn sentiment_head<T: Scalar>(tape: &mut Tape<'_, T>, g_h: Var, mask: &[bool]) -> (Var, Var, Var) {
    let logits = tape.linear(g_h, "sentiment", "w", "b");
    let k = tape.graph.shape(logits)[2];
    // PAD positions get all-zero logits, hence a uniform row.
    let keep = mask
        .iter()
        .flat_map(|&m| std::iter::repeat_n(if m { T::one() } else { T::zero() }, k))
        .collect();
    let masked = tape.graph.mul_const(logits, keep);
    let pos = tape.graph.softmax(masked);
    let pooled_logits = tape.graph.mask_mean_pool(logits, mask);
    let pooled = tape.graph.softmax(pooled_logits);
    let logp = tape.graph.log_softmax(pooled_logits);
    (pos, pooled, logp)
}

/// Mean-pooled outputs of the sentiment experts, `[B, K, d]`.
pub fn expert_encode<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    g_h: Var,
    context: Var,
    mask: &[bool],
) -> Var {
    let mut pooled = Vec::with_capacity(cfg.n_sentiments);
    for k in 0..cfg.n_sentiments {
        let p = format!("expert.{k}");
        let q = tape.norm(g_h, &format!("{p}.ln_q"));
        let kv = tape.norm(context, &format!("{p}.ln_kv"));
        let a = tape.attention(&format!("{p}.cross_attn"), q, kv, mask, false, cfg.n_heads);
        let a = tape.dropout(a);
        let x = tape.graph.add(g_h, a);
        let h = tape.norm(x, &format!("{p}.ln2"));
        let f = tape.ffn(h, &format!("{p}.ffn"));
        let f = tape.dropout(f);
        let x = tape.graph.add(x, f);
        let x = tape.norm(x, &format!("{p}.ln_f"));
        pooled.push(tape.graph.mask_mean_pool(x, mask));
    }
    tape.graph.stack(&pooled)
}

/// `W_att[b, l, :] = Σ_k S_att_pos[b, l, k] · expert_out[b, k, :]`.
pub fn attention_combine<T: Scalar>(tape: &mut Tape<'_, T>, s_att_pos: Var, expert_out: Var) -> Var {
    tape.graph.bmm(s_att_pos, expert_out, false)
}

/// Returns `(E_att, log E_att)`.
pub fn emotion_head<T: Scalar>(tape: &mut Tape<'_, T>, s_h: Var, mask: &[bool]) -> (Var, Var) {
    let pooled = tape.graph.mask_mean_pool(s_h, mask);
    let logits = tape.linear(pooled, "emotion", "w", "b");
    let probs = tape.graph.softmax(logits);
    let logp = tape.graph.log_softmax(logits);
    (probs, logp)
}

/// Stage one: everything up to the emotion distribution.
pub fn encode<T: Scalar>(tape: &mut Tape<'_, T>, cfg: &ModelConfig, batch: &Batch) -> Encoded {
    let mask = batch.context_mask.clone();
    let embedded = embed_context(tape, cfg, batch);
    let g_h = general_encode(tape, cfg, embedded, &mask);
    let (s_att_pos, s_att_pooled, sentiment_logp) = sentiment_head(tape, g_h, &mask);
    let (expert_out, w_att, s_h) = if cfg.use_sae && !cfg.single_enc_dec {
        let experts = expert_encode(tape, cfg, g_h, embedded, &mask);
        let w_att = attention_combine(tape, s_att_pos, experts);
        let s_h = tape.graph.add(w_att, g_h);
        (Some(experts), Some(w_att), s_h)
    } else {
        (None, None, g_h)
    };
    let (e_att, emotion_logp) = emotion_head(tape, s_h, &mask);
    Encoded {
        context_mask: mask,
        embedded,
        g_h,
        s_att_pos,
        s_att_pooled,
        sentiment_logp,
        expert_out,
        w_att,
        s_h,
        e_att,
        emotion_logp,
    }
}

/// Embedded decoder input `[B, Lr, d]` (no turn weighting).
pub fn embed_response<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    ids: Vec<usize>,
    batch: usize,
    len: usize,
) -> Var {
    let e = tape.embed(ids);
    let e = tape.graph.reshape(e, &[batch, len, cfg.embed_dim]);
    let e = if cfg.embed_dim != cfg.d_model {
        let p = tape.param("embed_proj");
        tape.graph.matmul(e, p)
    } else {
        e
    };
    let e = tape.graph.add_const(e, &tile_positions(batch, len, cfg.d_model));
    tape.dropout(e)
}

/// Pre-norm decoder block: causal self-attention, cross-attention on
/// `memory`, feed-forward, final norm.
#[allow(clippy::too_many_arguments)]
pub fn decoder_block<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    prefix: &str,
    x: Var,
    memory: Var,
    memory_mask: &[bool],
    self_mask: &[bool],
) -> Var {
    let h = tape.norm(x, &format!("{prefix}.ln1"));
    let a = tape.attention(&format!("{prefix}.self_attn"), h, h, self_mask, true, cfg.n_heads);
    let a = tape.dropout(a);
    let x = tape.graph.add(x, a);
    let h = tape.norm(x, &format!("{prefix}.ln2"));
    let c = tape.attention(&format!("{prefix}.cross_attn"), h, memory, memory_mask, false, cfg.n_heads);
    let c = tape.dropout(c);
    let x = tape.graph.add(x, c);
    let h = tape.norm(x, &format!("{prefix}.ln3"));
    let f = tape.ffn(h, &format!("{prefix}.ffn"));
    let f = tape.dropout(f);
    let x = tape.graph.add(x, f);
    tape.norm(x, &format!("{prefix}.ln_f"))
}

/// Listener outputs stacked as `[B, M, Lr, d]`.
pub fn listener_decode<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    response: Var,
    s_h: Var,
    context_mask: &[bool],
    response_mask: &[bool],
) -> Var {
    let outs: Vec<Var> = (0..cfg.n_emotions)
        .map(|m| {
            decoder_block(
                tape,
                cfg,
                &format!("listener.{m}"),
                response,
                s_h,
                context_mask,
                response_mask,
            )
        })
        .collect();
    tape.graph.stack(&outs)
}

/// `Σ_i E_att[:, i] · D_i`, shape `[B, Lr, d]`.
pub fn mix_listeners<T: Scalar>(tape: &mut Tape<'_, T>, stack: Var, e_att: Var) -> Var {
    let s = tape.graph.shape(stack).to_vec();
    let (b, m, lr, d) = (s[0], s[1], s[2], s[3]);
    let flat = tape.graph.reshape(stack, &[b, m, lr * d]);
    let w = tape.graph.reshape(e_att, &[b, 1, m]);
    let mixed = tape.graph.bmm(w, flat, false);
    tape.graph.reshape(mixed, &[b, lr, d])
}

/// Meta decoder and output projection; vocabulary logits `[B, Lr, V]`.
pub fn meta_decode<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    input: Var,
    s_h: Var,
    context_mask: &[bool],
    response_mask: &[bool],
) -> Var {
    let x = decoder_block(tape, cfg, "meta", input, s_h, context_mask, response_mask);
    tape.linear(x, "output", "w", "b")
}

/// Decoder stack from embedded response to logits.
pub fn decode<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    response: Var,
    s_h: Var,
    e_att: Var,
    context_mask: &[bool],
    response_mask: &[bool],
) -> Var {
    let input = if cfg.single_enc_dec {
        response
    } else {
        let stack = listener_decode(tape, cfg, response, s_h, context_mask, response_mask);
        mix_listeners(tape, stack, e_att)
    };
    meta_decode(tape, cfg, input, s_h, context_mask, response_mask)
}

pub fn check_targets(cfg: &ModelConfig, batch: &Batch) -> Result<()> {
    for &t in &batch.sentiment_targets {
        if t >= cfg.n_sentiments {
            return Err(Error::TargetOutOfRange {
                what: "sentiment",
                index: t,
                classes: cfg.n_sentiments,
            });
        }
    }
    for &t in &batch.emotion_targets {
        if t >= cfg.n_emotions {
            return Err(Error::TargetOutOfRange {
                what: "emotion",
                index: t,
                classes: cfg.n_emotions,
            });
        }
    }
    for &t in &batch.response_ids {
        if t >= cfg.vocab_size {
            return Err(Error::TargetOutOfRange {
                what: "token",
                index: t,
                classes: cfg.vocab_size,
            });
        }
    }
    Ok(())
}

/// Teacher-forced forward pass with losses. With `with_decoder == false`
/// only stage one runs and L3 is absent.
pub fn build<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    batch: &Batch,
    terms: LossTerms,
    with_decoder: bool,
) -> Result<ForwardVars> {
    check_targets(cfg, batch)?;
    let enc = encode(tape, cfg, batch);
    let (b, lr) = (batch.size, batch.response_len.saturating_sub(1));
    let sentiment = terms.sentiment && cfg.use_sentiment_loss;

    let l1 = sentiment.then(|| {
        let t = batch.sentiment_targets.iter().map(|&t| Some(t)).collect();
        tape.graph.pick_nll(enc.sentiment_logp, t)
    });
    let l2 = terms.emotion.then(|| {
        let t = batch.emotion_targets.iter().map(|&t| Some(t)).collect();
        tape.graph.pick_nll(enc.emotion_logp, t)
    });

    let mut token_logits = None;
    let mut l3 = None;
    if with_decoder && lr > 0 {
        let full = batch.response_len;
        let mut ids = Vec::with_capacity(b * lr);
        let mut in_mask = Vec::with_capacity(b * lr);
        let mut targets = Vec::with_capacity(b * lr);
        for bi in 0..b {
            let row = batch.response_row(bi);
            let mrow = &batch.response_mask[bi * full..(bi + 1) * full];
            ids.extend_from_slice(&row[..lr]);
            in_mask.extend_from_slice(&mrow[..lr]);
            for j in 0..lr {
                targets.push(mrow[j + 1].then_some(row[j + 1]));
            }
        }
        let response = embed_response(tape, cfg, ids, b, lr);
        let logits = decode(tape, cfg, response, enc.s_h, enc.e_att, &enc.context_mask, &in_mask);
        token_logits = Some(logits);
        if terms.response {
            let flat = tape.graph.reshape(logits, &[b * lr, cfg.vocab_size]);
            let logp = tape.graph.log_softmax(flat);
            l3 = Some(tape.graph.pick_nll(logp, targets));
        }
    }

    let mut total: Option<Var> = None;
    for term in [l1, l2, l3].into_iter().flatten() {
        total = Some(match total {
            None => term,
            Some(acc) => tape.graph.add(acc, term),
        });
    }

    Ok(ForwardVars {
        context_mask: enc.context_mask,
        g_h: enc.g_h,
        s_att_pos: enc.s_att_pos,
        s_att_pooled: enc.s_att_pooled,
        expert_out: enc.expert_out,
        w_att: enc.w_att,
        s_h: enc.s_h,
        e_att: enc.e_att,
        token_logits,
        l1,
        l2,
        l3,
        total,
    })
}
