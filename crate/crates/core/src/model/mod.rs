//! The sentiment-expert / emotion-listener network and its losses.

mod config;
pub mod network;
mod params;

pub use config::ModelConfig;
pub use network::{positional_encoding, LossTerms, Tape};
pub use params::{param_layout, ParamKind, ParamSpec, ParameterStore};

use serde::{Deserialize, Serialize};

use crate::autograd::{Scalar, Tensor};
use crate::corpus::Batch;
use crate::error::Result;

/// Intermediate activations of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T> {
    /// Context mask in encoder order.
    pub context_mask: Vec<bool>,
    /// General encoder output `[B, L, d]`.
    pub g_h: Tensor<T>,
    /// Per-position expert weights `[B, L, K]`.
    pub s_att_pos: Tensor<T>,
    /// Pooled sentiment distribution `[B, K]`.
    pub s_att_pooled: Tensor<T>,
    /// Pooled expert outputs `[B, K, d]`; zero when experts are disabled.
    pub expert_out: Tensor<T>,
    /// Expert mixture `[B, L, d]`; zero when experts are disabled.
    pub w_att: Tensor<T>,
    /// Fused representation `[B, L, d]`.
    pub s_h: Tensor<T>,
    /// Emotion distribution `[B, M]`.
    pub e_att: Tensor<T>,
    /// `[B, Lr, V]` with `Lr` the response length minus one.
    pub token_logits: Tensor<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn is_finite(&self) -> bool {
        [
            &self.g_h,
            &self.s_att_pos,
            &self.s_att_pooled,
            &self.expert_out,
            &self.w_att,
            &self.s_h,
            &self.e_att,
            &self.token_logits,
        ]
        .iter()
        .all(|t| t.is_finite())
    }
}

/// Loss terms; disabled terms are zero and `total = (l1 + l2) + l3`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn new(l1: f64, l2: f64, l3: f64) -> Self {
        LossBundle {
            l1,
            l2,
            l3,
            total: (l1 + l2) + l3,
        }
    }
}

pub struct ForwardOutput<T> {
    pub trace: ForwardTrace<T>,
    pub losses: LossBundle,
    /// Gradient of the total loss per parameter, when requested. Parameters
    /// the pass never touched are absent.
    pub grads: Option<ParameterStore<T>>,
}

#[derive(Clone, Debug, Default)]
pub struct ForwardOptions {
    pub terms: LossTerms,
    /// Dropout stream; `None` runs deterministically without dropout.
    pub dropout_seed: Option<u64>,
    pub with_grads: bool,
}

/// Teacher-forced forward pass over `batch`.
pub fn forward<T: Scalar>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    batch: &Batch,
    opts: &ForwardOptions,
) -> Result<ForwardOutput<T>> {
    let mut tape = Tape::new(store, opts.with_grads);
    if let Some(seed) = opts.dropout_seed {
        tape = tape.with_dropout(cfg.dropout, crate::rng::derive(seed, "dropout"));
    }
    let vars = network::build(&mut tape, cfg, batch, opts.terms, true)?;
    let g = &tape.graph;
    let value = |v: Option<crate::autograd::Var>| v.map(|v| g.value(v).item().to_f64_lossy()).unwrap_or(0.0);
    let losses = LossBundle::new(value(vars.l1), value(vars.l2), value(vars.l3));

    let (b, l, d) = (batch.size, batch.context_len, cfg.d_model);
    let zeros_or = |v: Option<crate::autograd::Var>, shape: &[usize]| {
        v.map(|v| g.value(v).clone()).unwrap_or_else(|| Tensor::zeros(shape))
    };
    let lr = batch.response_len.saturating_sub(1);
    let trace = ForwardTrace {
        context_mask: vars.context_mask.clone(),
        g_h: g.value(vars.g_h).clone(),
        s_att_pos: g.value(vars.s_att_pos).clone(),
        s_att_pooled: g.value(vars.s_att_pooled).clone(),
        expert_out: zeros_or(vars.expert_out, &[b, cfg.n_sentiments, d]),
        w_att: zeros_or(vars.w_att, &[b, l, d]),
        s_h: g.value(vars.s_h).clone(),
        e_att: g.value(vars.e_att).clone(),
        token_logits: zeros_or(vars.token_logits, &[b, lr, cfg.vocab_size]),
    };

    let grads = match (opts.with_grads, vars.total) {
        (true, Some(total)) => {
            let mut grads = tape.graph.backward(total);
            let mut out = ParameterStore::new();
            let mut bound: Vec<(String, crate::autograd::Var)> =
                tape.bound().map(|(k, v)| (k.to_string(), v)).collect();
            // layout order keeps downstream reductions deterministic
            let order: std::collections::HashMap<&str, usize> =
                store.names().enumerate().map(|(i, n)| (n, i)).collect();
            bound.sort_by_key(|(k, _)| order[k.as_str()]);
            for (name, var) in bound {
                if let Some(gt) = grads.take(var) {
                    out.insert(name, gt);
                }
            }
            Some(out)
        }
        (true, None) => Some(ParameterStore::new()),
        (false, _) => None,
    };

    Ok(ForwardOutput { trace, losses, grads })
}

/// Encoder-side state reused across decoding steps for one context.
#[derive(Clone, Debug)]
pub struct EncodedContext<T> {
    pub context_mask: Vec<bool>,
    /// `[1, L, d]`
    pub s_h: Tensor<T>,
    /// `[1, M]`
    pub e_att: Tensor<T>,
    /// `[1, K]`
    pub s_att_pooled: Tensor<T>,
}

/// Runs stage one on a single-example batch.
pub fn encode_context<T: Scalar>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    batch: &Batch,
) -> EncodedContext<T> {
    assert_eq!(batch.size, 1, "encode_context expects one example");
    let mut tape = Tape::new(store, false);
    let enc = network::encode(&mut tape, cfg, batch);
    EncodedContext {
        context_mask: enc.context_mask,
        s_h: tape.graph.value(enc.s_h).clone(),
        e_att: tape.graph.value(enc.e_att).clone(),
        s_att_pooled: tape.graph.value(enc.s_att_pooled).clone(),
    }
}

/// Log-distribution of the next token after each prefix (each starting
/// with SOS), conditioned on one encoded context.
pub fn next_token_log_probs<T: Scalar>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    ctx: &EncodedContext<T>,
    prefixes: &[Vec<usize>],
) -> Vec<Vec<f64>> {
    let b = prefixes.len();
    if b == 0 {
        return Vec::new();
    }
    let lr = prefixes.iter().map(Vec::len).max().unwrap();
    let mut ids = vec![crate::corpus::PAD; b * lr];
    let mut mask = vec![false; b * lr];
    for (i, p) in prefixes.iter().enumerate() {
        ids[i * lr..i * lr + p.len()].copy_from_slice(p);
        mask[i * lr..i * lr + p.len()].fill(true);
    }
    let (l, d) = (ctx.s_h.shape()[1], ctx.s_h.shape()[2]);
    let m = ctx.e_att.len();
    let mut s_h = Vec::with_capacity(b * l * d);
    let mut e_att = Vec::with_capacity(b * m);
    let mut cmask = Vec::with_capacity(b * l);
    for _ in 0..b {
        s_h.extend_from_slice(ctx.s_h.data());
        e_att.extend_from_slice(ctx.e_att.data());
        cmask.extend_from_slice(&ctx.context_mask);
    }
    let mut tape = Tape::new(store, false);
    let s_h = tape.graph.constant(Tensor::new(vec![b, l, d], s_h));
    let e_att = tape.graph.constant(Tensor::new(vec![b, m], e_att));
    let response = network::embed_response(&mut tape, cfg, ids, b, lr);
    let logits = network::decode(&mut tape, cfg, response, s_h, e_att, &cmask, &mask);
    let v = cfg.vocab_size;
    let lv = tape.graph.value(logits);
    prefixes
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let pos = p.len() - 1;
            let mut row: Vec<T> = lv.data()[(i * lr + pos) * v..(i * lr + pos + 1) * v].to_vec();
            crate::autograd::log_softmax_in_place(&mut row);
            row.into_iter().map(|x| x.to_f64_lossy()).collect()
        })
        .collect()
}
