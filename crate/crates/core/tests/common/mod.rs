//! Shared helpers: random tiny models and batches, and a loop-based
//! reference forward pass computed one example at a time in f64.

#![allow(dead_code)]

use asem::autograd::Tensor;
use asem::corpus::{Batch, EncodedExample};
use asem::model::{ModelConfig, ParameterStore};
use asem::training::init_params;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config(vocab: usize, d: usize, heads: usize, k: usize, m: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        embed_dim: d,
        d_model: d,
        n_layers: 1,
        n_heads: heads,
        ffn_dim: 2 * d,
        n_sentiments: k,
        n_emotions: m,
        dropout: 0.0,
        max_len: 32,
        ..ModelConfig::default()
    }
}

/// Xavier init followed by a random perturbation of every tensor so that
/// biases, gains and the PAD row are generic too.
pub fn random_params(cfg: &ModelConfig, seed: u64) -> ParameterStore<f64> {
    let mut p = init_params(cfg, seed, None).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, t) in p.iter_mut() {
        for x in t.data_mut() {
            *x += rng.gen_range(-0.3..0.3);
        }
    }
    p
}

pub fn random_example(rng: &mut impl Rng, cfg: &ModelConfig, max_hist: usize, max_cur: usize, max_resp: usize) -> EncodedExample {
    let tok = |rng: &mut dyn rand::RngCore| rng.gen_range(4..cfg.vocab_size);
    let history = (0..rng.gen_range(0..=max_hist)).map(|_| tok(rng)).collect();
    let current = (0..rng.gen_range(1..=max_cur)).map(|_| tok(rng)).collect();
    let response = (0..rng.gen_range(0..=max_resp)).map(|_| tok(rng)).collect();
    EncodedExample {
        history,
        current,
        response,
        sentiment: rng.gen_range(0..cfg.n_sentiments),
        emotion: rng.gen_range(0..cfg.n_emotions),
    }
}

pub fn random_batch(rng: &mut impl Rng, cfg: &ModelConfig, size: usize, max_hist: usize, max_cur: usize, max_resp: usize) -> Batch {
    let ex: Vec<EncodedExample> = (0..size)
        .map(|_| random_example(rng, cfg, max_hist, max_cur, max_resp))
        .collect();
    let refs: Vec<&EncodedExample> = ex.iter().collect();
    Batch::from_examples(&refs, cfg.max_len)
}

type Rows = Vec<Vec<f64>>;

fn mat(p: &ParameterStore<f64>, name: &str) -> Rows {
    let t = p.expect(name);
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

fn vecp(p: &ParameterStore<f64>, name: &str) -> Vec<f64> {
    p.expect(name).data().to_vec()
}

fn linear(p: &ParameterStore<f64>, x: &Rows, w: &str, b: &str) -> Rows {
    let (w, b) = (mat(p, w), vecp(p, b));
    x.iter()
        .map(|row| {
            (0..b.len())
                .map(|j| b[j] + row.iter().enumerate().map(|(i, v)| v * w[i][j]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn layer_norm(p: &ParameterStore<f64>, x: &Rows, prefix: &str) -> Rows {
    let g = vecp(p, &format!("{prefix}.gamma"));
    let b = vecp(p, &format!("{prefix}.beta"));
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + 1e-5).sqrt();
            row.iter().enumerate().map(|(i, v)| (v - mean) * inv * g[i] + b[i]).collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn add(a: &Rows, b: &Rows) -> Rows {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect()).collect()
}

fn mean_rows(x: &Rows) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x[0].len()).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect()
}

/// Multi-head attention; keys beyond the query index are skipped when
/// `causal`.
fn attention(p: &ParameterStore<f64>, prefix: &str, q_in: &Rows, kv_in: &Rows, causal: bool, heads: usize) -> Rows {
    let q = linear(p, q_in, &format!("{prefix}.wq"), &format!("{prefix}.bq"));
    let k = linear(p, kv_in, &format!("{prefix}.wk"), &format!("{prefix}.bk"));
    let v = linear(p, kv_in, &format!("{prefix}.wv"), &format!("{prefix}.bv"));
    let d = q[0].len();
    let dh = d / heads;
    let mut out = vec![vec![0.0; d]; q.len()];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..q.len() {
            let visible = if causal { i + 1 } else { k.len() };
            let scores: Vec<f64> = (0..visible)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let w = softmax(&scores);
            for c in cols.clone() {
                out[i][c] = (0..visible).map(|j| w[j] * v[j][c]).sum();
            }
        }
    }
    linear(p, &out, &format!("{prefix}.wo"), &format!("{prefix}.bo"))
}

fn ffn(p: &ParameterStore<f64>, x: &Rows, prefix: &str) -> Rows {
    let h = linear(p, x, &format!("{prefix}.w1"), &format!("{prefix}.b1"));
    let h: Rows = h.into_iter().map(|r| r.into_iter().map(gelu).collect()).collect();
    linear(p, &h, &format!("{prefix}.w2"), &format!("{prefix}.b2"))
}

fn positions(len: usize, d: usize) -> Rows {
    (0..len)
        .map(|pos| {
            (0..d)
                .map(|i| {
                    let freq = 1.0 / 10000f64.powf((i - i % 2) as f64 / d as f64);
                    let a = pos as f64 * freq;
                    if i % 2 == 0 { a.sin() } else { a.cos() }
                })
                .collect()
        })
        .collect()
}

fn embed(p: &ParameterStore<f64>, cfg: &ModelConfig, ids: &[usize], weights: &[f64]) -> Rows {
    let table = mat(p, "embedding");
    let mut rows: Rows = ids
        .iter()
        .zip(weights)
        .map(|(&id, &w)| table[id].iter().map(|x| x * w).collect())
        .collect();
    if cfg.embed_dim != cfg.d_model {
        let proj = mat(p, "embed_proj");
        rows = rows
            .iter()
            .map(|r| (0..cfg.d_model).map(|j| r.iter().enumerate().map(|(i, v)| v * proj[i][j]).sum()).collect())
            .collect();
    }
    add(&rows, &positions(ids.len(), cfg.d_model))
}

fn decoder_block(p: &ParameterStore<f64>, cfg: &ModelConfig, prefix: &str, x: &Rows, memory: &Rows) -> Rows {
    let h = layer_norm(p, x, &format!("{prefix}.ln1"));
    let x = add(x, &attention(p, &format!("{prefix}.self_attn"), &h, &h, true, cfg.n_heads));
    let h = layer_norm(p, &x, &format!("{prefix}.ln2"));
    let x = add(&x, &attention(p, &format!("{prefix}.cross_attn"), &h, memory, false, cfg.n_heads));
    let h = layer_norm(p, &x, &format!("{prefix}.ln3"));
    let x = add(&x, &ffn(p, &h, &format!("{prefix}.ffn")));
    layer_norm(p, &x, &format!("{prefix}.ln_f"))
}

/// Activations of one example over its real (non-PAD) positions, in
/// encoder order.
pub struct Reference {
    pub g_h: Rows,
    pub s_att_pos: Rows,
    pub s_att_pooled: Vec<f64>,
    pub expert_out: Rows,
    pub w_att: Rows,
    pub s_h: Rows,
    pub e_att: Vec<f64>,
    /// Logits for each real decoder input position.
    pub logits: Rows,
    pub sentiment_nll: f64,
    pub emotion_nll: f64,
    pub token_nll: Vec<f64>,
}

pub fn reference_forward(p: &ParameterStore<f64>, cfg: &ModelConfig, batch: &Batch, b: usize) -> Reference {
    let l = batch.context_len;
    let used = batch.context_mask[b * l..(b + 1) * l].iter().filter(|&&m| m).count();
    let row = &batch.context_row(b)[..used];
    let cur = batch.current_turn[b].clone();
    let w = if cfg.use_weighted_concat { cfg.turn_weight } else { 1.0 };
    let (mut ids, mut weights) = (Vec::new(), Vec::new());
    let order: Vec<usize> = if cfg.current_turn_first {
        cur.clone().chain((0..used).filter(|j| !cur.contains(j))).collect()
    } else {
        (0..used).collect()
    };
    for j in order {
        ids.push(row[j]);
        weights.push(if cur.contains(&j) { w } else { 1.0 });
    }
    let x0 = embed(p, cfg, &ids, &weights);

    let mut x = x0.clone();
    for i in 0..cfg.n_layers {
        let pre = format!("encoder.{i}");
        let h = layer_norm(p, &x, &format!("{pre}.ln1"));
        x = add(&x, &attention(p, &format!("{pre}.self_attn"), &h, &h, false, cfg.n_heads));
        let h = layer_norm(p, &x, &format!("{pre}.ln2"));
        x = add(&x, &ffn(p, &h, &format!("{pre}.ffn")));
    }
    let g_h = layer_norm(p, &x, "encoder.ln_f");

    let sent_logits = linear(p, &g_h, "sentiment.w", "sentiment.b");
    let s_att_pos: Rows = sent_logits.iter().map(|r| softmax(r)).collect();
    let s_att_pooled = softmax(&mean_rows(&sent_logits));

    let experts_on = cfg.use_sae && !cfg.single_enc_dec;
    let d = cfg.d_model;
    let mut expert_out = Vec::new();
    let mut w_att = vec![vec![0.0; d]; used];
    let mut s_h = g_h.clone();
    if experts_on {
        for k in 0..cfg.n_sentiments {
            let pre = format!("expert.{k}");
            let q = layer_norm(p, &g_h, &format!("{pre}.ln_q"));
            let kv = layer_norm(p, &x0, &format!("{pre}.ln_kv"));
            let x = add(&g_h, &attention(p, &format!("{pre}.cross_attn"), &q, &kv, false, cfg.n_heads));
            let h = layer_norm(p, &x, &format!("{pre}.ln2"));
            let x = add(&x, &ffn(p, &h, &format!("{pre}.ffn")));
            let x = layer_norm(p, &x, &format!("{pre}.ln_f"));
            expert_out.push(mean_rows(&x));
        }
        for (pos, wrow) in w_att.iter_mut().enumerate() {
            for (k, e) in expert_out.iter().enumerate() {
                for c in 0..d {
                    wrow[c] += s_att_pos[pos][k] * e[c];
                }
            }
        }
        s_h = add(&w_att, &g_h);
    }
    let emo_logits = linear(p, &vec![mean_rows(&s_h)], "emotion.w", "emotion.b").remove(0);
    let e_att = softmax(&emo_logits);

    let full = batch.response_len;
    let rlen = batch.response_mask[b * full..(b + 1) * full].iter().filter(|&&m| m).count();
    let resp = &batch.response_row(b)[..rlen];
    let input = &resp[..rlen - 1];
    let r = embed(p, cfg, input, &vec![1.0; input.len()]);
    let mixed = if cfg.single_enc_dec {
        r
    } else {
        let outs: Vec<Rows> = (0..cfg.n_emotions)
            .map(|m| decoder_block(p, cfg, &format!("listener.{m}"), &r, &s_h))
            .collect();
        (0..input.len())
            .map(|t| (0..d).map(|c| (0..cfg.n_emotions).map(|m| e_att[m] * outs[m][t][c]).sum()).collect())
            .collect()
    };
    let y = decoder_block(p, cfg, "meta", &mixed, &s_h);
    let logits = linear(p, &y, "output.w", "output.b");
    let token_nll = logits
        .iter()
        .zip(&resp[1..])
        .map(|(lg, &t)| -softmax(lg)[t].ln())
        .collect();

    Reference {
        sentiment_nll: -s_att_pooled[batch.sentiment_targets[b]].ln(),
        emotion_nll: -e_att[batch.emotion_targets[b]].ln(),
        g_h,
        s_att_pos,
        s_att_pooled,
        expert_out,
        w_att,
        s_h,
        e_att,
        logits,
        token_nll,
    }
}

/// Rows `[b, 0..n)` of a `[B, L, C]` tensor.
pub fn rows_of(t: &Tensor<f64>, b: usize, n: usize) -> Rows {
    let (l, c) = (t.shape()[1], t.shape()[2]);
    (0..n).map(|i| t.data()[(b * l + i) * c..(b * l + i + 1) * c].to_vec()).collect()
}

pub fn max_diff(a: &Rows, b: &Rows) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

pub struct Toy {
    pub vocab: asem::corpus::Vocabulary,
    pub labels: asem::corpus::LabelSpace,
    pub examples: Vec<EncodedExample>,
}

/// Synthetic dialogues over four emotions and two sentiments.
pub fn toy_corpus(n: usize, n_topics: usize, n_filler: usize, seed: u64) -> Toy {
    use asem::corpus::{build_vocab, encode_corpus, synthetic_corpus, Emotion, LabelSpace, Sentiment};
    let labels = LabelSpace {
        emotions: vec![Emotion::Joy, Emotion::Surprise, Emotion::Anger, Emotion::Sadness],
        sentiments: vec![Sentiment::Positive, Sentiment::Negative],
    };
    let dialogues = synthetic_corpus(n, &labels, n_topics, n_filler, seed);
    let vocab = build_vocab(&dialogues, 1).unwrap();
    let examples = encode_corpus(&dialogues, &vocab, &labels).unwrap();
    Toy { vocab, labels, examples }
}

/// Small desk model sized for `toy`.
pub fn toy_model(toy: &Toy, d: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: toy.vocab.len(),
        embed_dim: d,
        d_model: d,
        n_layers: 1,
        n_heads: 2,
        ffn_dim: 2 * d,
        n_sentiments: 2,
        n_emotions: 4,
        dropout: 0.0,
        max_len: 40,
        ..ModelConfig::default()
    }
}
