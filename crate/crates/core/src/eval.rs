//! Corpus-level loss accumulation, classification and the metric report.

use serde::{Deserialize, Serialize};

use crate::autograd::Scalar;
use crate::corpus::{make_batches, Batch, EmbeddingTable, EncodedExample, Emotion, LabelSpace, Vocabulary, EOS, SOS};
use crate::decoding::{beam_decode, BeamConfig};
use crate::error::{Error, Result};
use crate::metrics::{avg_cosine, bleu, distinct_n, macro_f1, perplexity_from_nll, MetricReport};
use crate::model::{forward, network, ForwardOptions, LossBundle, ModelConfig, ParameterStore, Tape};

/// Losses averaged over a whole example set: L1 and L2 per example, L3 per
/// target token.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusLosses {
    pub losses: LossBundle,
    pub examples: usize,
    pub tokens: usize,
    /// Summed NLL over all target tokens.
    pub response_nll: f64,
}

impl CorpusLosses {
    pub fn perplexity(&self) -> Result<f64> {
        perplexity_from_nll(self.response_nll, self.tokens)
    }
}

pub fn corpus_losses<T: Scalar>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    examples: &[EncodedExample],
    batch_size: usize,
) -> Result<CorpusLosses> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let opts = ForwardOptions::default();
    let (mut l1, mut l2, mut nll) = (0.0, 0.0, 0.0);
    let mut tokens = 0;
    for batch in make_batches(examples, batch_size, cfg.max_len) {
        let out = forward(store, cfg, &batch, &opts)?;
        let n = batch.size as f64;
        l1 += out.losses.l1 * n;
        l2 += out.losses.l2 * n;
        let count = batch.target_count();
        nll += out.losses.l3 * count as f64;
        tokens += count;
    }
    let n = examples.len() as f64;
    let l3 = if tokens == 0 { 0.0 } else { nll / tokens as f64 };
    Ok(CorpusLosses {
        losses: LossBundle::new(l1 / n, l2 / n, l3),
        examples: examples.len(),
        tokens,
        response_nll: nll,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub sentiment: usize,
    pub emotion: usize,
    pub sentiment_probs: Vec<f64>,
    pub emotion_probs: Vec<f64>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Sentiment and emotion predictions from the encoder alone.
pub fn classify<T: Scalar>(store: &ParameterStore<T>, cfg: &ModelConfig, batch: &Batch) -> Vec<Prediction> {
    let mut tape = Tape::new(store, false);
    let enc = network::encode(&mut tape, cfg, batch);
    let s = tape.graph.value(enc.s_att_pooled);
    let e = tape.graph.value(enc.e_att);
    let (k, m) = (s.last_dim(), e.last_dim());
    (0..batch.size)
        .map(|b| {
            let sp: Vec<f64> = s.data()[b * k..(b + 1) * k].iter().map(|x| x.to_f64_lossy()).collect();
            let ep: Vec<f64> = e.data()[b * m..(b + 1) * m].iter().map(|x| x.to_f64_lossy()).collect();
            Prediction {
                sentiment: argmax(&sp),
                emotion: argmax(&ep),
                sentiment_probs: sp,
                emotion_probs: ep,
            }
        })
        .collect()
}

/// Label indices left out of the macro-F1 average: `no_emotion`, when the
/// label space has it.
pub fn default_exclusions(labels: &LabelSpace) -> Vec<usize> {
    labels.emotion_index(Emotion::NoEmotion).into_iter().collect()
}

#[derive(Clone, Debug)]
pub struct EvalSettings {
    pub batch_size: usize,
    pub beam: BeamConfig,
    pub exclude: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricReport,
    pub sentiment_accuracy: f64,
    pub losses: CorpusLosses,
    pub responses: Vec<Vec<usize>>,
}

fn or_zero(r: Result<f64>) -> Result<f64> {
    match r {
        Err(Error::Empty(_)) => Ok(0.0),
        other => other,
    }
}

/// Full metric suite over `examples`. Responses come from beam search;
/// cosine similarity uses `table`.
pub fn evaluate<T: Scalar>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    examples: &[EncodedExample],
    labels: &LabelSpace,
    vocab: &Vocabulary,
    table: &EmbeddingTable,
    settings: &EvalSettings,
) -> Result<Evaluation> {
    let losses = corpus_losses(store, cfg, examples, settings.batch_size)?;
    let mut emotion_pred = Vec::new();
    let mut sentiment_hits = 0usize;
    let mut responses = Vec::new();
    for batch in make_batches(examples, settings.batch_size, cfg.max_len) {
        for (b, p) in classify(store, cfg, &batch).into_iter().enumerate() {
            emotion_pred.push(p.emotion);
            sentiment_hits += usize::from(p.sentiment == batch.sentiment_targets[b]);
        }
        for cands in beam_decode(store, cfg, &batch, &settings.beam) {
            responses.push(cands.into_iter().next().map(|c| c.tokens).unwrap_or_default());
        }
    }
    let references: Vec<Vec<usize>> = examples
        .iter()
        .map(|e| e.response.iter().copied().filter(|&t| t != SOS && t != EOS).collect())
        .collect();
    let words = |ids: &Vec<usize>| -> Vec<&str> { ids.iter().map(|&i| vocab.token(i)).collect() };
    let cand_words: Vec<Vec<&str>> = responses.iter().map(words).collect();
    let ref_words: Vec<Vec<&str>> = references.iter().map(words).collect();

    let golds: Vec<usize> = examples.iter().map(|e| e.emotion).collect();
    let names: Vec<String> = labels.emotions.iter().map(|e| e.name().to_string()).collect();
    let cls = macro_f1(&emotion_pred, &golds, &names, &settings.exclude)?;

    let report = MetricReport {
        ppl: losses.perplexity()?,
        bleu: bleu(&cand_words, &ref_words)?,
        distinct_1: or_zero(distinct_n(&cand_words, 1))?,
        distinct_2: or_zero(distinct_n(&cand_words, 2))?,
        avg_cosine: avg_cosine(&responses, &references, table),
        macro_f1: cls.macro_f1,
        per_class: cls.per_class,
        confusion: cls.confusion,
    };
    Ok(Evaluation {
        report,
        sentiment_accuracy: sentiment_hits as f64 / examples.len() as f64,
        losses,
        responses,
    })
}

/// The model's own input embeddings as a lookup table.
pub fn embedding_table<T: Scalar>(store: &ParameterStore<T>) -> EmbeddingTable {
    let e = store.expect("embedding");
    EmbeddingTable::from_rows(e.last_dim(), e.data().iter().map(|x| x.to_f64_lossy() as f32).collect())
}
