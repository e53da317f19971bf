//! Autoregressive response generation.
//!
//! The decoder is queried with the tokens generated so far, starting from
//! SOS. Search is written against [`StepScorer`] so that it can run on the
//! model or on hand-built probability tables.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::autograd::Scalar;
use crate::corpus::{Batch, EOS, SOS};
use crate::model::{encode_context, next_token_log_probs, EncodedContext, ModelConfig, ParameterStore};

/// Next-token log-probabilities for a set of prefixes (each starting with
/// the start token).
pub trait StepScorer {
    fn next_log_probs(&self, prefixes: &[Vec<usize>]) -> Vec<Vec<f64>>;
}

/// Scores continuations with the network for one encoded context.
pub struct ModelScorer<'a, T: Scalar> {
    store: &'a ParameterStore<T>,
    cfg: &'a ModelConfig,
    ctx: EncodedContext<T>,
}

impl<'a, T: Scalar> ModelScorer<'a, T> {
    pub fn new(store: &'a ParameterStore<T>, cfg: &'a ModelConfig, context: &Batch) -> Self {
        let ctx = encode_context(store, cfg, context);
        ModelScorer { store, cfg, ctx }
    }

    pub fn context(&self) -> &EncodedContext<T> {
        &self.ctx
    }
}

impl<T: Scalar> StepScorer for ModelScorer<'_, T> {
    fn next_log_probs(&self, prefixes: &[Vec<usize>]) -> Vec<Vec<f64>> {
        next_token_log_probs(self.store, self.cfg, &self.ctx, prefixes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub width: usize,
    pub length_penalty: f64,
    pub max_new_tokens: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            width: 5,
            length_penalty: 0.6,
            max_new_tokens: 30,
        }
    }
}

/// A generated sequence. `tokens` excludes the start token and the end
/// token; `finished` records whether the end token was emitted.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub score: f64,
    pub finished: bool,
}

impl Candidate {
    /// Length used for normalization: generated tokens including the end
    /// token.
    pub fn length(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }
}

fn normalized(log_prob: f64, length: usize, penalty: f64) -> f64 {
    if length == 0 {
        log_prob
    } else {
        log_prob / (length as f64).powf(penalty)
    }
}

#[derive(Clone, Debug)]
struct Beam {
    prefix: Vec<usize>,
    log_prob: f64,
    finished: bool,
    score: f64,
}

fn rank(a: &Beam, b: &Beam) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.prefix.cmp(&b.prefix))
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy search from `start`.
pub fn greedy<S: StepScorer + ?Sized>(
    scorer: &S,
    start: usize,
    end: Option<usize>,
    max_new_tokens: usize,
) -> Candidate {
    let mut prefix = vec![start];
    let mut log_prob = 0.0;
    let mut finished = false;
    for _ in 0..max_new_tokens {
        let row = scorer.next_log_probs(std::slice::from_ref(&prefix)).remove(0);
        let t = argmax(&row);
        log_prob += row[t];
        if Some(t) == end {
            finished = true;
            break;
        }
        prefix.push(t);
    }
    let tokens = prefix[1..].to_vec();
    Candidate {
        score: log_prob,
        tokens,
        log_prob,
        finished,
    }
}

/// Beam search from `start`. Finished beams stay in the pool and compete
/// on length-normalized score; candidates come back best first.
pub fn beam_search<S: StepScorer + ?Sized>(
    scorer: &S,
    start: usize,
    end: Option<usize>,
    cfg: &BeamConfig,
) -> Vec<Candidate> {
    let width = cfg.width.max(1);
    let mut pool = vec![Beam {
        prefix: vec![start],
        log_prob: 0.0,
        finished: false,
        score: 0.0,
    }];
    for _ in 0..cfg.max_new_tokens {
        let active: Vec<&Beam> = pool.iter().filter(|b| !b.finished).collect();
        if active.is_empty() {
            break;
        }
        let prefixes: Vec<Vec<usize>> = active.iter().map(|b| b.prefix.clone()).collect();
        let rows = scorer.next_log_probs(&prefixes);
        let mut next: Vec<Beam> = pool.iter().filter(|b| b.finished).cloned().collect();
        for (beam, row) in active.iter().zip(&rows) {
            // at most `width` continuations of one beam can survive
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
            for &t in order.iter().take(width) {
                let mut prefix = beam.prefix.clone();
                prefix.push(t);
                let finished = Some(t) == end;
                let log_prob = beam.log_prob + row[t];
                let length = prefix.len() - 1;
                next.push(Beam {
                    score: normalized(log_prob, length, cfg.length_penalty),
                    prefix,
                    log_prob,
                    finished,
                });
            }
        }
        next.sort_by(rank);
        next.truncate(width);
        pool = next;
    }
    pool.sort_by(rank);
    pool.into_iter()
        .map(|b| {
            let mut tokens = b.prefix[1..].to_vec();
            if b.finished {
                tokens.pop();
            }
            Candidate {
                tokens,
                log_prob: b.log_prob,
                score: b.score,
                finished: b.finished,
            }
        })
        .collect()
}

fn single(batch: &Batch, b: usize) -> Batch {
    let l = batch.context_len;
    let used = batch.context_mask[b * l..(b + 1) * l].iter().filter(|&&m| m).count();
    let row = &batch.context_row(b)[..used];
    let range = batch.current_turn[b].clone();
    Batch::for_context(&row[..range.start], &row[range], usize::MAX)
}

/// Greedy responses for every context of `batch`.
pub fn greedy_decode<T: Scalar>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    batch: &Batch,
    max_new_tokens: usize,
) -> Vec<Vec<usize>> {
    (0..batch.size)
        .map(|b| {
            let scorer = ModelScorer::new(store, cfg, &single(batch, b));
            greedy(&scorer, SOS, Some(EOS), max_new_tokens).tokens
        })
        .collect()
}

/// Ranked beam candidates for every context of `batch`.
pub fn beam_decode<T: Scalar>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    batch: &Batch,
    beam: &BeamConfig,
) -> Vec<Vec<Candidate>> {
    (0..batch.size)
        .map(|b| {
            let scorer = ModelScorer::new(store, cfg, &single(batch, b));
            beam_search(&scorer, SOS, Some(EOS), beam)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Fixed next-token table keyed on the last token.
    struct Table(Vec<Vec<f64>>);

    impl StepScorer for Table {
        fn next_log_probs(&self, prefixes: &[Vec<usize>]) -> Vec<Vec<f64>> {
            prefixes
                .iter()
                .map(|p| self.0[*p.last().unwrap()].iter().map(|x: &f64| x.ln()).collect())
                .collect()
        }
    }

    fn table() -> Table {
        // token 3 is the start token
        Table(vec![
            vec![0.1, 0.6, 0.3],
            vec![0.5, 0.1, 0.4],
            vec![0.2, 0.2, 0.6],
            vec![0.5, 0.4, 0.1],
        ])
    }

    #[test]
    fn zero_budget_is_empty() {
        let c = greedy(&table(), 3, None, 0);
        assert!(c.tokens.is_empty());
        let cfg = BeamConfig {
            max_new_tokens: 0,
            ..BeamConfig::default()
        };
        let b = beam_search(&table(), 3, None, &cfg);
        assert_eq!(b.len(), 1);
        assert!(b[0].tokens.is_empty());
    }

    #[test]
    fn greedy_follows_argmax_with_low_index_ties() {
        let c = greedy(&table(), 3, None, 3);
        assert_eq!(c.tokens, [0, 1, 0]);
        let tied = Table(vec![vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert_eq!(greedy(&tied, 2, None, 2).tokens, [0, 0]);
    }

    #[test]
    fn stops_at_end_token() {
        let t = Table(vec![vec![0.1, 0.9], vec![0.2, 0.8]]);
        let c = greedy(&t, 0, Some(1), 5);
        assert!(c.finished);
        assert!(c.tokens.is_empty());
        assert_eq!(c.length(), 1);
        let b = beam_search(&t, 0, Some(1), &BeamConfig::default());
        assert!(b[0].finished);
    }

    #[test]
    fn beam_beats_greedy_on_log_prob() {
        let cfg = BeamConfig {
            width: 3,
            length_penalty: 0.0,
            max_new_tokens: 3,
        };
        let g = greedy(&table(), 3, None, 3);
        let b = beam_search(&table(), 3, None, &cfg);
        assert!(b[0].log_prob >= g.log_prob - 1e-12);
        assert!(b.windows(2).all(|w| w[0].score >= w[1].score));
    }

    fn random_table(rows: Vec<Vec<f64>>) -> Table {
        Table(
            rows.into_iter()
                .map(|r| {
                    let s: f64 = r.iter().sum();
                    r.into_iter().map(|x| x / s).collect()
                })
                .collect(),
        )
    }

    proptest! {
        #[test]
        fn beam_candidates_are_ranked_and_well_formed(
            rows in prop::collection::vec(prop::collection::vec(0.05f64..1.0, 4), 5),
            width in 1usize..6,
            penalty in 0.0f64..1.5,
            max_new in 1usize..5,
        ) {
            let t = random_table(rows);
            let cfg = BeamConfig { width, length_penalty: penalty, max_new_tokens: max_new };
            let beams = beam_search(&t, 4, Some(3), &cfg);
            prop_assert!(!beams.is_empty() && beams.len() <= width);
            prop_assert!(beams.windows(2).all(|w| w[0].score >= w[1].score));
            for c in &beams {
                prop_assert!(!c.tokens.contains(&3));
                prop_assert!(c.tokens.len() <= max_new);
                prop_assert!(c.finished || c.tokens.len() == max_new);
                prop_assert!(c.log_prob <= 0.0);
            }
            let g = greedy(&t, 4, Some(3), max_new);
            let one = beam_search(&t, 4, Some(3), &BeamConfig { width: 1, ..cfg });
            prop_assert_eq!(&one[0].tokens, &g.tokens);
        }
    }
}
