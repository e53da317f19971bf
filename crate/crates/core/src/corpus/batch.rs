use std::ops::Range;

use super::dataset::MappedDialogue;
use super::emotion::LabelSpace;
use super::vocab::{Vocabulary, EOS, PAD, SOS};
use crate::error::Result;

/// Vocabulary-encoded example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    /// History turns concatenated in chronological order.
    pub history: Vec<usize>,
    pub current: Vec<usize>,
    /// Gold reply without SOS/EOS.
    pub response: Vec<usize>,
    pub sentiment: usize,
    pub emotion: usize,
}

pub fn encode_dialogue(d: &MappedDialogue, vocab: &Vocabulary, labels: &LabelSpace) -> Result<EncodedExample> {
    Ok(EncodedExample {
        history: d.context_turns.iter().flat_map(|t| vocab.encode(t)).collect(),
        current: vocab.encode(&d.current_turn),
        response: vocab.encode(&d.response),
        sentiment: labels.sentiment_index(d.sentiment)?,
        emotion: labels.emotion_index(d.emotion)?,
    })
}

pub fn encode_corpus(
    dialogues: &[MappedDialogue],
    vocab: &Vocabulary,
    labels: &LabelSpace,
) -> Result<Vec<EncodedExample>> {
    dialogues.iter().map(|d| encode_dialogue(d, vocab, labels)).collect()
}

/// Padded mini-batch. Row-major `[batch, len]` id and mask buffers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub size: usize,
    pub context_len: usize,
    /// History followed by the current turn, PAD-filled.
    pub context_ids: Vec<usize>,
    pub context_mask: Vec<bool>,
    /// Where the current turn sits inside each context row.
    pub current_turn: Vec<Range<usize>>,
    pub response_len: usize,
    /// `[SOS, reply.., EOS]`, PAD-filled.
    pub response_ids: Vec<usize>,
    pub response_mask: Vec<bool>,
    pub sentiment_targets: Vec<usize>,
    pub emotion_targets: Vec<usize>,
}

/// Context row for one example: oldest history is dropped first so that
/// the context fits `max_len`; the current turn is never cut.
fn context_row(ex: &EncodedExample, max_len: usize) -> (Vec<usize>, Range<usize>) {
    let budget = max_len.saturating_sub(ex.current.len());
    let skip = ex.history.len().saturating_sub(budget);
    if skip > 0 {
        log::debug!("truncating {skip} history tokens to fit max_len {max_len}");
    }
    let mut row: Vec<usize> = ex.history[skip..].to_vec();
    let start = row.len();
    row.extend_from_slice(&ex.current);
    let end = row.len();
    (row, start..end)
}

fn response_row(ex: &EncodedExample, max_len: usize) -> Vec<usize> {
    let keep = ex.response.len().min(max_len.saturating_sub(2).max(1));
    if keep < ex.response.len() {
        log::debug!("truncating reply from {} to {keep} tokens", ex.response.len());
    }
    let mut row = Vec::with_capacity(keep + 2);
    row.push(SOS);
    row.extend_from_slice(&ex.response[..keep]);
    row.push(EOS);
    row
}

impl Batch {
    pub fn from_examples(examples: &[&EncodedExample], max_len: usize) -> Batch {
        let contexts: Vec<_> = examples.iter().map(|e| context_row(e, max_len)).collect();
        let responses: Vec<_> = examples.iter().map(|e| response_row(e, max_len)).collect();
        let size = examples.len();
        let context_len = contexts.iter().map(|(r, _)| r.len()).max().unwrap_or(0).max(1);
        let response_len = responses.iter().map(Vec::len).max().unwrap_or(2);
        let mut batch = Batch {
            size,
            context_len,
            context_ids: vec![PAD; size * context_len],
            context_mask: vec![false; size * context_len],
            current_turn: Vec::with_capacity(size),
            response_len,
            response_ids: vec![PAD; size * response_len],
            response_mask: vec![false; size * response_len],
            sentiment_targets: examples.iter().map(|e| e.sentiment).collect(),
            emotion_targets: examples.iter().map(|e| e.emotion).collect(),
        };
        for (b, (row, range)) in contexts.into_iter().enumerate() {
            for (j, id) in row.into_iter().enumerate() {
                batch.context_ids[b * context_len + j] = id;
                batch.context_mask[b * context_len + j] = true;
            }
            batch.current_turn.push(range);
        }
        for (b, row) in responses.into_iter().enumerate() {
            for (j, id) in row.into_iter().enumerate() {
                batch.response_ids[b * response_len + j] = id;
                batch.response_mask[b * response_len + j] = true;
            }
        }
        batch
    }

    /// Single-example batch from a raw context (history + current turn).
    pub fn for_context(history: &[usize], current: &[usize], max_len: usize) -> Batch {
        let ex = EncodedExample {
            history: history.to_vec(),
            current: current.to_vec(),
            response: vec![],
            sentiment: 0,
            emotion: 0,
        };
        Batch::from_examples(&[&ex], max_len)
    }

    pub fn context_row(&self, b: usize) -> &[usize] {
        &self.context_ids[b * self.context_len..(b + 1) * self.context_len]
    }

    pub fn response_row(&self, b: usize) -> &[usize] {
        &self.response_ids[b * self.response_len..(b + 1) * self.response_len]
    }

    /// Number of gold target tokens (reply + EOS) across the batch.
    pub fn target_count(&self) -> usize {
        (0..self.size)
            .map(|b| {
                self.response_mask[b * self.response_len..(b + 1) * self.response_len]
                    .iter()
                    .filter(|&&m| m)
                    .count()
                    .saturating_sub(1)
            })
            .sum()
    }

    /// Checks the structural invariants: masks true exactly on non-PAD ids
    /// and current-turn ranges inside the unpadded span.
    pub fn is_consistent(&self) -> bool {
        let masks_ok = self
            .context_ids
            .iter()
            .zip(&self.context_mask)
            .all(|(&id, &m)| m == (id != PAD))
            && self
                .response_ids
                .iter()
                .zip(&self.response_mask)
                .all(|(&id, &m)| m == (id != PAD));
        let ranges_ok = self.current_turn.iter().enumerate().all(|(b, r)| {
            let used = self.context_mask[b * self.context_len..(b + 1) * self.context_len]
                .iter()
                .filter(|&&m| m)
                .count();
            r.start <= r.end && r.end <= used
        });
        masks_ok && ranges_ok
    }
}

/// Consecutive chunks of `batch_size` examples, in the given order.
pub fn make_batches(examples: &[EncodedExample], batch_size: usize, max_len: usize) -> Vec<Batch> {
    let refs: Vec<&EncodedExample> = examples.iter().collect();
    refs.chunks(batch_size.max(1))
        .map(|chunk| Batch::from_examples(chunk, max_len))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ex(history: Vec<usize>, current: Vec<usize>, response: Vec<usize>) -> EncodedExample {
        EncodedExample {
            history,
            current,
            response,
            sentiment: 0,
            emotion: 1,
        }
    }

    #[test]
    fn single_dialogue_layout() {
        // history "hi" + current "i am sad", reply "sorry"
        let e = ex(vec![10], vec![11, 12, 13], vec![14]);
        let b = Batch::from_examples(&[&e], 128);
        assert_eq!(b.context_len, 4);
        assert_eq!(b.context_ids, [10, 11, 12, 13]);
        assert_eq!(b.current_turn[0], 1..4);
        assert_eq!(b.response_ids, [SOS, 14, EOS]);
        assert_eq!(b.target_count(), 2);
        assert!(b.is_consistent());
    }

    #[test]
    fn pads_to_batch_max() {
        let a = ex(vec![], vec![4, 5, 6], vec![7]);
        let c = ex(vec![8, 9], vec![4, 5, 6], vec![7, 7, 7]);
        let b = Batch::from_examples(&[&a, &c], 128);
        assert_eq!(b.context_len, 5);
        assert_eq!(&b.context_mask[..5], &[true, true, true, false, false]);
        assert_eq!(b.response_row(0), &[SOS, 7, EOS, PAD, PAD]);
        assert!(b.is_consistent());
    }

    #[test]
    fn batch_sizes() {
        let items: Vec<_> = (0..33).map(|i| ex(vec![], vec![4 + i % 3], vec![5])).collect();
        let sizes: Vec<usize> = make_batches(&items, 16, 128).iter().map(|b| b.size).collect();
        assert_eq!(sizes, [16, 16, 1]);
    }

    #[test]
    fn truncates_oldest_history_only() {
        let e = ex(vec![4, 5, 6, 7], vec![8, 9, 10], vec![11]);
        let b = Batch::from_examples(&[&e], 5);
        assert_eq!(b.context_ids, [6, 7, 8, 9, 10]);
        assert_eq!(b.current_turn[0], 2..5);
        let long = ex(vec![4], vec![8, 9, 10, 11, 12, 13], vec![11]);
        let b = Batch::from_examples(&[&long], 5);
        assert_eq!(b.context_ids, [8, 9, 10, 11, 12, 13]);
    }

    proptest! {
        #[test]
        fn tensors_independent_of_batch_mates(
            lens in prop::collection::vec((0usize..6, 1usize..5, 1usize..6), 2..6),
            pick in 0usize..6,
        ) {
            let items: Vec<EncodedExample> = lens
                .iter()
                .enumerate()
                .map(|(i, &(h, c, r))| ex(vec![4 + i; h], vec![20 + i; c], vec![40 + i; r]))
                .collect();
            let pick = pick % items.len();
            let alone = Batch::from_examples(&[&items[pick]], 128);
            let refs: Vec<&EncodedExample> = items.iter().collect();
            let together = Batch::from_examples(&refs, 128);
            prop_assert!(together.is_consistent());
            let strip = |row: &[usize]| row.iter().copied().filter(|&t| t != PAD).collect::<Vec<_>>();
            prop_assert_eq!(strip(alone.context_row(0)), strip(together.context_row(pick)));
            prop_assert_eq!(strip(alone.response_row(0)), strip(together.response_row(pick)));
            prop_assert_eq!(&alone.current_turn[0], &together.current_turn[pick]);
        }
    }
}
