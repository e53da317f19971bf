//! Dataset ingestion, emotion standardization, vocabulary, embeddings and
//! batching.

mod batch;
mod dataset;
mod embeddings;
mod emotion;
mod synthetic;
mod vocab;

pub use batch::{encode_corpus, encode_dialogue, make_batches, Batch, EncodedExample};
pub use dataset::{
    group_dialogues, map_corpus, map_dialogue, read_mapped, read_raw_dialogues, read_records,
    split_corpus, write_mapped, EmotionCounts, MappedDialogue, RawDialogue, RawRecord, RawTurn,
    Split, Splits,
};
pub use embeddings::{load_embeddings, EmbeddingTable};
pub use emotion::{
    map_emotion, sentiment_of, DatasetTag, Emotion, LabelSpace, Sentiment, DD_LABELS, ED_GROUPS,
};
pub use synthetic::synthetic_corpus;
pub use vocab::{tokenize, Vocabulary, EOS, PAD, RESERVED, SOS, UNK};

use crate::error::Result;

/// Vocabulary over every token of the mapped corpus.
pub fn build_vocab(corpus: &[MappedDialogue], min_freq: usize) -> Result<Vocabulary> {
    Vocabulary::build(corpus.iter().flat_map(|d| d.sentences()), min_freq)
}
