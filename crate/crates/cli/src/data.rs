//! Corpus loading shared by the commands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use asem::corpus::{
    build_vocab, encode_corpus, read_mapped, split_corpus, EmbeddingTable, EncodedExample, LabelSpace,
    MappedDialogue, Vocabulary,
};
use asem::model::ModelConfig;
use clap::ValueEnum;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Valid,
    Test,
    All,
}

/// Splits of the mapped corpus encoded against one vocabulary.
pub struct Prepared {
    pub vocab: Vocabulary,
    pub labels: LabelSpace,
    pub train: Vec<EncodedExample>,
    pub valid: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
}

pub fn read_corpus(path: &Path, labels: &LabelSpace) -> CliResult<Vec<MappedDialogue>> {
    let dialogues = read_mapped(path)?;
    if dialogues.is_empty() {
        return Err(asem::Error::Empty("corpus").into());
    }
    if let Some(d) = dialogues.iter().find(|d| labels.emotion_index(d.emotion).is_err()) {
        return Err(CliError::Config(format!(
            "{}: example {} has emotion {} outside the configured label space",
            path.display(),
            d.conversation_id,
            d.emotion.name()
        )));
    }
    Ok(dialogues)
}

/// Splits the corpus; the vocabulary is built from the training split
/// unless one is supplied.
pub fn prepare(cfg: &RunConfig, vocab: Option<Vocabulary>) -> CliResult<Prepared> {
    let labels = LabelSpace::for_dataset(cfg.dataset);
    let splits = split_corpus(read_corpus(&cfg.paths.corpus, &labels)?, cfg.train.seed);
    log::info!(
        "corpus split: {} train / {} valid / {} test",
        splits.train.len(),
        splits.valid.len(),
        splits.test.len()
    );
    let vocab = match vocab {
        Some(v) => v,
        None => build_vocab(&splits.train, cfg.min_freq)?,
    };
    Ok(Prepared {
        train: encode_corpus(&splits.train, &vocab, &labels)?,
        valid: encode_corpus(&splits.valid, &vocab, &labels)?,
        test: encode_corpus(&splits.test, &vocab, &labels)?,
        vocab,
        labels,
    })
}

pub fn select(dialogues: Vec<MappedDialogue>, choice: SplitChoice, seed: u64) -> Vec<MappedDialogue> {
    if choice == SplitChoice::All {
        return dialogues;
    }
    let s = split_corpus(dialogues, seed);
    match choice {
        SplitChoice::Train => s.train,
        SplitChoice::Valid => s.valid,
        _ => s.test,
    }
}

/// The configured model with its sizes taken from the data.
pub fn model_config(cfg: &RunConfig, vocab: &Vocabulary, labels: &LabelSpace) -> CliResult<ModelConfig> {
    let model = ModelConfig {
        vocab_size: vocab.len(),
        n_emotions: labels.n_emotions(),
        n_sentiments: labels.n_sentiments(),
        ..cfg.model.clone()
    };
    model.validate()?;
    Ok(model)
}

pub fn embeddings(cfg: &RunConfig, vocab: &Vocabulary, model: &ModelConfig) -> CliResult<Option<EmbeddingTable>> {
    match cfg.paths.embeddings() {
        Some(path) => {
            let (table, _) = asem::corpus::load_embeddings(path, vocab, model.embed_dim, cfg.train.seed)?;
            Ok(Some(table))
        }
        None => {
            log::info!("embeddings = none: random initialization");
            Ok(None)
        }
    }
}

pub fn create_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e)),
        _ => Ok(()),
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    create_parent(path)?;
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}
