//! Raw dialogue ingestion and conversion into mapped training examples.
//!
//! Input rows carry the fields `conversation_id`, `turn_index`, `speaker`,
//! `text`, `fine_emotion` and an optional `split` (`train`, `valid`,
//! `test`). Files ending in `.jsonl`/`.json` are read as one JSON object per
//! line, anything else as CSV with a header row.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::emotion::{map_emotion, sentiment_of, DatasetTag, Emotion, Sentiment};
use super::vocab::tokenize;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[serde(alias = "validation", alias = "dev", alias = "val")]
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub conversation_id: String,
    pub turn_index: usize,
    pub speaker: String,
    pub text: String,
    #[serde(default, deserialize_with = "empty_as_none")]
    pub fine_emotion: Option<String>,
    #[serde(default, deserialize_with = "empty_split_as_none")]
    pub split: Option<Split>,
}

fn empty_as_none<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    let v: Option<String> = Option::deserialize(d)?;
    Ok(v.filter(|s| !s.trim().is_empty()))
}

fn empty_split_as_none<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Split>, D::Error> {
    let v: Option<String> = Option::deserialize(d)?;
    match v.as_deref().map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => serde_json::from_value(serde_json::Value::String(s.to_lowercase()))
            .map(Some)
            .map_err(serde::de::Error::custom),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawTurn {
    pub speaker: String,
    pub text: String,
    pub fine_emotion: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawDialogue {
    pub conversation_id: String,
    pub turns: Vec<RawTurn>,
    pub dataset: DatasetTag,
    pub split: Option<Split>,
}

impl RawDialogue {
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidDialogue {
            id: self.conversation_id.clone(),
            reason: reason.into(),
        };
        if self.turns.len() < 2 {
            return Err(invalid("fewer than 2 turns"));
        }
        if self.turns.iter().any(|t| t.text.trim().is_empty()) {
            return Err(invalid("empty utterance"));
        }
        Ok(())
    }

    fn dialogue_emotion(&self) -> Option<&str> {
        self.turns.iter().find_map(|t| t.fine_emotion.as_deref())
    }
}

/// One training example: history, the user turn being answered, and the
/// gold reply, labelled with the coarse emotion of the user turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappedDialogue {
    pub conversation_id: String,
    pub dataset: DatasetTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    pub context_turns: Vec<Vec<String>>,
    pub current_turn: Vec<String>,
    pub response: Vec<String>,
    pub emotion: Emotion,
    pub sentiment: Sentiment,
}

impl MappedDialogue {
    /// All token sequences of the example, for vocabulary building.
    pub fn sentences(&self) -> impl Iterator<Item = &Vec<String>> {
        self.context_turns
            .iter()
            .chain(std::iter::once(&self.current_turn))
            .chain(std::iter::once(&self.response))
    }
}

pub fn read_records(path: &Path) -> Result<Vec<RawRecord>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let mut records = Vec::new();
    if ext.eq_ignore_ascii_case("jsonl") || ext.eq_ignore_ascii_case("json") {
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::file(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RawRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
            records.push(rec);
        }
    } else {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::Headers)
            .from_reader(file);
        for rec in reader.deserialize() {
            records.push(rec?);
        }
    }
    Ok(records)
}

/// Groups rows by conversation (in order of first appearance) and orders
/// turns by `turn_index`.
pub fn group_dialogues(records: Vec<RawRecord>, dataset: DatasetTag) -> Vec<RawDialogue> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<RawRecord>> = HashMap::new();
    for rec in records {
        if !groups.contains_key(&rec.conversation_id) {
            order.push(rec.conversation_id.clone());
        }
        groups.entry(rec.conversation_id.clone()).or_default().push(rec);
    }
    order
        .into_iter()
        .map(|id| {
            let mut rows = groups.remove(&id).unwrap();
            rows.sort_by_key(|r| r.turn_index);
            let split = rows.iter().find_map(|r| r.split);
            RawDialogue {
                conversation_id: id,
                dataset,
                split,
                turns: rows
                    .into_iter()
                    .map(|r| RawTurn {
                        speaker: r.speaker,
                        text: r.text,
                        fine_emotion: r.fine_emotion,
                    })
                    .collect(),
            }
        })
        .collect()
}

pub fn read_raw_dialogues(path: &Path, dataset: DatasetTag) -> Result<Vec<RawDialogue>> {
    Ok(group_dialogues(read_records(path)?, dataset))
}

/// Expands a dialogue into one example per reply turn (turns 1, 3, 5, ..).
/// The emotion is that of the answered turn, falling back to the first
/// labelled turn of the conversation.
pub fn map_dialogue(raw: &RawDialogue) -> Result<Vec<MappedDialogue>> {
    raw.validate()?;
    let fallback = raw.dialogue_emotion();
    let tokens: Vec<Vec<String>> = raw.turns.iter().map(|t| tokenize(&t.text)).collect();
    let mut out = Vec::new();
    for r in (1..raw.turns.len()).step_by(2) {
        let u = r - 1;
        let label = raw.turns[u]
            .fine_emotion
            .as_deref()
            .or(fallback)
            .ok_or_else(|| Error::InvalidDialogue {
                id: raw.conversation_id.clone(),
                reason: "no emotion label".into(),
            })?;
        let emotion = map_emotion(label, raw.dataset)?;
        let sentiment = sentiment_of(emotion, raw.dataset)?;
        out.push(MappedDialogue {
            conversation_id: raw.conversation_id.clone(),
            dataset: raw.dataset,
            split: raw.split,
            context_turns: tokens[..u].to_vec(),
            current_turn: tokens[u].clone(),
            response: tokens[r].clone(),
            emotion,
            sentiment,
        });
    }
    Ok(out)
}

/// Per-class example counts.
pub type EmotionCounts = BTreeMap<Emotion, usize>;

/// Maps every dialogue. Structurally invalid dialogues are skipped with a
/// warning; unknown emotion labels reject the whole input, listing all of
/// them.
pub fn map_corpus(raws: &[RawDialogue]) -> Result<(Vec<MappedDialogue>, EmotionCounts)> {
    if raws.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let dataset = raws[0].dataset;
    let mut unknown = BTreeSet::new();
    let mut mapped = Vec::new();
    for raw in raws {
        match map_dialogue(raw) {
            Ok(items) => mapped.extend(items),
            Err(Error::UnknownEmotion { label, .. }) => {
                unknown.insert(label);
            }
            Err(e @ (Error::InvalidDialogue { .. } | Error::IllegalLabel { .. })) => {
                log::warn!("skipping: {e}");
            }
            Err(e) => return Err(e),
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownEmotions {
            labels: unknown.into_iter().collect(),
            dataset,
        });
    }
    if mapped.is_empty() {
        return Err(Error::Empty("mapped corpus"));
    }
    let mut counts = EmotionCounts::new();
    for m in &mapped {
        *counts.entry(m.emotion).or_default() += 1;
    }
    Ok((mapped, counts))
}

pub fn write_mapped(path: &Path, dialogues: &[MappedDialogue]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    for d in dialogues {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mapped(path: &Path) -> Result<Vec<MappedDialogue>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<MappedDialogue>,
    pub valid: Vec<MappedDialogue>,
    pub test: Vec<MappedDialogue>,
}

/// Honors per-record split tags when every record has one; otherwise a
/// seeded 80/10/10 shuffle over conversations (examples of one conversation
/// stay together).
pub fn split_corpus(dialogues: Vec<MappedDialogue>, seed: u64) -> Splits {
    let mut splits = Splits::default();
    if !dialogues.is_empty() && dialogues.iter().all(|d| d.split.is_some()) {
        for d in dialogues {
            match d.split.unwrap() {
                Split::Train => splits.train.push(d),
                Split::Valid => splits.valid.push(d),
                Split::Test => splits.test.push(d),
            }
        }
        return splits;
    }
    let mut ids: Vec<String> = Vec::new();
    for d in &dialogues {
        if ids.last() != Some(&d.conversation_id) && !ids.contains(&d.conversation_id) {
            ids.push(d.conversation_id.clone());
        }
    }
    ids.shuffle(&mut rng::derive(seed, "corpus.split"));
    let n = ids.len();
    let n_valid = n / 10;
    let n_test = n / 10;
    let n_train = n - n_valid - n_test;
    let assign: HashMap<&str, Split> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let s = if i < n_train {
                Split::Train
            } else if i < n_train + n_valid {
                Split::Valid
            } else {
                Split::Test
            };
            (id.as_str(), s)
        })
        .collect();
    for d in dialogues {
        match assign[d.conversation_id.as_str()] {
            Split::Train => splits.train.push(d),
            Split::Valid => splits.valid.push(d),
            Split::Test => splits.test.push(d),
        }
    }
    splits
}
