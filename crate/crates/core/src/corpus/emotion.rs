//! Coarse emotion classes, sentiment polarity and the fine-label mapping.
//!
//! Empathetic-Dialogues (ED) style data carries 32 fine emotion labels which
//! collapse onto the eight basic Plutchik emotions plus two dyads (love and
//! remorse). DailyDialog (DD) style data is already labelled with the basic
//! classes plus "no emotion".

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetTag {
    #[serde(rename = "ED")]
    Ed,
    #[serde(rename = "DD")]
    Dd,
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetTag::Ed => "ED",
            DatasetTag::Dd => "DD",
        })
    }
}

impl FromStr for DatasetTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ED" => Ok(DatasetTag::Ed),
            "DD" => Ok(DatasetTag::Dd),
            _ => Err(Error::Parse(format!("unknown dataset tag {s:?} (expected ED or DD)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emotion {
    Joy,
    Surprise,
    Anticipation,
    Love,
    Trust,
    Anger,
    Disgust,
    Fear,
    Sadness,
    Remorse,
    NoEmotion,
}

impl Emotion {
    pub const ALL: [Emotion; 11] = [
        Emotion::Joy,
        Emotion::Surprise,
        Emotion::Anticipation,
        Emotion::Love,
        Emotion::Trust,
        Emotion::Anger,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Sadness,
        Emotion::Remorse,
        Emotion::NoEmotion,
    ];

    /// Stable global index; the inverse of `Emotion::ALL[i]`.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Emotion> {
        Emotion::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Joy => "joy",
            Emotion::Surprise => "surprise",
            Emotion::Anticipation => "anticipation",
            Emotion::Love => "love",
            Emotion::Trust => "trust",
            Emotion::Anger => "anger",
            Emotion::Disgust => "disgust",
            Emotion::Fear => "fear",
            Emotion::Sadness => "sadness",
            Emotion::Remorse => "remorse",
            Emotion::NoEmotion => "no_emotion",
        }
    }

    pub fn from_name(name: &str) -> Option<Emotion> {
        Emotion::ALL.into_iter().find(|e| e.name() == name)
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sentiment {
    Positive,
    Negative,
    Neutral,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Positive, Sentiment::Negative, Sentiment::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Sentiment::Positive => "positive",
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fine ED labels grouped by coarse class, in table order.
pub const ED_GROUPS: [(Emotion, &[&str]); 10] = [
    (Emotion::Joy, &["excited", "joyful", "grateful", "content", "confident"]),
    (Emotion::Surprise, &["surprised", "impressed"]),
    (Emotion::Anticipation, &["anticipating", "hopeful", "prepared"]),
    (Emotion::Love, &["sentimental", "caring", "nostalgic"]),
    (Emotion::Trust, &["proud", "trusting", "faithful"]),
    (Emotion::Anger, &["angry", "annoyed", "furious", "jealous"]),
    (Emotion::Disgust, &["disgusted"]),
    (Emotion::Fear, &["afraid", "terrified", "anxious", "apprehensive", "embarrassed"]),
    (Emotion::Sadness, &["sad", "lonely", "devastated", "disappointed"]),
    (Emotion::Remorse, &["guilty", "ashamed"]),
];

/// DD labels: the six basic classes plus "no emotion". DailyDialog's
/// numeric codes (0 = no emotion .. 6 = surprise) are accepted as well.
pub const DD_LABELS: [(&str, Emotion); 7] = [
    ("no_emotion", Emotion::NoEmotion),
    ("anger", Emotion::Anger),
    ("disgust", Emotion::Disgust),
    ("fear", Emotion::Fear),
    ("happiness", Emotion::Joy),
    ("sadness", Emotion::Sadness),
    ("surprise", Emotion::Surprise),
];

fn normalize(label: &str) -> String {
    label.trim().to_lowercase().replace([' ', '-'], "_")
}

/// Maps a fine dataset label onto its coarse class.
pub fn map_emotion(fine_label: &str, dataset: DatasetTag) -> Result<Emotion> {
    let key = normalize(fine_label);
    let found = match dataset {
        DatasetTag::Ed => ED_GROUPS
            .iter()
            .find(|(_, fines)| fines.contains(&key.as_str()))
            .map(|(e, _)| *e),
        DatasetTag::Dd => {
            let alias = match key.as_str() {
                "joy" => "happiness",
                "none" | "noemotion" => "no_emotion",
                k => k,
            };
            match alias.parse::<usize>() {
                Ok(code) => DD_LABELS.get(code).map(|(_, e)| *e),
                Err(_) => DD_LABELS.iter().find(|(n, _)| *n == alias).map(|(_, e)| *e),
            }
        }
    };
    found.ok_or_else(|| Error::UnknownEmotion {
        label: fine_label.to_string(),
        dataset,
    })
}

/// Valence of a coarse class. `no_emotion` is neutral and only legal on DD.
pub fn sentiment_of(emotion: Emotion, dataset: DatasetTag) -> Result<Sentiment> {
    Ok(match emotion {
        Emotion::Joy | Emotion::Surprise | Emotion::Anticipation | Emotion::Love | Emotion::Trust => {
            Sentiment::Positive
        }
        Emotion::Anger | Emotion::Disgust | Emotion::Fear | Emotion::Sadness | Emotion::Remorse => {
            Sentiment::Negative
        }
        Emotion::NoEmotion => match dataset {
            DatasetTag::Dd => Sentiment::Neutral,
            DatasetTag::Ed => {
                return Err(Error::IllegalLabel {
                    label: emotion.name().into(),
                    dataset,
                })
            }
        },
    })
}

/// The ordered classes a model is trained on: model output `i` is
/// `emotions[i]` (resp. `sentiments[i]`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub emotions: Vec<Emotion>,
    pub sentiments: Vec<Sentiment>,
}

impl LabelSpace {
    pub fn for_dataset(dataset: DatasetTag) -> Self {
        match dataset {
            DatasetTag::Ed => LabelSpace {
                emotions: ED_GROUPS.iter().map(|(e, _)| *e).collect(),
                sentiments: vec![Sentiment::Positive, Sentiment::Negative],
            },
            DatasetTag::Dd => LabelSpace {
                emotions: vec![
                    Emotion::Joy,
                    Emotion::Surprise,
                    Emotion::Anger,
                    Emotion::Disgust,
                    Emotion::Fear,
                    Emotion::Sadness,
                    Emotion::NoEmotion,
                ],
                sentiments: Sentiment::ALL.to_vec(),
            },
        }
    }

    pub fn emotion_index(&self, emotion: Emotion) -> Result<usize> {
        self.emotions
            .iter()
            .position(|&e| e == emotion)
            .ok_or_else(|| Error::LabelOutOfSpace(emotion.name().into()))
    }

    pub fn sentiment_index(&self, sentiment: Sentiment) -> Result<usize> {
        self.sentiments
            .iter()
            .position(|&s| s == sentiment)
            .ok_or_else(|| Error::LabelOutOfSpace(sentiment.name().into()))
    }

    pub fn n_emotions(&self) -> usize {
        self.emotions.len()
    }

    pub fn n_sentiments(&self) -> usize {
        self.sentiments.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_examples() {
        assert_eq!(map_emotion("proud", DatasetTag::Ed).unwrap(), Emotion::Trust);
        assert_eq!(map_emotion("guilty", DatasetTag::Ed).unwrap(), Emotion::Remorse);
        assert_eq!(map_emotion("nostalgic", DatasetTag::Ed).unwrap(), Emotion::Love);
        assert_eq!(map_emotion("terrified", DatasetTag::Ed).unwrap(), Emotion::Fear);
        assert_eq!(map_emotion("sadness", DatasetTag::Dd).unwrap(), Emotion::Sadness);
        assert_eq!(map_emotion("Sadness", DatasetTag::Dd).unwrap(), Emotion::Sadness);
        assert_eq!(map_emotion("happiness", DatasetTag::Dd).unwrap(), Emotion::Joy);
        assert_eq!(map_emotion("no emotion", DatasetTag::Dd).unwrap(), Emotion::NoEmotion);
        assert_eq!(map_emotion("4", DatasetTag::Dd).unwrap(), Emotion::Joy);
    }

    #[test]
    fn unknown_label_names_offender() {
        let err = map_emotion("bored", DatasetTag::Ed).unwrap_err();
        assert!(err.to_string().contains("bored"));
        // ED fine labels are not DD labels
        assert!(map_emotion("terrified", DatasetTag::Dd).is_err());
    }

    #[test]
    fn sentiment_map() {
        assert_eq!(sentiment_of(Emotion::Joy, DatasetTag::Ed).unwrap(), Sentiment::Positive);
        assert_eq!(sentiment_of(Emotion::Surprise, DatasetTag::Ed).unwrap(), Sentiment::Positive);
        assert_eq!(sentiment_of(Emotion::NoEmotion, DatasetTag::Dd).unwrap(), Sentiment::Neutral);
        assert!(sentiment_of(Emotion::NoEmotion, DatasetTag::Ed).is_err());
    }

    #[test]
    fn remorse_sources_are_all_negative() {
        // every fine label feeding remorse is negatively valenced, and so is the class
        let (_, fines) = ED_GROUPS.iter().find(|(e, _)| *e == Emotion::Remorse).unwrap();
        for fine in *fines {
            let e = map_emotion(fine, DatasetTag::Ed).unwrap();
            assert_eq!(sentiment_of(e, DatasetTag::Ed).unwrap(), Sentiment::Negative);
        }
    }

    #[test]
    fn ed_never_neutral() {
        for (_, fines) in ED_GROUPS {
            for fine in fines {
                let e = map_emotion(fine, DatasetTag::Ed).unwrap();
                assert_ne!(sentiment_of(e, DatasetTag::Ed).unwrap(), Sentiment::Neutral);
            }
        }
    }

    #[test]
    fn index_bijection() {
        for (i, e) in Emotion::ALL.iter().enumerate() {
            assert_eq!(e.index(), i);
            assert_eq!(Emotion::from_index(i), Some(*e));
            assert_eq!(Emotion::from_name(e.name()), Some(*e));
        }
    }

    #[test]
    fn label_spaces() {
        let ed = LabelSpace::for_dataset(DatasetTag::Ed);
        assert_eq!((ed.n_emotions(), ed.n_sentiments()), (10, 2));
        let dd = LabelSpace::for_dataset(DatasetTag::Dd);
        assert_eq!((dd.n_emotions(), dd.n_sentiments()), (7, 3));
        assert!(ed.emotion_index(Emotion::NoEmotion).is_err());
    }
}
