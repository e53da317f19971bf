use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<sos>", "<eos>"];

/// Lowercases, splits on whitespace and detaches a trailing punctuation run
/// as its own token (`"sad."` -> `["sad", "."]`).
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let word = word.to_lowercase();
        let cut = word
            .char_indices()
            .rev()
            .take_while(|(_, c)| c.is_ascii_punctuation())
            .last()
            .map(|(i, _)| i);
        match cut {
            Some(i) if i > 0 => {
                out.push(word[..i].to_string());
                out.push(word[i..].to_string());
            }
            _ => out.push(word),
        }
    }
    out
}

/// Token inventory with fixed reserved indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Reserved tokens only.
    pub fn reserved() -> Self {
        RESERVED.iter().map(|s| s.to_string()).collect::<Vec<_>>().into()
    }

    /// Tokens with count ≥ `min_freq`, ordered by frequency (descending) then
    /// lexicographically, after the reserved entries.
    pub fn build<'a, I, S>(sentences: I, min_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        if min_freq == 0 {
            return Err(Error::Config("min_freq must be at least 1".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut seen_any = false;
        for sentence in sentences {
            for tok in sentence.as_ref() {
                seen_any = true;
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        if !seen_any {
            return Err(Error::Empty("corpus"));
        }
        let mut entries: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq && !RESERVED.contains(t))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(entries.into_iter().map(|(t, _)| t.to_string()));
        Ok(tokens.into())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(RESERVED[UNK])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Inverse of [`encode`](Self::encode); SOS/EOS/PAD are dropped.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| !matches!(i, PAD | SOS | EOS))
            .map(|&i| self.token(i).to_string())
            .collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        self.decode(ids).join(" ")
    }
}
