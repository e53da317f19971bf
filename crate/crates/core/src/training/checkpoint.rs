//! Binary checkpoint container.
//!
//! ```text
//! "ASEMCKPT"  u32 format_version  u32 header_len  header (JSON)
//! u32 tensor_count
//! per tensor: u32 name_len, name, u32 rank, u32 dims[rank], f32 data (LE)
//! ```
//! Tensors are the parameters in layout order followed by the AdamW first
//! and second moments under `adam.m/` and `adam.v/`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{init_params, AdamW, AdamWSettings, TrainConfig};
use crate::autograd::Tensor;
use crate::corpus::{EmbeddingTable, LabelSpace, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParameterStore};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ASEMCKPT";

/// Complete training state: enough to run inference or resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab: Vocabulary,
    pub labels: LabelSpace,
    pub params: ParameterStore<f32>,
    pub optimizer: AdamW<f32>,
    /// Updates applied so far.
    pub step: u64,
    pub val_history: Vec<f64>,
    pub best_val: Option<f64>,
    pub bad_evals: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    train: TrainConfig,
    vocab: Vocabulary,
    labels: LabelSpace,
    step: u64,
    val_history: Vec<f64>,
    best_val: Option<f64>,
    bad_evals: usize,
    seed: u64,
    adam: AdamWSettings,
    adam_t: u64,
}

impl Checkpoint {
    /// Freshly initialized state at step zero.
    pub fn init(
        model: ModelConfig,
        train: TrainConfig,
        vocab: Vocabulary,
        labels: LabelSpace,
        embeddings: Option<&EmbeddingTable>,
    ) -> Result<Self> {
        train.validate()?;
        if vocab.len() != model.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} entries but vocab_size is {}",
                vocab.len(),
                model.vocab_size
            )));
        }
        if labels.n_emotions() != model.n_emotions || labels.n_sentiments() != model.n_sentiments {
            return Err(Error::Config(format!(
                "label space has {} emotions / {} sentiments, model expects {} / {}",
                labels.n_emotions(),
                labels.n_sentiments(),
                model.n_emotions,
                model.n_sentiments
            )));
        }
        let params = init_params(&model, train.seed, embeddings)?;
        let optimizer = AdamW::new(train.adamw(), &params);
        Ok(Checkpoint {
            model,
            train,
            vocab,
            labels,
            params,
            optimizer,
            step: 0,
            val_history: Vec::new(),
            best_val: None,
            bad_evals: 0,
        })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let header = Header {
            format_version: FORMAT_VERSION,
            model: self.model.clone(),
            train: self.train.clone(),
            vocab: self.vocab.clone(),
            labels: self.labels.clone(),
            step: self.step,
            val_history: self.val_history.clone(),
            best_val: self.best_val,
            bad_evals: self.bad_evals,
            seed: self.train.seed,
            adam: self.optimizer.settings,
            adam_t: self.optimizer.t,
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        write_u32(w, json.len())?;
        w.write_all(&json)?;
        let tensors: Vec<(String, &Tensor<f32>)> = self
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t))
            .chain(self.optimizer.m.iter().map(|(n, t)| (format!("adam.m/{n}"), t)))
            .chain(self.optimizer.v.iter().map(|(n, t)| (format!("adam.v/{n}"), t)))
            .collect();
        write_u32(w, tensors.len())?;
        for (name, t) in tensors {
            write_u32(w, name.len())?;
            w.write_all(name.as_bytes())?;
            write_u32(w, t.rank())?;
            for &d in t.shape() {
                write_u32(w, d)?;
            }
            let mut buf = Vec::with_capacity(t.len() * 4);
            for x in t.data() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let len = read_u32(r)? as usize;
        let header: Header = serde_json::from_slice(&read_bytes(r, len)?)?;
        header.model.validate()?;
        let count = read_u32(r)? as usize;
        let mut params = ParameterStore::new();
        let mut m = ParameterStore::new();
        let mut v = ParameterStore::new();
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            let name = String::from_utf8(read_bytes(r, len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = read_u32(r)? as usize;
            let shape = (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = read_bytes(r, n * 4)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let t = Tensor::new(shape, data);
            let target = if let Some(rest) = name.strip_prefix("adam.m/") {
                (&mut m, rest.to_string())
            } else if let Some(rest) = name.strip_prefix("adam.v/") {
                (&mut v, rest.to_string())
            } else {
                (&mut params, name)
            };
            if target.0.get(&target.1).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {}", target.1)));
            }
            target.0.insert(target.1, t);
        }
        if !params.matches_layout(&header.model) {
            return Err(Error::Checkpoint("parameters do not match the stored model config".into()));
        }
        for (name, p) in params.iter() {
            for (which, s) in [("first", &m), ("second", &v)] {
                if s.get(name).map(Tensor::shape) != Some(p.shape()) {
                    return Err(Error::Checkpoint(format!("{which} moment of {name} missing or misshapen")));
                }
            }
        }
        if m.len() != params.len() || v.len() != params.len() {
            return Err(Error::Checkpoint("moments for unknown parameters".into()));
        }
        Ok(Checkpoint {
            model: header.model,
            train: header.train,
            vocab: header.vocab,
            labels: header.labels,
            params,
            optimizer: AdamW {
                settings: header.adam,
                t: header.adam_t,
                m,
                v,
            },
            step: header.step,
            val_history: header.val_history,
            best_val: header.best_val,
            bad_evals: header.bad_evals,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory cannot fail");
        buf
    }
}

fn write_u32(w: &mut impl Write, x: usize) -> Result<()> {
    let x = u32::try_from(x).map_err(|_| Error::Checkpoint(format!("{x} does not fit in 32 bits")))?;
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    Ok(buf)
}
