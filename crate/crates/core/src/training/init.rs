use rand::Rng;

use crate::autograd::Tensor;
use crate::corpus::{EmbeddingTable, PAD};
use crate::error::{Error, Result};
use crate::model::{param_layout, ModelConfig, ParamKind, ParameterStore};
use crate::rng;

/// Bound of the Xavier-uniform distribution for a `[fan_in, fan_out]` matrix.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Fresh parameters. Matrices are Xavier-uniform, biases zero, layer-norm
/// gains one. Each tensor draws from its own stream keyed by name, so
/// experts and listeners start from different weights. The embedding is
/// copied from `embeddings` when given; the PAD row is always zero.
pub fn init_params(
    cfg: &ModelConfig,
    seed: u64,
    embeddings: Option<&EmbeddingTable>,
) -> Result<ParameterStore<f32>> {
    cfg.validate()?;
    let mut store = ParameterStore::new();
    for spec in param_layout(cfg) {
        let n: usize = spec.shape.iter().product();
        let data = match spec.kind {
            ParamKind::Bias => vec![0.0; n],
            ParamKind::Gain => vec![1.0; n],
            ParamKind::Embedding if embeddings.is_some() => {
                let table = embeddings.unwrap();
                if table.rows() != cfg.vocab_size || table.dim() != cfg.embed_dim {
                    return Err(Error::Config(format!(
                        "embedding table is {}x{}, model expects {}x{}",
                        table.rows(),
                        table.dim(),
                        cfg.vocab_size,
                        cfg.embed_dim
                    )));
                }
                table.data().to_vec()
            }
            ParamKind::Embedding | ParamKind::Weight => {
                let bound = xavier_bound(spec.shape[0], spec.shape[1]);
                let mut r = rng::derive(seed, &format!("init.{}", spec.name));
                (0..n).map(|_| r.gen_range(-bound..bound) as f32).collect()
            }
        };
        let mut t = Tensor::new(spec.shape.clone(), data);
        if spec.kind == ParamKind::Embedding {
            let dim = cfg.embed_dim;
            t.data_mut()[PAD * dim..(PAD + 1) * dim].fill(0.0);
        }
        store.insert(spec.name, t);
    }
    Ok(store)
}
