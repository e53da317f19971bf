use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters and ablation switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub d_model: usize,
    /// Depth of the general encoder.
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    /// Sentiment classes; also the number of sentiment-aware experts.
    pub n_sentiments: usize,
    /// Emotion classes; also the number of listener decoders.
    pub n_emotions: usize,
    /// Multiplier applied to current-turn embeddings.
    pub turn_weight: f64,
    pub max_len: usize,
    pub dropout: f64,
    pub use_weighted_concat: bool,
    pub use_sae: bool,
    pub use_sentiment_loss: bool,
    pub single_enc_dec: bool,
    /// Place the current turn ahead of the history in the encoder input.
    pub current_turn_first: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            embed_dim: 64,
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            ffn_dim: 256,
            n_sentiments: 2,
            n_emotions: 10,
            turn_weight: 2.5,
            max_len: 128,
            dropout: 0.1,
            use_weighted_concat: true,
            use_sae: true,
            use_sentiment_loss: true,
            single_enc_dec: false,
            current_turn_first: true,
        }
    }
}

impl ModelConfig {
    /// Full-size configuration with 300-d GloVe inputs.
    pub fn full_scale(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 300,
            d_model: 300,
            n_layers: 12,
            n_heads: 10,
            ffn_dim: 1200,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.vocab_size < 5 {
            return fail(format!("vocab_size {} leaves no room beyond the reserved tokens", self.vocab_size));
        }
        if self.embed_dim == 0 || self.d_model == 0 || self.ffn_dim == 0 || self.n_heads == 0 {
            return fail("dimensions must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.n_layers == 0 {
            return fail("n_layers must be at least 1".into());
        }
        if self.n_sentiments < 2 || self.n_emotions < 2 {
            return fail("need at least 2 sentiment and 2 emotion classes".into());
        }
        if !(self.turn_weight > 0.0 && self.turn_weight.is_finite()) {
            return fail(format!("turn_weight must be positive, got {}", self.turn_weight));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.max_len < 3 {
            return fail("max_len must be at least 3".into());
        }
        Ok(())
    }

    /// Turn weight actually applied, honoring the weighted-concat ablation.
    pub fn effective_turn_weight(&self) -> f64 {
        if self.use_weighted_concat {
            self.turn_weight
        } else {
            1.0
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let ok = ModelConfig {
            vocab_size: 20,
            ..ModelConfig::default()
        };
        ok.validate().unwrap();
        for bad in [
            ModelConfig { n_heads: 3, ..ok.clone() },
            ModelConfig { n_sentiments: 1, ..ok.clone() },
            ModelConfig { n_emotions: 1, ..ok.clone() },
            ModelConfig { turn_weight: 0.0, ..ok.clone() },
            ModelConfig { vocab_size: 4, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        ModelConfig::full_scale(30000).validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<ModelConfig>(r#"{"d_model": 8, "bogus": 1}"#);
        assert!(err.is_err());
        let cfg: ModelConfig = serde_json::from_str(r#"{"d_model": 8}"#).unwrap();
        assert_eq!(cfg.n_heads, 2);
    }

    #[test]
    fn weighted_concat_toggle() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.effective_turn_weight(), 2.5);
        let off = ModelConfig {
            use_weighted_concat: false,
            ..cfg
        };
        assert_eq!(off.effective_turn_weight(), 1.0);
    }
}
