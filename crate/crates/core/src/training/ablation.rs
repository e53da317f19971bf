use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{train_loop, Checkpoint, LogRecord, TrainConfig};
use crate::corpus::{EmbeddingTable, EncodedExample, LabelSpace, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{embedding_table, evaluate, EvalSettings, Evaluation};
use crate::model::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NoWeightedConcat,
    OneEncDec,
    NoSentimentLoss,
    NoSae,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::NoWeightedConcat,
        Ablation::OneEncDec,
        Ablation::NoSentimentLoss,
        Ablation::NoSae,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoWeightedConcat => "no_weighted_concat",
            Ablation::OneEncDec => "one_enc_dec",
            Ablation::NoSentimentLoss => "no_sentiment_loss",
            Ablation::NoSae => "no_sae",
        }
    }

    /// `cfg` with the corresponding switch flipped.
    pub fn apply(self, cfg: &ModelConfig) -> ModelConfig {
        let mut c = cfg.clone();
        match self {
            Ablation::NoWeightedConcat => c.use_weighted_concat = false,
            Ablation::OneEncDec => c.single_enc_dec = true,
            Ablation::NoSentimentLoss => c.use_sentiment_loss = false,
            Ablation::NoSae => c.use_sae = false,
        }
        c
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownAblation(s.to_string()))
    }
}

/// Everything shared by the runs of an ablation study.
pub struct AblationSetup<'a> {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab: Vocabulary,
    pub labels: LabelSpace,
    pub embeddings: Option<&'a EmbeddingTable>,
    pub train_set: &'a [EncodedExample],
    pub valid_set: &'a [EncodedExample],
    pub test_set: &'a [EncodedExample],
    pub eval: EvalSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: String,
    pub parameters: usize,
    pub steps: u64,
    pub best_val_total: Option<f64>,
    pub evaluation: Evaluation,
    pub log: Vec<LogRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub ablation: String,
    pub full: VariantReport,
    pub variant: VariantReport,
}

fn train_variant(setup: &AblationSetup<'_>, name: &str, model: ModelConfig) -> Result<VariantReport> {
    log::info!("training variant {name}");
    let init = Checkpoint::init(
        model,
        setup.train.clone(),
        setup.vocab.clone(),
        setup.labels.clone(),
        setup.embeddings,
    )?;
    let outcome = train_loop(init, setup.train_set, setup.valid_set, |_| {})?;
    let best = outcome.best;
    let table = match setup.embeddings {
        Some(t) => t.clone(),
        None => embedding_table(&best.params),
    };
    let evaluation = evaluate(
        &best.params,
        &best.model,
        setup.test_set,
        &setup.labels,
        &setup.vocab,
        &table,
        &setup.eval,
    )?;
    Ok(VariantReport {
        name: name.to_string(),
        parameters: best.params.num_elements(),
        steps: outcome.last.step,
        best_val_total: best.best_val,
        evaluation,
        log: outcome.log,
    })
}

/// Trains the full model once, then every named variant from the same
/// seed. The first report is the full model. Names are checked before any
/// training starts.
pub fn run_ablations(names: &[&str], setup: &AblationSetup<'_>) -> Result<Vec<VariantReport>> {
    let ablations = names.iter().map(|n| n.parse()).collect::<Result<Vec<Ablation>>>()?;
    setup.model.validate()?;
    setup.train.validate()?;
    let mut reports = vec![train_variant(setup, "full", setup.model.clone())?];
    for a in ablations {
        reports.push(train_variant(setup, a.name(), a.apply(&setup.model))?);
    }
    Ok(reports)
}

/// Full model against one ablated variant.
pub fn run_ablation(name: &str, setup: &AblationSetup<'_>) -> Result<AblationReport> {
    let mut reports = run_ablations(&[name], setup)?;
    let variant = reports.pop().expect("variant report");
    let full = reports.pop().expect("full report");
    Ok(AblationReport {
        ablation: name.to_string(),
        full,
        variant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip_and_unknown_rejected() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert!(matches!("no_listeners".parse::<Ablation>(), Err(Error::UnknownAblation(n)) if n == "no_listeners"));
    }

    #[test]
    fn each_flips_one_switch() {
        let base = ModelConfig::default();
        assert!(!Ablation::NoWeightedConcat.apply(&base).use_weighted_concat);
        assert!(Ablation::OneEncDec.apply(&base).single_enc_dec);
        assert!(!Ablation::NoSentimentLoss.apply(&base).use_sentiment_loss);
        assert!(!Ablation::NoSae.apply(&base).use_sae);
        let c = Ablation::NoSae.apply(&base);
        assert_eq!(ModelConfig { use_sae: true, ..c }, base);
    }
}
