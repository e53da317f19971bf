//! Initialization, optimization, early stopping, checkpoints and ablations.

mod ablation;
mod checkpoint;
mod init;
mod optim;

pub use ablation::{run_ablation, run_ablations, Ablation, AblationReport, AblationSetup, VariantReport};
pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use init::{init_params, xavier_bound};
pub use optim::{clip_grad_norm, grad_norm, AdamW, AdamWSettings};

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::corpus::{Batch, EncodedExample};
use crate::error::{Error, Result};
use crate::eval::corpus_losses;
use crate::model::{forward, ForwardOptions, LossBundle, LossTerms};
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSchedule {
    /// All three losses from the first step.
    #[default]
    Joint,
    /// Sentiment loss alone for `warmup_epochs`, then all three.
    SentimentThenEmotion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_steps: u64,
    pub batch_size: usize,
    /// Non-improving validations tolerated before stopping.
    pub early_stop_patience: usize,
    pub eval_every: u64,
    pub seed: u64,
    pub loss_schedule: LossSchedule,
    pub warmup_epochs: u64,
    pub clip_grad: bool,
    pub max_grad_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 0.01,
            max_steps: 500,
            batch_size: 16,
            early_stop_patience: 3,
            eval_every: 50,
            seed: 0,
            loss_schedule: LossSchedule::Joint,
            warmup_epochs: 1,
            clip_grad: true,
            max_grad_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and non-negative");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.early_stop_patience == 0 {
            return fail("early_stop_patience must be at least 1");
        }
        if self.eval_every == 0 {
            return fail("eval_every must be at least 1");
        }
        if self.clip_grad && (self.max_grad_norm.is_nan() || self.max_grad_norm <= 0.0) {
            return fail("max_grad_norm must be positive");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWSettings {
        AdamWSettings::new(self.learning_rate, self.weight_decay)
    }

    /// Loss terms active during `epoch`.
    pub fn terms_at(&self, epoch: u64) -> LossTerms {
        match self.loss_schedule {
            LossSchedule::SentimentThenEmotion if epoch < self.warmup_epochs => LossTerms {
                sentiment: true,
                emotion: false,
                response: false,
            },
            _ => LossTerms::default(),
        }
    }
}

/// One training-log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
    pub val_total: Option<f64>,
}

/// One AdamW update on the gradient of the total loss of `batch`. The
/// checkpoint's step counter advances by one.
pub fn train_step(state: &mut Checkpoint, batch: &Batch, terms: LossTerms) -> Result<LossBundle> {
    let step = state.step;
    let non_finite = |tensor: String| Error::NonFinite { tensor, step };
    if let Some(name) = state.params.first_non_finite() {
        return Err(non_finite(name.to_string()));
    }
    let dropout_seed = (state.model.dropout > 0.0)
        .then(|| rng::derive(state.train.seed, &format!("dropout.{step}")).next_u64());
    let opts = ForwardOptions {
        terms,
        dropout_seed,
        with_grads: true,
    };
    let out = forward(&state.params, &state.model, batch, &opts)?;
    if !out.losses.total.is_finite() {
        let name = if !out.trace.is_finite() { "activations" } else { "loss" };
        return Err(non_finite(name.to_string()));
    }
    let mut grads = out.grads.unwrap_or_default();
    if let Some(name) = grads.first_non_finite() {
        return Err(non_finite(format!("grad {name}")));
    }
    if state.train.clip_grad {
        clip_grad_norm(&mut grads, state.train.max_grad_norm);
    }
    state.optimizer.step(&mut state.params, &grads);
    state.step += 1;
    if let Some(name) = state.params.first_non_finite() {
        return Err(non_finite(name.to_string()));
    }
    Ok(out.losses)
}

/// Example order for `epoch`.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::derive(seed, &format!("shuffle.{epoch}")));
    order
}

pub struct TrainOutcome {
    /// State at the best validation loss (the starting state when no
    /// validation ran).
    pub best: Checkpoint,
    /// State when training stopped.
    pub last: Checkpoint,
    pub log: Vec<LogRecord>,
}

/// Trains from `state` until `max_steps` or early stopping. Batches follow
/// a seeded shuffle per epoch; every `eval_every` steps (and after the final
/// step) the validation total loss is computed.
pub fn train_loop(
    mut state: Checkpoint,
    train: &[EncodedExample],
    valid: &[EncodedExample],
    mut on_log: impl FnMut(&LogRecord),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if valid.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    state.model.validate()?;
    state.train.validate()?;
    let tcfg = state.train.clone();
    let bs = tcfg.batch_size;
    let per_epoch = train.len().div_ceil(bs) as u64;
    let mut best = state.clone();
    let mut log = Vec::new();
    let mut order: Option<(u64, Vec<usize>)> = None;

    while state.step < tcfg.max_steps && state.bad_evals < tcfg.early_stop_patience {
        let (epoch, pos) = (state.step / per_epoch, (state.step % per_epoch) as usize);
        if order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            order = Some((epoch, epoch_order(tcfg.seed, epoch, train.len())));
        }
        let idx = &order.as_ref().unwrap().1;
        let chunk: Vec<&EncodedExample> = idx[pos * bs..((pos + 1) * bs).min(idx.len())]
            .iter()
            .map(|&i| &train[i])
            .collect();
        let batch = Batch::from_examples(&chunk, state.model.max_len);
        let losses = train_step(&mut state, &batch, tcfg.terms_at(epoch))?;

        let mut record = LogRecord {
            step: state.step,
            l1: losses.l1,
            l2: losses.l2,
            l3: losses.l3,
            total: losses.total,
            val_total: None,
        };
        if state.step.is_multiple_of(tcfg.eval_every) || state.step == tcfg.max_steps {
            let val = corpus_losses(&state.params, &state.model, valid, bs)?.losses.total;
            record.val_total = Some(val);
            state.val_history.push(val);
            if state.best_val.is_none_or(|b| val < b) {
                state.best_val = Some(val);
                state.bad_evals = 0;
                best = state.clone();
            } else {
                state.bad_evals += 1;
            }
            log::info!("step {} train {:.4} val {:.4}", state.step, losses.total, val);
        }
        on_log(&record);
        log.push(record);
    }
    if state.bad_evals >= tcfg.early_stop_patience {
        log::info!("early stop at step {}", state.step);
    }
    // the best snapshot carries the full history for inspection
    best.val_history = state.val_history.clone();
    Ok(TrainOutcome { best, last: state, log })
}
