mod common;

use asem::corpus::{make_batches, EncodedExample};
use asem::decoding::BeamConfig;
use asem::eval::{corpus_losses, EvalSettings};
use asem::model::LossTerms;
use asem::training::{
    run_ablation, train_loop, train_step, AblationSetup, Checkpoint, TrainConfig,
};
use asem::Error;
use common::*;

fn start(toy: &Toy, train: TrainConfig) -> Checkpoint {
    Checkpoint::init(toy_model(toy, 16), train, toy.vocab.clone(), toy.labels.clone(), None).unwrap()
}

#[test]
fn loss_on_a_fixed_batch_decreases() {
    let toy = toy_corpus(10, 6, 10, 1);
    let mut state = start(&toy, TrainConfig { learning_rate: 1e-3, ..TrainConfig::default() });
    let batch = &make_batches(&toy.examples, 10, 40)[0];
    let first = train_step(&mut state, batch, LossTerms::default()).unwrap();
    let mut last = first;
    for _ in 1..50 {
        last = train_step(&mut state, batch, LossTerms::default()).unwrap();
    }
    assert!(last.total < first.total, "{} !< {}", last.total, first.total);
    assert_eq!(state.step, 50);
}

#[test]
fn zero_rates_keep_parameters_bit_identical() {
    let toy = toy_corpus(4, 3, 5, 2);
    let mut state = start(
        &toy,
        TrainConfig {
            learning_rate: 0.0,
            weight_decay: 0.0,
            ..TrainConfig::default()
        },
    );
    let before = state.params.clone();
    let batch = &make_batches(&toy.examples, 4, 40)[0];
    train_step(&mut state, batch, LossTerms::default()).unwrap();
    assert_eq!(state.params, before);
}

#[test]
fn non_finite_parameters_are_named() {
    let toy = toy_corpus(4, 3, 5, 2);
    let mut state = start(&toy, TrainConfig::default());
    state.params.get_mut("emotion.b").unwrap().data_mut()[0] = f32::NAN;
    let batch = &make_batches(&toy.examples, 4, 40)[0];
    match train_step(&mut state, batch, LossTerms::default()) {
        Err(Error::NonFinite { tensor, step: 0 }) => assert_eq!(tensor, "emotion.b"),
        other => panic!("unexpected {other:?}", other = other.map(|l| l.total)),
    }
}

#[test]
fn zero_steps_returns_the_initial_state() {
    let toy = toy_corpus(6, 3, 5, 3);
    let init = start(&toy, TrainConfig { max_steps: 0, ..TrainConfig::default() });
    let out = train_loop(init.clone(), &toy.examples, &toy.examples, |_| {}).unwrap();
    assert_eq!(out.best, init);
    assert_eq!(out.last, init);
    assert!(out.log.is_empty());
}

#[test]
fn empty_splits_are_rejected() {
    let toy = toy_corpus(6, 3, 5, 3);
    let init = start(&toy, TrainConfig::default());
    assert!(train_loop(init.clone(), &[], &toy.examples, |_| {}).is_err());
    assert!(train_loop(init, &toy.examples, &[], |_| {}).is_err());
}

/// Validation pairs the training contexts with other responses and labels,
/// so fitting the training set makes validation worse.
fn adversarial_valid(train: &[EncodedExample]) -> Vec<EncodedExample> {
    let n = train.len();
    (0..n)
        .map(|i| EncodedExample {
            response: train[(i + 1) % n].response.clone(),
            emotion: (train[i].emotion + 1) % 4,
            sentiment: 1 - train[i].sentiment,
            ..train[i].clone()
        })
        .collect()
}

#[test]
fn patience_one_stops_at_the_second_evaluation_when_validation_worsens() {
    let toy = toy_corpus(8, 4, 6, 4);
    let valid = adversarial_valid(&toy.examples);
    let init = start(
        &toy,
        TrainConfig {
            learning_rate: 3e-3,
            max_steps: 200,
            eval_every: 10,
            early_stop_patience: 1,
            batch_size: 8,
            ..TrainConfig::default()
        },
    );
    let out = train_loop(init, &toy.examples, &valid, |_| {}).unwrap();
    let vals: Vec<f64> = out.log.iter().filter_map(|r| r.val_total).collect();
    assert_eq!(vals.len(), 2, "{vals:?}");
    assert!(vals[1] >= vals[0]);
    assert_eq!(out.last.step, 20);
    assert_eq!(out.best.step, 10);
    assert_eq!(out.best.best_val, Some(vals[0]));
}

#[test]
fn best_checkpoint_holds_the_lowest_validation_loss() {
    let toy = toy_corpus(12, 4, 6, 5);
    let valid: Vec<EncodedExample> = adversarial_valid(&toy.examples).into_iter().take(4).collect();
    let init = start(
        &toy,
        TrainConfig {
            learning_rate: 1e-3,
            max_steps: 40,
            eval_every: 4,
            early_stop_patience: 3,
            batch_size: 4,
            ..TrainConfig::default()
        },
    );
    let out = train_loop(init, &toy.examples, &valid, |_| {}).unwrap();
    let best = out.best.best_val.unwrap();
    let min = out.last.val_history.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(best, min);
    let recomputed = corpus_losses(&out.best.params, &out.best.model, &valid, 4).unwrap();
    assert_eq!(recomputed.losses.total, best);
}

#[test]
fn resuming_continues_the_step_counter_and_trajectory() {
    let toy = toy_corpus(10, 4, 6, 6);
    let train = TrainConfig {
        learning_rate: 1e-3,
        max_steps: 12,
        eval_every: 6,
        early_stop_patience: 10,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let whole = train_loop(start(&toy, train.clone()), &toy.examples, &toy.examples, |_| {}).unwrap();

    let first = train_loop(
        start(&toy, TrainConfig { max_steps: 7, ..train.clone() }),
        &toy.examples,
        &toy.examples,
        |_| {},
    )
    .unwrap();
    let mut resumed = Checkpoint::read_from(&mut first.last.to_bytes().as_slice()).unwrap();
    assert_eq!(resumed.step, 7);
    resumed.train.max_steps = 12;
    let second = train_loop(resumed, &toy.examples, &toy.examples, |_| {}).unwrap();
    assert_eq!(second.last.step, 12);
    assert_eq!(second.log.first().unwrap().step, 8);
    assert_eq!(second.last.params, whole.last.params);
    assert_eq!(second.last.optimizer, whole.last.optimizer);
}

#[test]
fn sequential_schedule_trains_sentiment_first() {
    let toy = toy_corpus(8, 3, 5, 7);
    let init = start(
        &toy,
        TrainConfig {
            loss_schedule: asem::training::LossSchedule::SentimentThenEmotion,
            warmup_epochs: 1,
            batch_size: 4,
            max_steps: 4,
            ..TrainConfig::default()
        },
    );
    let out = train_loop(init, &toy.examples, &toy.examples, |_| {}).unwrap();
    // two batches per epoch
    for r in &out.log[..2] {
        assert_eq!((r.l2, r.l3), (0.0, 0.0));
        assert!(r.l1 > 0.0);
    }
    for r in &out.log[2..] {
        assert!(r.l2 > 0.0 && r.l3 > 0.0);
    }
}

fn setup<'a>(toy: &'a Toy, train: &'a [EncodedExample], valid: &'a [EncodedExample]) -> AblationSetup<'a> {
    AblationSetup {
        model: toy_model(toy, 8),
        train: TrainConfig {
            learning_rate: 1e-3,
            max_steps: 6,
            eval_every: 3,
            batch_size: 4,
            ..TrainConfig::default()
        },
        vocab: toy.vocab.clone(),
        labels: toy.labels.clone(),
        embeddings: None,
        train_set: train,
        valid_set: valid,
        test_set: valid,
        eval: EvalSettings {
            batch_size: 4,
            beam: BeamConfig {
                width: 2,
                max_new_tokens: 5,
                ..BeamConfig::default()
            },
            exclude: vec![],
        },
    }
}

#[test]
fn ablation_runs() {
    let toy = toy_corpus(8, 3, 5, 8);
    let (train, valid) = toy.examples.split_at(6);
    let s = setup(&toy, train, valid);

    let r = run_ablation("no_sentiment_loss", &s).unwrap();
    assert!(r.variant.log.iter().all(|l| l.l1 == 0.0));
    assert!(r.full.log.iter().all(|l| l.l1 > 0.0));

    let r = run_ablation("one_enc_dec", &s).unwrap();
    assert!(r.variant.parameters < r.full.parameters);

    let r = run_ablation("no_sae", &s).unwrap();
    assert_ne!(r.full.best_val_total, r.variant.best_val_total);

    assert!(matches!(run_ablation("no_meta", &s), Err(Error::UnknownAblation(_))));
}
