use std::collections::BTreeMap;

use softmv::augment::CodeSwitchConfig;
use softmv::corpus::{LabeledDataset, Split};
use softmv::experiment::{few_shot_data, initial_model, run_single, Benchmark, RunConfig};
use softmv::model::TrainScope;
use softmv::objective::LossWeights;
use softmv::trainer::{epoch_batches, evaluate, train, TrainConfig};
use softmv::Error;

fn small() -> (RunConfig, Benchmark) {
    let mut cfg = RunConfig::default();
    cfg.model.d_model = 16;
    cfg.model.heads = 2;
    cfg.model.ffn_dim = 32;
    cfg.model.layers = 1;
    cfg.train.epochs = 4;
    let bench = cfg.data.load().unwrap();
    (cfg, bench)
}

#[test]
fn runs_are_deterministic() {
    let (cfg, bench) = small();
    let a = run_single(&cfg, &bench, 8, 2).unwrap();
    let b = run_single(&cfg, &bench, 8, 2).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.report, b.report);
    assert_eq!(a.model.fingerprint(), b.model.fingerprint());
    let c = run_single(&cfg, &bench, 8, 3).unwrap();
    assert_ne!(a.log.steps, c.log.steps);
}

/// Plain CE training written out by hand: forward, mean answer CE, backward,
/// Adam with decoupled decay.
#[test]
fn matches_reference_loop_without_augmentation() {
    let (mut cfg, bench) = small();
    cfg.train.epochs = 3;
    cfg.train.batch_size = 5;
    cfg.train.code_switch_rate = 0.0;
    cfg.train.loss_weights = LossWeights::new(1.0, 0.0, 0.0).unwrap();
    cfg.train.track_train_accuracy = false;
    let task = cfg.task(&bench).unwrap();
    let (train_set, dev_set) = few_shot_data(&bench, 8, 1).unwrap();
    let model = initial_model(&cfg, &task, 1).unwrap();
    let tc = TrainConfig {
        seed: 1,
        ..cfg.train.clone()
    };
    let (_, log) = train(model.clone(), &train_set, &dev_set, &task, &cfg.code_switch(&bench), &tc).unwrap();

    let mut m = model;
    let questions: Vec<_> = train_set.examples.iter().map(|e| task.question(e).unwrap()).collect();
    let langs: Vec<[u32; 3]> = task.verbalizer.iter().map(|v| v.ids()).collect();
    let n = m.num_params();
    let (mut mom, mut vel) = (vec![0.0f64; n], vec![0.0f64; n]);
    let mut totals = Vec::new();
    let mut t = 0;
    for epoch in 0..tc.epochs {
        for batch in epoch_batches(questions.len(), tc.batch_size, tc.seed, epoch) {
            let bsz = batch.len() as f64;
            let mut grads = vec![0.0; n];
            let mut loss = 0.0;
            for &i in &batch {
                let q = &questions[i];
                let cache = m.forward(q).unwrap();
                let mut dp = vec![0.0; cache.probs.len()];
                for ids in &langs {
                    let id = ids[q.label.index()] as usize;
                    let p = cache.probs[id].max(1e-12);
                    loss -= p.ln() / langs.len() as f64 / bsz;
                    dp[id] -= 1.0 / (p * langs.len() as f64 * bsz);
                }
                m.backward(&cache, &dp, &mut grads);
            }
            totals.push(loss);
            t += 1;
            let lr = tc.learning_rate;
            for i in 0..n {
                mom[i] = 0.9 * mom[i] + 0.1 * grads[i];
                vel[i] = 0.999 * vel[i] + 0.001 * grads[i] * grads[i];
                let mh = mom[i] / (1.0 - 0.9f64.powi(t));
                let vh = vel[i] / (1.0 - 0.999f64.powi(t));
                let p = m.params()[i];
                m.params_mut()[i] = p * (1.0 - lr * tc.weight_decay) - lr * mh / (vh.sqrt() + 1e-8);
            }
        }
    }
    assert_eq!(log.steps.len(), totals.len());
    for (rec, want) in log.steps.iter().zip(&totals) {
        assert!(
            (rec.total - want).abs() <= 1e-9 * want.abs().max(1.0),
            "step {}: {} vs {want}",
            rec.step,
            rec.total
        );
        assert_eq!(rec.augmented, 0.0);
        assert_eq!(rec.consistency, 0.0);
    }
}

#[test]
fn seventy_epochs_at_tiny_learning_rate_complete() {
    let (mut cfg, bench) = small();
    cfg.train.epochs = 70;
    cfg.train.learning_rate = 1e-5;
    cfg.train.code_switch_rate = 0.15;
    cfg.train.track_train_accuracy = false;
    let out = run_single(&cfg, &bench, 8, 1).unwrap();
    assert_eq!(out.log.epochs.len(), 70);
    assert!(out.log.epochs.iter().all(|e| (0.0..=1.0).contains(&e.dev_accuracy)));
    assert!(out.log.steps.iter().all(|s| s.total.is_finite()));
    assert!(out.log.steps.iter().any(|s| s.consistency > 0.0));
    assert!((1..=70).contains(&out.log.selected_epoch));
}

#[test]
fn loss_decreases_for_every_seed() {
    let (mut cfg, bench) = small();
    cfg.train.epochs = 70;
    cfg.train.track_train_accuracy = false;
    for seed in 1..=5 {
        let out = run_single(&cfg, &bench, 8, seed).unwrap();
        let first = out.log.epochs.first().unwrap().mean_loss;
        let last = out.log.epochs.last().unwrap().mean_loss;
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn selected_epoch_has_best_dev_accuracy() {
    let (cfg, bench) = small();
    let out = run_single(&cfg, &bench, 8, 4).unwrap();
    let best = out.log.epochs.iter().map(|e| e.dev_accuracy).fold(0.0, f64::max);
    let first_best = out.log.epochs.iter().find(|e| e.dev_accuracy == best).unwrap().epoch;
    assert_eq!(out.log.selected_epoch, first_best);
    assert!(!out.model.prompt_trainable());
}

#[test]
fn prompts_only_scope_keeps_encoder_fixed() {
    let (mut cfg, bench) = small();
    cfg.train.train_scope = TrainScope::PromptsOnly;
    let task = cfg.task(&bench).unwrap();
    let (train_set, dev_set) = few_shot_data(&bench, 4, 1).unwrap();
    let model = initial_model(&cfg, &task, 1).unwrap();
    let (trained, _) = train(model.clone(), &train_set, &dev_set, &task, &cfg.code_switch(&bench), &cfg.train).unwrap();
    let prompt = model.prompt_range();
    assert_eq!(&trained.params()[..prompt.start], &model.params()[..prompt.start]);
    assert_eq!(&trained.params()[prompt.end..], &model.params()[prompt.end..]);
    assert_ne!(&trained.params()[prompt.clone()], &model.params()[prompt]);
}

#[test]
fn empty_test_set_is_an_error_and_evaluation_is_pure() {
    let (cfg, bench) = small();
    let task = cfg.task(&bench).unwrap();
    let model = initial_model(&cfg, &task, 1).unwrap();
    let fp = model.fingerprint();
    let first = evaluate(&model, &bench.test_sets(), &task).unwrap();
    let second = evaluate(&model, &bench.test_sets(), &task).unwrap();
    assert_eq!(first, second);
    assert_eq!(model.fingerprint(), fp);

    let mut sets = BTreeMap::new();
    sets.insert("s9".to_string(), LabeledDataset::new(Split::Test, vec![]));
    match evaluate(&model, &sets, &task) {
        Err(Error::EmptyTestSet(lang)) => assert_eq!(lang, "s9"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn empty_training_set_is_rejected() {
    let (cfg, bench) = small();
    let task = cfg.task(&bench).unwrap();
    let model = initial_model(&cfg, &task, 1).unwrap();
    let (_, dev) = few_shot_data(&bench, 2, 1).unwrap();
    let empty = LabeledDataset::new(Split::Train, vec![]);
    assert!(train(model, &empty, &dev, &task, &CodeSwitchConfig::disabled(), &cfg.train).is_err());
}
