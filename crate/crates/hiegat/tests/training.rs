//! End-to-end training behavior on synthetic corpora.

mod common;

use common::{sample_loss, synth_corpus, tiny_config};
use hiegat::model::{compute_lambda, HieGat, LambdaRule};
use hiegat::optim::{extract_sample_grads, GradBuffers, Optimizer, OptimizerKind};
use hiegat::tensor::Tape;
use hiegat::text::Split;
use hiegat::train::{cross_entropy_loss, evaluate, prepare, run_ablation_grid, train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn quick_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        learning_rate: 5e-3,
        max_epochs: 40,
        patience: 40,
        validation_fraction: 0.1,
        lambda_override: None,
        optimizer: OptimizerKind::Adam,
        clip_norm: Some(5.0),
        seed,
    }
}

#[test]
fn overfits_a_small_synthetic_set() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), 48, 16, 2, 3);
    let mut model = HieGat::new(tiny_config(2, 16, 3), corpus.vocab.size()).unwrap();
    let report = train(&mut model, &corpus, &quick_train_config(3)).unwrap();

    let train_idx = corpus.split_indices(Split::Train);
    let train_set = prepare(&corpus, &model.config, &train_idx).unwrap();
    let eval = evaluate(&model, &train_set).unwrap();
    assert!(
        eval.accuracy >= 0.95,
        "train accuracy {} after {} epochs",
        eval.accuracy,
        report.epochs.len()
    );
    // bookkeeping identities: accuracy is correct/total, per-class counts
    // partition the set
    assert_eq!(eval.total, train_set.labels.len());
    assert_eq!(
        eval.per_class.iter().map(|(c, _)| c).sum::<usize>(),
        eval.correct
    );
    assert_eq!(
        eval.per_class.iter().map(|(_, t)| t).sum::<usize>(),
        eval.total
    );
    assert!((eval.accuracy - eval.correct as f64 / eval.total as f64).abs() < 1e-15);
}

#[test]
fn training_is_deterministic_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), 24, 8, 2, 5);
    let cfg = TrainConfig {
        max_epochs: 3,
        ..quick_train_config(42)
    };

    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let mut model = HieGat::new(tiny_config(2, 12, 42), corpus.vocab.size()).unwrap();
            train(&mut model, &corpus, &cfg).unwrap()
        })
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.epochs.len(), b.epochs.len());
    for (x, y) in a.epochs.iter().zip(&b.epochs) {
        assert_eq!(
            x.train_loss.to_bits(),
            y.train_loss.to_bits(),
            "loss curves diverge"
        );
        assert_eq!(x.val_accuracy.to_bits(), y.val_accuracy.to_bits());
    }
    assert_eq!(a.test_accuracy.to_bits(), b.test_accuracy.to_bits());
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), 20, 10, 2, 9);
    let config = tiny_config(2, 10, 9);
    let mut model = HieGat::new(config.clone(), corpus.vocab.size()).unwrap();
    let before = model.params.snapshot();

    let test_idx = corpus.split_indices(Split::Test);
    let test_set = prepare(&corpus, &model.config, &test_idx).unwrap();
    let untrained_acc = evaluate(&model, &test_set).unwrap().accuracy;

    let cfg = TrainConfig {
        learning_rate: 0.0,
        max_epochs: 2,
        ..quick_train_config(9)
    };
    let report = train(&mut model, &corpus, &cfg).unwrap();
    let after = model.params.snapshot();
    for (b, a) in before.iter().zip(&after) {
        assert_eq!(b, a, "parameters changed under zero learning rate");
    }
    assert_eq!(report.test_accuracy, untrained_acc);
}

#[test]
fn one_optimizer_step_decreases_single_sample_loss() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), 8, 2, 2, 13);
    let mut config = tiny_config(2, 10, 13);
    config.dropout = 0.0;

    let idx = corpus.split_indices(Split::Train);
    let set = prepare(&corpus, &config, &[idx[0]]).unwrap();
    let graphs = &set.graphs[0];
    let label = set.labels[0];
    let lambda = compute_lambda(graphs.sentence_count as f64).unwrap();

    for lr in [1e-3, 1e-4, 1e-5] {
        let mut model = HieGat::new(config.clone(), corpus.vocab.size()).unwrap();
        let before = sample_loss(&model, graphs, label, &lambda);

        let mut tape = Tape::new();
        let mut binds = hiegat::gat::TapeBindings::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model
            .forward_sample(&mut tape, &mut binds, graphs, &lambda, false, &mut rng)
            .unwrap();
        let picked = tape.pick(out.yhat, label).unwrap();
        let loss = tape.scale(picked, -1.0);
        tape.backward(loss).unwrap();
        let sample = extract_sample_grads(&tape, &binds);
        let mut grads = GradBuffers::new(&model.params);
        grads.add_sample(&sample, 1.0);
        let mut opt = Optimizer::new(OptimizerKind::Adam, lr, &model.params);
        opt.step(&mut model.params, &grads);

        let after = sample_loss(&model, graphs, label, &lambda);
        assert!(
            after < before,
            "loss did not decrease at lr {lr}: {before} -> {after}"
        );
    }
}

#[test]
fn batch_loss_is_mean_of_sample_losses() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), 6, 2, 2, 17);
    let mut config = tiny_config(2, 8, 17);
    config.dropout = 0.0;
    let model = HieGat::new(config.clone(), corpus.vocab.size()).unwrap();

    let idx = corpus.split_indices(Split::Train);
    let set = prepare(&corpus, &config, &idx).unwrap();

    // per-sample losses and a stacked log-prob matrix through the public op
    let mut singles = Vec::new();
    let mut tape = Tape::new();
    let mut rows = Vec::new();
    for (graphs, &label) in set.graphs.iter().zip(&set.labels) {
        let lambda = compute_lambda(graphs.sentence_count as f64).unwrap();
        let mut binds = hiegat::gat::TapeBindings::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model
            .forward_sample(&mut tape, &mut binds, graphs, &lambda, false, &mut rng)
            .unwrap();
        let picked = tape.pick(out.yhat, label).unwrap();
        let l = tape.scale(picked, -1.0);
        singles.push(tape.value(l)[0]);
        rows.push(out.yhat);
    }
    let stacked = tape.stack_rows(&rows).unwrap();
    let batch_loss = cross_entropy_loss(&mut tape, stacked, &set.labels).unwrap();
    let mean = singles.iter().sum::<f64>() / singles.len() as f64;
    assert!((tape.value(batch_loss)[0] - mean).abs() < 1e-10);
}

#[test]
fn early_stopping_keeps_the_best_validation_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), 40, 12, 2, 21);
    let mut model = HieGat::new(tiny_config(2, 12, 21), corpus.vocab.size()).unwrap();
    let cfg = TrainConfig {
        max_epochs: 25,
        patience: 5,
        ..quick_train_config(21)
    };
    let report = train(&mut model, &corpus, &cfg).unwrap();
    let best_seen = report
        .epochs
        .iter()
        .map(|e| e.val_accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(report.best_val_accuracy, best_seen);
    assert!(report.epochs[report.best_epoch].val_accuracy == best_seen);
}

#[test]
fn untrained_model_on_balanced_set_is_near_chance() {
    // a rich token pool keeps per-seed accuracy from being dominated by a
    // handful of shared class-mean embeddings
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::synth_corpus_with_pool(dir.path(), 4, 400, 2, 23, 48);
    let test_idx = corpus.split_indices(Split::Test);
    let mut accs = Vec::new();
    for seed in 1..=20 {
        let model = HieGat::new(tiny_config(2, 8, seed), corpus.vocab.size()).unwrap();
        let set = prepare(&corpus, &model.config, &test_idx).unwrap();
        accs.push(evaluate(&model, &set).unwrap().accuracy);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!(
        (0.45..=0.55).contains(&mean),
        "mean accuracy over seeds: {mean} ({accs:?})"
    );
}

#[test]
fn ablation_row_matches_equivalent_fixed_override_run() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), 24, 12, 2, 29);
    let config = tiny_config(2, 10, 29);
    let cfg = TrainConfig {
        max_epochs: 5,
        ..quick_train_config(29)
    };

    let grid = run_ablation_grid(&corpus, &config, &cfg, &["d_only"]).unwrap();

    let mut model = HieGat::new(config, corpus.vocab.size()).unwrap();
    let cfg_override = TrainConfig {
        lambda_override: Some([1.0, 0.0, 0.0]),
        ..cfg
    };
    let report = train(&mut model, &corpus, &cfg_override).unwrap();
    assert_eq!(grid.rows[0].test_accuracy, report.test_accuracy);
    assert!(matches!(model.config.lambda_rule, LambdaRule::Fixed { d, .. } if d == 1.0));
}

#[test]
fn divergence_is_reported_as_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), 12, 4, 2, 31);
    let mut model = HieGat::new(tiny_config(2, 8, 31), corpus.vocab.size()).unwrap();
    // poison a projection weight so the very first batch loss is NaN
    let id = model.params.find("proj.doc.w").unwrap();
    model.params.value_mut(id)[0] = f64::NAN;
    let cfg = TrainConfig {
        max_epochs: 2,
        clip_norm: None,
        ..quick_train_config(31)
    };
    match train(&mut model, &corpus, &cfg) {
        Err(hiegat::HiegatError::Diverged { .. }) => {}
        other => panic!("expected divergence error, got {other:?}"),
    }
}

#[test]
fn train_rejects_invalid_configs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path(), 8, 2, 2, 37);
    let mut model = HieGat::new(tiny_config(2, 8, 37), corpus.vocab.size()).unwrap();
    let bad_batch = TrainConfig {
        batch_size: 0,
        ..quick_train_config(37)
    };
    assert!(train(&mut model, &corpus, &bad_batch).is_err());
    let bad_frac = TrainConfig {
        validation_fraction: 0.9,
        ..quick_train_config(37)
    };
    assert!(train(&mut model, &corpus, &bad_frac).is_err());
    let bad_lambda = TrainConfig {
        lambda_override: Some([0.5, 0.2, 0.2]),
        ..quick_train_config(37)
    };
    assert!(train(&mut model, &corpus, &bad_lambda).is_err());
}
