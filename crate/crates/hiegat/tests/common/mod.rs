#![allow(dead_code)]

//! Shared helpers for the integration test suites.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hiegat::gat::TapeBindings;
use hiegat::gradcheck::{central_diff, max_rel_error};
use hiegat::graph::{build_sample_graphs, SampleGraphs};
use hiegat::model::{compute_lambda, HieGat, HieGnnConfig, LambdaWeights, LevelConfig};
use hiegat::tensor::Tape;
use hiegat::text::{ingest_corpus, Corpus, DocumentRecord, SentenceMode, Split};

/// Root of the benchmark data layout: `$HIEGAT_DATA_DIR`, else `data/`
/// next to the workspace root.
pub fn data_dir() -> PathBuf {
    if let Ok(dir) = std::env::var("HIEGAT_DATA_DIR") {
        return PathBuf::from(dir);
    }
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Loads one of the benchmark corpora if its files are present.
pub fn load_dataset(name: &str) -> Option<Corpus> {
    let dir = data_dir();
    let meta = dir.join(format!("{name}.txt"));
    let text = dir.join("corpus").join(format!("{name}.clean.txt"));
    if !meta.exists() || !text.exists() {
        return None;
    }
    let mode = match name {
        "mr" => SentenceMode::Punct,
        _ => SentenceMode::Chunk(12),
    };
    Some(ingest_corpus(&meta, &text, mode).expect("benchmark corpus should ingest"))
}

pub fn require_dataset(name: &str) -> Corpus {
    load_dataset(name).unwrap_or_else(|| {
        panic!(
            "benchmark corpus '{name}' not found under {} — see README for data setup",
            data_dir().display()
        )
    })
}

/// Writes a small synthetic, linearly separable corpus to `dir` and ingests
/// it. Class tokens dominate each document; sentences are punct-separated.
pub fn synth_corpus(dir: &Path, train: usize, test: usize, classes: usize, seed: u64) -> Corpus {
    synth_corpus_with_pool(dir, train, test, classes, seed, 8)
}

/// As [`synth_corpus`] with a configurable token-pool size per class.
pub fn synth_corpus_with_pool(
    dir: &Path,
    train: usize,
    test: usize,
    classes: usize,
    seed: u64,
    pool: usize,
) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut meta = String::new();
    let mut text = String::new();
    let write_doc =
        |i: usize, split: &str, meta: &mut String, text: &mut String, rng: &mut ChaCha8Rng| {
            let class = i % classes;
            meta.push_str(&format!("doc{split}{i}\t{split}\tclass{class}\n"));
            let sentences = rng.gen_range(1..=3);
            let mut doc = String::new();
            for s in 0..sentences {
                if s > 0 {
                    doc.push(' ');
                }
                let words = rng.gen_range(3..=6);
                for w in 0..words {
                    if w > 0 {
                        doc.push(' ');
                    }
                    if rng.gen::<f64>() < 0.75 {
                        doc.push_str(&format!("c{class}w{}", rng.gen_range(0..pool)));
                    } else {
                        doc.push_str(&format!("sh{}", rng.gen_range(0..pool)));
                    }
                }
                doc.push('.');
            }
            text.push_str(&doc);
            text.push('\n');
        };
    for i in 0..train {
        write_doc(i, "train", &mut meta, &mut text, &mut rng);
    }
    for i in 0..test {
        write_doc(i, "test", &mut meta, &mut text, &mut rng);
    }
    let meta_path = dir.join("meta.txt");
    let text_path = dir.join("text.txt");
    fs::write(&meta_path, meta).unwrap();
    fs::write(&text_path, text).unwrap();
    ingest_corpus(&meta_path, &text_path, SentenceMode::Punct).unwrap()
}

/// Small model configuration for fast end-to-end tests; keeps the
/// 3-layer/3-head document stack structure.
pub fn tiny_config(num_classes: usize, embedding_dim: usize, seed: u64) -> HieGnnConfig {
    HieGnnConfig {
        embedding_dim,
        seed,
        ..HieGnnConfig::with_classes(num_classes)
    }
}

/// A two-sentence, six-token document plus the weights for its sentence
/// count; the standard subject of the end-to-end gradient checks.
pub fn toy_sample() -> (DocumentRecord, SampleGraphs, LambdaWeights) {
    let doc = DocumentRecord {
        doc_id: "toy".into(),
        split: Split::Train,
        label_id: 1,
        tokens: vec![1, 2, 3, 4, 2, 5],
        sentence_spans: vec![(0, 3), (3, 6)],
        surface_len: 6,
    };
    let config = tiny_config(2, 6, 7);
    let graphs = build_sample_graphs(&doc, config.windows()).unwrap();
    let lambda = compute_lambda(graphs.sentence_count as f64).unwrap();
    (doc, graphs, lambda)
}

pub fn toy_model() -> HieGat {
    let mut config = tiny_config(2, 6, 7);
    config.dropout = 0.0;
    HieGat::new(config, 9).unwrap()
}

/// Negative log-probability of `label` for one sample, evaluation mode.
pub fn sample_loss(
    model: &HieGat,
    graphs: &SampleGraphs,
    label: usize,
    lambda: &LambdaWeights,
) -> f64 {
    let mut tape = Tape::new();
    let mut binds = TapeBindings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model
        .forward_sample(&mut tape, &mut binds, graphs, lambda, false, &mut rng)
        .unwrap();
    let picked = tape.pick(out.yhat, label).unwrap();
    let loss = tape.scale(picked, -1.0);
    tape.value(loss)[0]
}

/// Checks every parameter gradient of the model against central finite
/// differences on one sample. Returns the worst relative error.
pub fn model_grad_max_rel_error(
    model: &mut HieGat,
    graphs: &SampleGraphs,
    label: usize,
    lambda: &LambdaWeights,
) -> f64 {
    use hiegat::optim::{extract_sample_grads, GradBuffers};

    // analytic gradients
    let mut tape = Tape::new();
    let mut binds = TapeBindings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model
        .forward_sample(&mut tape, &mut binds, graphs, lambda, false, &mut rng)
        .unwrap();
    let picked = tape.pick(out.yhat, label).unwrap();
    let loss = tape.scale(picked, -1.0);
    tape.backward(loss).unwrap();
    let sample = extract_sample_grads(&tape, &binds);
    let mut grads = GradBuffers::new(&model.params);
    grads.add_sample(&sample, 1.0);

    let param_ids: Vec<_> = model.params.iter().map(|(id, _)| id).collect();
    let mut worst: f64 = 0.0;
    for id in param_ids {
        let analytic = grads.get(id).to_vec();
        let base = model.params.get(id).value.as_ref().clone();
        let mut f = |x: &[f64]| -> f64 {
            *model.params.value_mut(id) = x.to_vec();
            sample_loss(model, graphs, label, lambda)
        };
        let numeric = central_diff(&mut f, &base, 1e-6);
        *model.params.value_mut(id) = base;
        let err = max_rel_error(&analytic, &numeric, 1e-6);
        worst = worst.max(err);
    }
    worst
}

/// Asserts that the level configuration matches the default topology the
/// tests rely on (3-layer/3-head document stack).
pub fn assert_default_topology(config: &HieGnnConfig) {
    assert_eq!(
        config.word,
        LevelConfig {
            layers: 1,
            heads: 1,
            window: 2
        }
    );
    assert_eq!(
        config.sen,
        LevelConfig {
            layers: 1,
            heads: 1,
            window: 2
        }
    );
    assert_eq!(
        config.doc,
        LevelConfig {
            layers: 3,
            heads: 3,
            window: 2
        }
    );
}

// ── finite-difference harness for tape operations ───────────────────

use hiegat::tensor::TensorId;
use std::sync::Arc;

/// Reduces any op output to a scalar through a smooth elementwise map so
/// every output entry influences the loss.
pub fn scalarize(tape: &mut Tape, out: TensorId) -> TensorId {
    let smooth = tape.elu(out);
    tape.mean_all(smooth).unwrap()
}

/// Checks analytic gradients of `build` against central differences for
/// each listed input; panics with the op name on mismatch.
pub fn fd_check(
    name: &str,
    inputs: &[(Vec<usize>, Vec<f64>)],
    grad_inputs: &[usize],
    build: impl Fn(&mut Tape, &[TensorId]) -> TensorId,
) {
    let run = |datasets: &[Vec<f64>]| -> (Tape, Vec<TensorId>, TensorId) {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = inputs
            .iter()
            .enumerate()
            .map(|(i, (shape, _))| {
                tape.leaf(shape.clone(), datasets[i].clone(), grad_inputs.contains(&i))
                    .unwrap()
            })
            .collect();
        let out = build(&mut tape, &ids);
        let loss = scalarize(&mut tape, out);
        (tape, ids, loss)
    };

    let base: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| d.clone()).collect();
    let (mut tape, ids, loss) = run(&base);
    tape.backward(loss).unwrap();

    for &gi in grad_inputs {
        let analytic = tape.grad(ids[gi]).unwrap().to_vec();
        let mut f = |x: &[f64]| -> f64 {
            let mut probe = base.clone();
            probe[gi] = x.to_vec();
            let (t, _, l) = run(&probe);
            t.value(l)[0]
        };
        let numeric = central_diff(&mut f, &base[gi], 1e-6);
        let err = max_rel_error(&analytic, &numeric, 1e-6);
        assert!(err < 1e-4, "{name} input {gi}: max relative error {err}");
    }
}

pub fn randoms(seed: u64, n: usize, scale: f64, offset: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (rng.gen::<f64>() - 0.5) * scale + offset)
        .collect()
}

/// Finite-difference check of every differentiable tape operation.
pub fn op_gradient_suite() {
    fd_check(
        "matmul",
        &[
            (vec![3, 4], randoms(1, 12, 2.0, 0.1)),
            (vec![4, 2], randoms(2, 8, 2.0, -0.1)),
        ],
        &[0, 1],
        |t, ids| t.matmul(ids[0], ids[1]).unwrap(),
    );
    fd_check(
        "matvec",
        &[
            (vec![3, 4], randoms(3, 12, 2.0, 0.2)),
            (vec![4], randoms(4, 4, 2.0, 0.0)),
        ],
        &[0, 1],
        |t, ids| t.matvec(ids[0], ids[1]).unwrap(),
    );
    fd_check(
        "vecmat",
        &[
            (vec![4], randoms(5, 4, 2.0, 0.0)),
            (vec![4, 3], randoms(6, 12, 2.0, 0.2)),
        ],
        &[0, 1],
        |t, ids| t.vecmat(ids[0], ids[1]).unwrap(),
    );
    fd_check(
        "add",
        &[
            (vec![5], randoms(7, 5, 2.0, 0.3)),
            (vec![5], randoms(8, 5, 2.0, -0.3)),
        ],
        &[0, 1],
        |t, ids| t.add(ids[0], ids[1]).unwrap(),
    );
    fd_check(
        "scale",
        &[(vec![4], randoms(9, 4, 2.0, 0.1))],
        &[0],
        |t, ids| t.scale(ids[0], -1.7),
    );
    // inputs kept away from the kink at zero
    fd_check(
        "leaky_relu",
        &[(vec![6], vec![1.2, -0.8, 2.5, -1.4, 0.6, -3.0])],
        &[0],
        |t, ids| t.leaky_relu(ids[0], 0.2),
    );
    fd_check(
        "elu",
        &[(vec![6], vec![1.1, -0.9, 2.2, -1.6, 0.5, -2.8])],
        &[0],
        |t, ids| t.elu(ids[0]),
    );
    fd_check(
        "dropout",
        &[(vec![8], randoms(10, 8, 2.0, 0.5))],
        &[0],
        |t, ids| {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            t.dropout(ids[0], 0.5, true, &mut rng).unwrap()
        },
    );
    fd_check(
        "slice",
        &[(vec![7], randoms(11, 7, 2.0, 0.0))],
        &[0],
        |t, ids| t.slice(ids[0], 2, 3).unwrap(),
    );
    fd_check(
        "gather",
        &[(vec![5], randoms(12, 5, 2.0, 0.0))],
        &[0],
        |t, ids| t.gather(ids[0], Arc::new(vec![0, 0, 3, 4])).unwrap(),
    );
    fd_check(
        "pick",
        &[(vec![5], randoms(13, 5, 2.0, 0.0))],
        &[0],
        |t, ids| t.pick(ids[0], 2).unwrap(),
    );
    fd_check(
        "pick_per_row",
        &[(vec![2, 3], randoms(14, 6, 2.0, 0.0))],
        &[0],
        |t, ids| t.pick_per_row(ids[0], &[2, 0]).unwrap(),
    );
    fd_check(
        "softmax_over_segments",
        &[(vec![6], randoms(15, 6, 3.0, 0.0))],
        &[0],
        |t, ids| {
            t.softmax_over_segments(ids[0], Arc::new(vec![0, 0, 1, 1, 1, 2]))
                .unwrap()
        },
    );
    fd_check(
        "softmax_over_segments_interleaved",
        &[(vec![6], randoms(16, 6, 3.0, 0.0))],
        &[0],
        |t, ids| {
            t.softmax_over_segments(ids[0], Arc::new(vec![0, 1, 0, 2, 1, 2]))
                .unwrap()
        },
    );
    fd_check(
        "log_softmax_1d",
        &[(vec![5], randoms(17, 5, 3.0, 0.0))],
        &[0],
        |t, ids| t.log_softmax(ids[0]).unwrap(),
    );
    fd_check(
        "log_softmax_rows",
        &[(vec![2, 3], randoms(18, 6, 3.0, 0.0))],
        &[0],
        |t, ids| t.log_softmax(ids[0]).unwrap(),
    );
    {
        let src = Arc::new(vec![0usize, 1, 0, 1, 2, 1, 2]);
        let dst = Arc::new(vec![0usize, 0, 1, 1, 1, 2, 2]);
        fd_check(
            "edge_aggregate",
            &[
                (vec![7], randoms(19, 7, 1.0, 0.5)),
                (vec![3, 2], randoms(20, 6, 2.0, 0.0)),
            ],
            &[0, 1],
            move |t, ids| {
                t.edge_aggregate(ids[0], ids[1], Arc::clone(&src), Arc::clone(&dst), 3)
                    .unwrap()
            },
        );
    }
    fd_check(
        "concat_cols",
        &[
            (vec![3, 2], randoms(21, 6, 2.0, 0.0)),
            (vec![3, 3], randoms(22, 9, 2.0, 0.0)),
        ],
        &[0, 1],
        |t, ids| t.concat_cols(&[ids[0], ids[1]]).unwrap(),
    );
    fd_check(
        "mean_parts",
        &[
            (vec![2, 2], randoms(23, 4, 2.0, 0.0)),
            (vec![2, 2], randoms(24, 4, 2.0, 0.0)),
            (vec![2, 2], randoms(25, 4, 2.0, 0.0)),
        ],
        &[0, 1, 2],
        |t, ids| t.mean_parts(ids).unwrap(),
    );
    fd_check(
        "stack_rows",
        &[
            (vec![4], randoms(26, 4, 2.0, 0.0)),
            (vec![4], randoms(27, 4, 2.0, 0.0)),
        ],
        &[0, 1],
        |t, ids| t.stack_rows(ids).unwrap(),
    );
    fd_check(
        "mean_rows",
        &[(vec![3, 4], randoms(28, 12, 2.0, 0.0))],
        &[0],
        |t, ids| t.mean_rows(ids[0]).unwrap(),
    );
    fd_check(
        "sum_rows",
        &[(vec![3, 4], randoms(29, 12, 2.0, 0.0))],
        &[0],
        |t, ids| t.sum_rows(ids[0]).unwrap(),
    );
    // well-separated entries so the argmax is stable under perturbation
    fd_check(
        "max_rows",
        &[(vec![3, 2], vec![0.1, 5.0, 2.0, 1.0, -3.0, 0.2])],
        &[0],
        |t, ids| t.max_rows(ids[0]).unwrap(),
    );
    fd_check(
        "mean_all",
        &[(vec![2, 3], randoms(30, 6, 2.0, 0.0))],
        &[0],
        |t, ids| t.mean_all(ids[0]).unwrap(),
    );
}
