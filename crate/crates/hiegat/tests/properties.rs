//! Property-based invariants.

mod common;

use std::collections::HashSet;
use std::sync::Arc;

use proptest::prelude::*;

use hiegat::graph::{build_window_graph, Level};
use hiegat::model::compute_lambda;
use hiegat::reference::window_edge_set;
use hiegat::tensor::Tape;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn window_graph_matches_brute_force_predicate(n in 1usize..40, w in 1usize..6) {
        let g = build_window_graph(Level::Doc, vec![0; n], w).unwrap();
        let got: HashSet<(usize, usize)> = g.edges.iter().copied().collect();
        prop_assert_eq!(got, window_edge_set(n, w));
    }

    #[test]
    fn segment_softmax_partitions_to_one(
        scores in prop::collection::vec(-30.0f64..30.0, 1..40),
        seg_seed in 0u64..1000,
    ) {
        let n = scores.len();
        let segments: Vec<usize> = (0..n).map(|i| ((i as u64 * 2654435761 + seg_seed) % 5) as usize).collect();
        let mut tape = Tape::new();
        let s = tape.leaf(vec![n], scores, false).unwrap();
        let out = tape.softmax_over_segments(s, Arc::new(segments.clone())).unwrap();
        let v = tape.value(out);
        prop_assert!(v.iter().all(|&x| x > 0.0 && x <= 1.0));
        for seg in segments.iter().collect::<HashSet<_>>() {
            let sum: f64 = v.iter().zip(&segments).filter(|(_, s)| *s == seg).map(|(x, _)| x).sum();
            prop_assert!((sum - 1.0).abs() < 1e-9, "segment {} sums to {}", seg, sum);
        }
    }

    #[test]
    fn lambda_stays_on_the_simplex(exp in 0.0f64..6.0) {
        let x = 10f64.powf(exp);
        let l = compute_lambda(x).unwrap();
        prop_assert!((l.lambda_d + l.lambda_s + l.lambda_w - 1.0).abs() < 1e-12);
        prop_assert!((l.lambda_s - 2.0 * l.lambda_w).abs() < 1e-12);
        prop_assert!(l.lambda_d > 0.0 && l.lambda_d <= 1.0);
        prop_assert!(l.lambda_s >= 0.0 && l.lambda_s < 1.0);
        prop_assert!(l.lambda_w >= 0.0 && l.lambda_w < 1.0);
    }

    #[test]
    fn log_softmax_is_shift_invariant(
        xs in prop::collection::vec(-20.0f64..20.0, 1..12),
        shift in -100.0f64..100.0,
    ) {
        let mut tape = Tape::new();
        let n = xs.len();
        let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        let a = tape.leaf(vec![n], xs, false).unwrap();
        let b = tape.leaf(vec![n], shifted, false).unwrap();
        let ya = tape.log_softmax(a).unwrap();
        let yb = tape.log_softmax(b).unwrap();
        let (va, vb) = (tape.value(ya).to_vec(), tape.value(yb).to_vec());
        for (x, y) in va.iter().zip(&vb) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        let total: f64 = va.iter().map(|x| x.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tokenizer_output_is_clean(text in "\\PC{0,60}") {
        for tok in hiegat::text::tokenize(&text) {
            prop_assert!(!tok.is_empty());
            prop_assert_eq!(tok.clone(), tok.to_lowercase());
            let first = tok.chars().next().unwrap();
            let last = tok.chars().last().unwrap();
            prop_assert!(!first.is_ascii_punctuation() || tok.len() == 1);
            prop_assert!(!last.is_ascii_punctuation() || tok.len() == 1);
        }
    }
}
