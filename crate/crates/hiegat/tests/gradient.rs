//! Finite-difference verification of every tape operation and of the full
//! model's backward pass on a two-sentence toy sample.

mod common;

use common::{
    fd_check, model_grad_max_rel_error, op_gradient_suite, randoms, toy_model, toy_sample,
};
use hiegat::gradcheck::central_diff;
use hiegat::tensor::Tape;

#[test]
fn all_op_gradients_match_finite_differences() {
    op_gradient_suite();
}

#[test]
fn leaky_relu_gradient_at_negative_point_is_slope() {
    let mut f = |x: &[f64]| {
        let mut t = Tape::new();
        let id = t.leaf(vec![1], x.to_vec(), false).unwrap();
        let y = t.leaky_relu(id, 0.2);
        t.value(y)[0]
    };
    let g = central_diff(&mut f, &[-3.0], 1e-6);
    assert!((g[0] - 0.2).abs() < 1e-9);
}

#[test]
fn linear_map_gradient_matches_finite_differences() {
    // loss derived from W x with x fixed: dW is x-structured across rows
    let x = vec![0.4, -1.2, 2.0];
    fd_check(
        "w_times_x",
        &[(vec![2, 3], randoms(31, 6, 2.0, 0.0)), (vec![3], x)],
        &[0],
        |t, ids| t.matvec(ids[0], ids[1]).unwrap(),
    );
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let mut model = toy_model();
    let (_, graphs, lambda) = toy_sample();
    let worst = model_grad_max_rel_error(&mut model, &graphs, 1, &lambda);
    assert!(worst < 1e-4, "worst relative error {worst}");
}
