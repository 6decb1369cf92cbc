//! Slow, obviously-correct reference implementations.
//!
//! These exist for the test suites: they recompute graph adjacency and
//! attention layers from their definitions using dense matrices and nested
//! loops, with no shared code with the production path.

use std::collections::HashSet;

/// Window adjacency by brute force: every ordered pair `(i, j)` with
/// `|i - j| <= window`, self-loops included.
pub fn window_edge_set(num_nodes: usize, window: usize) -> HashSet<(usize, usize)> {
    let mut set = HashSet::new();
    for i in 0..num_nodes {
        for j in 0..num_nodes {
            let dist = i.abs_diff(j);
            if dist <= window {
                set.insert((i, j));
            }
        }
    }
    set
}

/// One dense attention head over an explicit adjacency matrix.
///
/// `features` is `[v, d_in]` row-major, `w` is `[d_in, d_out]`, `a` has
/// length `2 * d_out`, `adj[i * v + j]` says whether `j` is a neighbor of
/// `i`. Returns the `[v, d_out]` aggregation without any outer activation.
#[allow(clippy::too_many_arguments)]
pub fn dense_gat_head(
    features: &[f64],
    v: usize,
    d_in: usize,
    d_out: usize,
    adj: &[bool],
    w: &[f64],
    a: &[f64],
    slope: f64,
) -> Vec<f64> {
    assert_eq!(features.len(), v * d_in);
    assert_eq!(w.len(), d_in * d_out);
    assert_eq!(a.len(), 2 * d_out);
    assert_eq!(adj.len(), v * v);

    // z = features * w
    let mut z = vec![0.0; v * d_out];
    for i in 0..v {
        for o in 0..d_out {
            let mut s = 0.0;
            for k in 0..d_in {
                s += features[i * d_in + k] * w[k * d_out + o];
            }
            z[i * d_out + o] = s;
        }
    }

    let score = |i: usize, j: usize| -> f64 {
        let mut s = 0.0;
        for o in 0..d_out {
            s += a[o] * z[i * d_out + o] + a[d_out + o] * z[j * d_out + o];
        }
        if s >= 0.0 {
            s
        } else {
            slope * s
        }
    };

    let mut out = vec![0.0; v * d_out];
    for i in 0..v {
        let neighbors: Vec<usize> = (0..v).filter(|&j| adj[i * v + j]).collect();
        assert!(!neighbors.is_empty(), "node {i} has no neighbors");
        let scores: Vec<f64> = neighbors.iter().map(|&j| score(i, j)).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (&j, ex) in neighbors.iter().zip(&exps) {
            let alpha = ex / total;
            for o in 0..d_out {
                out[i * d_out + o] += alpha * z[j * d_out + o];
            }
        }
    }
    out
}

/// Multi-head dense layer: concatenates or averages the heads, then
/// optionally applies ELU elementwise.
#[allow(clippy::too_many_arguments)]
pub fn dense_gat_layer(
    features: &[f64],
    v: usize,
    d_in: usize,
    d_out: usize,
    adj: &[bool],
    heads: &[(Vec<f64>, Vec<f64>)],
    slope: f64,
    concat: bool,
    elu: bool,
) -> Vec<f64> {
    let per_head: Vec<Vec<f64>> = heads
        .iter()
        .map(|(w, a)| dense_gat_head(features, v, d_in, d_out, adj, w, a, slope))
        .collect();
    let mut out = if concat {
        let h = heads.len();
        let mut merged = vec![0.0; v * d_out * h];
        for i in 0..v {
            for (k, head) in per_head.iter().enumerate() {
                for o in 0..d_out {
                    merged[i * d_out * h + k * d_out + o] = head[i * d_out + o];
                }
            }
        }
        merged
    } else {
        let inv = 1.0 / heads.len() as f64;
        let mut merged = vec![0.0; v * d_out];
        for head in &per_head {
            for (m, x) in merged.iter_mut().zip(head) {
                *m += x * inv;
            }
        }
        merged
    };
    if elu {
        for x in out.iter_mut() {
            if *x < 0.0 {
                *x = x.exp() - 1.0;
            }
        }
    }
    out
}

/// Column mean of a `[v, d]` dense matrix.
pub fn dense_mean_rows(x: &[f64], v: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for i in 0..v {
        for j in 0..d {
            out[j] += x[i * d + j];
        }
    }
    for o in out.iter_mut() {
        *o /= v as f64;
    }
    out
}

/// Dense adjacency matrix for a window graph, for feeding the dense heads.
pub fn window_adjacency(num_nodes: usize, window: usize) -> Vec<bool> {
    let mut adj = vec![false; num_nodes * num_nodes];
    for (i, j) in window_edge_set(num_nodes, window) {
        // (src, dst): dst attends over its in-neighbors
        adj[j * num_nodes + i] = true;
    }
    adj
}
