//! Gradient buffers and parameter-update rules.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gat::TapeBindings;
use crate::model::{ParamId, ParamStore};
use crate::tensor::Tape;

/// One gradient vector per parameter, aligned with a [`ParamStore`].
pub struct GradBuffers {
    grads: Vec<Vec<f64>>,
}

impl GradBuffers {
    pub fn new(store: &ParamStore) -> Self {
        GradBuffers {
            grads: store.iter().map(|(_, p)| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    /// Adds one sample's contribution, scaled (typically by `1/batch`).
    pub fn add_sample(&mut self, sample: &SampleGrads, scale: f64) {
        for (id, g) in &sample.dense {
            let dst = &mut self.grads[id.0];
            for (d, x) in dst.iter_mut().zip(g) {
                *d += scale * x;
            }
        }
        for (id, rows, g) in &sample.rows {
            let dst = &mut self.grads[id.0];
            let dim = g.len() / rows.len();
            for (i, &row) in rows.iter().enumerate() {
                let src = &g[i * dim..(i + 1) * dim];
                let slot = &mut dst[row * dim..(row + 1) * dim];
                for (d, x) in slot.iter_mut().zip(src) {
                    *d += scale * x;
                }
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_all(&mut self, c: f64) {
        for g in &mut self.grads {
            for x in g.iter_mut() {
                *x *= c;
            }
        }
    }

    /// Rescales so the global norm does not exceed `max_norm`.
    /// Returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale_all(max_norm / norm);
        }
        norm
    }
}

/// The gradient contributions of one sample, extracted from its tape.
/// Embedding gradients stay row-sparse.
pub struct SampleGrads {
    pub dense: Vec<(ParamId, Vec<f64>)>,
    pub rows: Vec<(ParamId, Arc<Vec<usize>>, Vec<f64>)>,
}

/// Reads parameter gradients out of a tape after `backward`.
pub fn extract_sample_grads(tape: &Tape, binds: &TapeBindings) -> SampleGrads {
    let dense = binds
        .dense
        .iter()
        .map(|&(pid, tid)| {
            let g = tape
                .grad(tid)
                .expect("bound parameter leaf has no gradient after backward")
                .to_vec();
            (pid, g)
        })
        .collect();
    let rows = binds
        .embeddings
        .iter()
        .map(|(pid, rows, tid)| {
            let g = tape
                .grad(*tid)
                .expect("embedding leaf has no gradient after backward")
                .to_vec();
            (*pid, Arc::clone(rows), g)
        })
        .collect();
    SampleGrads { dense, rows }
}

/// Available update rules.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Optimizer with per-parameter state. Adam uses bias-corrected first and
/// second moments (beta1 0.9, beta2 0.999, eps 1e-8).
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        Optimizer {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffers) {
        self.step_count += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
                for id in ids {
                    let g = grads.get(id).to_vec();
                    let value = store.value_mut(id);
                    for (x, gi) in value.iter_mut().zip(&g) {
                        *x -= lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step_count as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                let (beta1, beta2, eps) = (self.beta1, self.beta2, self.eps);
                let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
                // each parameter's update is independent, so this is
                // deterministic under any thread count
                let mut slots: Vec<(ParamId, &mut Vec<f64>, &mut Vec<f64>)> = ids
                    .into_iter()
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                    .map(|(id, (m, v))| (id, m, v))
                    .collect();
                let updates: Vec<(ParamId, Vec<f64>)> = slots
                    .par_iter_mut()
                    .map(|(id, m, v)| {
                        let g = grads.get(*id);
                        let mut delta = vec![0.0; g.len()];
                        for i in 0..g.len() {
                            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                            let m_hat = m[i] / bc1;
                            let v_hat = v[i] / bc2;
                            delta[i] = lr * m_hat / (v_hat.sqrt() + eps);
                        }
                        (*id, delta)
                    })
                    .collect();
                for (id, delta) in updates {
                    let value = store.value_mut(id);
                    for (x, d) in value.iter_mut().zip(&delta) {
                        *x -= d;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_moves_against_gradient() {
        let mut store = ParamStore::new();
        let id = store.register("w", vec![2], vec![1.0, -1.0]).unwrap();
        let mut grads = GradBuffers::new(&store);
        let sample = SampleGrads {
            dense: vec![(id, vec![0.5, -0.25])],
            rows: vec![],
        };
        grads.add_sample(&sample, 1.0);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, &store);
        opt.step(&mut store, &grads);
        let v = store.get(id).value.as_slice();
        assert!((v[0] - 0.95).abs() < 1e-12);
        assert!((v[1] - (-0.975)).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_size_is_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.register("w", vec![1], vec![0.0]).unwrap();
        let mut grads = GradBuffers::new(&store);
        grads.add_sample(
            &SampleGrads {
                dense: vec![(id, vec![3.0])],
                rows: vec![],
            },
            1.0,
        );
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, &store);
        opt.step(&mut store, &grads);
        // bias-corrected first step is -lr * sign(g), up to eps
        let v = store.get(id).value[0];
        assert!((v + 0.01).abs() < 1e-6, "{v}");
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        let id = store.register("w", vec![2], vec![0.3, 0.7]).unwrap();
        let mut grads = GradBuffers::new(&store);
        grads.add_sample(
            &SampleGrads {
                dense: vec![(id, vec![5.0, -2.0])],
                rows: vec![],
            },
            1.0,
        );
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let mut opt = Optimizer::new(kind, 0.0, &store);
            opt.step(&mut store, &grads);
            assert_eq!(store.get(id).value.as_slice(), &[0.3, 0.7]);
        }
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut store = ParamStore::new();
        let a = store.register("a", vec![2], vec![0.0; 2]).unwrap();
        let b = store.register("b", vec![1], vec![0.0]).unwrap();
        let mut grads = GradBuffers::new(&store);
        grads.add_sample(
            &SampleGrads {
                dense: vec![(a, vec![3.0, 4.0]), (b, vec![12.0])],
                rows: vec![],
            },
            1.0,
        );
        // norm = sqrt(9 + 16 + 144) = 13
        let pre = grads.clip_global_norm(5.0);
        assert!((pre - 13.0).abs() < 1e-12);
        assert!((grads.global_norm() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn embedding_rows_scatter_back() {
        let mut store = ParamStore::new();
        let id = store.register("emb", vec![4, 2], vec![0.0; 8]).unwrap();
        let mut grads = GradBuffers::new(&store);
        let rows = Arc::new(vec![2usize, 0, 2]);
        grads.add_sample(
            &SampleGrads {
                dense: vec![],
                rows: vec![(id, rows, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])],
            },
            0.5,
        );
        let g = grads.get(id);
        // row 0 gets (3,4)*0.5; row 2 gets (1,2)*0.5 + (5,6)*0.5
        assert_eq!(g, &[1.5, 2.0, 0.0, 0.0, 3.0, 4.0, 0.0, 0.0]);
    }
}
