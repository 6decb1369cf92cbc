//! Graph attention layer on the tensor tape.
//!
//! Per head: `z = h W`, edge scores `e_ij = LeakyReLU(a^T [z_i || z_j])`
//! with `i` the destination node, attention normalized over each node's
//! in-neighborhood, and the update `h'_i = sum_j alpha_ij z_j`. Heads are
//! merged by concatenation (hidden layers) or averaging (final layer);
//! the activation is applied after the merge.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{HiegatError, Result};
use crate::graph::LevelGraph;
use crate::model::{ParamId, ParamStore};
use crate::tensor::{Tape, TensorId};

/// How the per-head outputs combine into the layer output.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum HeadMerge {
    Concat,
    Mean,
}

/// Activation applied to the merged layer output.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Activation {
    Elu,
    None,
}

/// Node-feature reduction producing a graph-level vector.
#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutMode {
    Mean,
    Max,
    Sum,
}

/// One attention head: a weight matrix and an attention vector.
#[derive(Clone, Debug)]
pub struct GatHead {
    pub w: ParamId,
    pub a: ParamId,
}

/// Parameters of one multi-head attention layer.
#[derive(Clone, Debug)]
pub struct GatLayerParams {
    pub heads: Vec<GatHead>,
    pub merge: HeadMerge,
    pub negative_slope: f64,
    pub d_in: usize,
    pub d_out: usize,
}

impl GatLayerParams {
    pub fn output_width(&self) -> usize {
        match self.merge {
            HeadMerge::Concat => self.heads.len() * self.d_out,
            HeadMerge::Mean => self.d_out,
        }
    }
}

/// Maps parameters to the tape leaves they were bound to during one forward
/// pass, so gradients can be read back out after `backward`.
#[derive(Default)]
pub struct TapeBindings {
    by_param: HashMap<ParamId, TensorId>,
    /// Dense parameters in first-bind order.
    pub dense: Vec<(ParamId, TensorId)>,
    /// Embedding-table bindings: the rows gathered and the `[rows, dim]`
    /// leaf holding them.
    pub embeddings: Vec<(ParamId, Arc<Vec<usize>>, TensorId)>,
}

impl TapeBindings {
    /// Binds a parameter as a shared leaf, reusing the leaf on repeat binds
    /// so gradient contributions from every use accumulate in one place.
    pub fn bind(&mut self, tape: &mut Tape, store: &ParamStore, id: ParamId) -> Result<TensorId> {
        if let Some(&t) = self.by_param.get(&id) {
            return Ok(t);
        }
        let p = store.get(id);
        let t = tape.shared_leaf(p.shape.clone(), Arc::clone(&p.value), true)?;
        self.by_param.insert(id, t);
        self.dense.push((id, t));
        Ok(t)
    }

    /// Copies `rows` of an embedding table into an owned `[rows, dim]` leaf
    /// and records the mapping for scatter-back of row gradients.
    pub fn bind_embedding_rows(
        &mut self,
        tape: &mut Tape,
        store: &ParamStore,
        id: ParamId,
        rows: Arc<Vec<usize>>,
    ) -> Result<TensorId> {
        let p = store.get(id);
        let dim = p.shape[1];
        let table = p.value.as_slice();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for &r in rows.iter() {
            if r >= p.shape[0] {
                return Err(HiegatError::invalid(
                    "bind_embedding_rows",
                    format!("row {r} out of table with {} rows", p.shape[0]),
                ));
            }
            data.extend_from_slice(&table[r * dim..(r + 1) * dim]);
        }
        let t = tape.leaf(vec![rows.len(), dim], data, true)?;
        self.embeddings.push((id, rows, t));
        Ok(t)
    }
}

/// Output of one attention layer: merged node features plus the attention
/// coefficients of every head (aligned with the graph's edge index).
pub struct GatOutput {
    pub nodes: TensorId,
    pub attention: Vec<TensorId>,
}

/// Runs one multi-head attention layer over `features` (`[V, d_in]`).
///
/// In training mode the configured rate drops both the input features and
/// the normalized attention coefficients (the classic GAT recipe); the
/// returned `attention` tensors are the coefficients before dropout.
#[allow(clippy::too_many_arguments)]
pub fn gat_forward(
    tape: &mut Tape,
    store: &ParamStore,
    binds: &mut TapeBindings,
    features: TensorId,
    graph: &LevelGraph,
    layer: &GatLayerParams,
    activation: Activation,
    dropout: f64,
    training: bool,
    rng: &mut impl rand::Rng,
) -> Result<GatOutput> {
    let fshape = tape.shape(features).to_vec();
    if fshape.len() != 2 || fshape[0] != graph.num_nodes {
        return Err(HiegatError::dims(
            "gat_forward",
            &fshape,
            &[graph.num_nodes, layer.d_in],
        ));
    }
    if fshape[1] != layer.d_in {
        return Err(HiegatError::dims(
            "gat_forward",
            &fshape,
            &[graph.num_nodes, layer.d_in],
        ));
    }

    let index = graph.index();
    let src = Arc::new(index.src.clone());
    let dst = Arc::new(index.dst.clone());

    let inputs = tape.dropout(features, dropout, training, rng)?;
    let mut head_outputs = Vec::with_capacity(layer.heads.len());
    let mut attention = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let w = binds.bind(tape, store, head.w)?;
        let a = binds.bind(tape, store, head.a)?;
        let z = tape.matmul(inputs, w)?;
        let a_dst = tape.slice(a, 0, layer.d_out)?;
        let a_src = tape.slice(a, layer.d_out, layer.d_out)?;
        let s_dst = tape.matvec(z, a_dst)?;
        let s_src = tape.matvec(z, a_src)?;
        let per_edge_dst = tape.gather(s_dst, Arc::clone(&dst))?;
        let per_edge_src = tape.gather(s_src, Arc::clone(&src))?;
        let raw = tape.add(per_edge_dst, per_edge_src)?;
        let scores = tape.leaky_relu(raw, layer.negative_slope);
        let alpha = tape.softmax_over_segments(scores, Arc::clone(&dst))?;
        let alpha_used = tape.dropout(alpha, dropout, training, rng)?;
        let out = tape.edge_aggregate(
            alpha_used,
            z,
            Arc::clone(&src),
            Arc::clone(&dst),
            graph.num_nodes,
        )?;
        head_outputs.push(out);
        attention.push(alpha);
    }

    let merged = if head_outputs.len() == 1 {
        head_outputs[0]
    } else {
        match layer.merge {
            HeadMerge::Concat => tape.concat_cols(&head_outputs)?,
            HeadMerge::Mean => tape.mean_parts(&head_outputs)?,
        }
    };
    let nodes = match activation {
        Activation::Elu => tape.elu(merged),
        Activation::None => merged,
    };
    Ok(GatOutput { nodes, attention })
}

/// Permutation-invariant reduction of `[V, d]` node features to `[d]`.
pub fn readout(tape: &mut Tape, nodes: TensorId, mode: ReadoutMode) -> Result<TensorId> {
    let shape = tape.shape(nodes);
    if shape.len() != 2 || shape[0] == 0 {
        return Err(HiegatError::invalid(
            "readout",
            format!("expected non-empty node matrix, got shape {shape:?}"),
        ));
    }
    match mode {
        ReadoutMode::Mean => tape.mean_rows(nodes),
        ReadoutMode::Max => tape.max_rows(nodes),
        ReadoutMode::Sum => tape.sum_rows(nodes),
    }
}
