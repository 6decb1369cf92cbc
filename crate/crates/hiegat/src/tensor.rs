//! Minimal dense-tensor engine with reverse-mode gradient computation.
//!
//! Values live on a [`Tape`]: every operation appends a node holding the
//! result plus enough information to push gradients back to its inputs.
//! Tensors are given by [`TensorId`] handles; forward values are immutable
//! once written. One tape models one forward pass (typically a single
//! sample); parameters enter as shared leaves so their storage is never
//! copied per pass.
//!
//! All data is 64-bit, flat, row-major. Scalars have an empty shape.

use std::sync::Arc;

use rand::Rng;

use crate::error::{HiegatError, Result};

/// Handle to a tensor stored on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct TensorId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Storage {
    Owned(Vec<f64>),
    Shared(Arc<Vec<f64>>),
}

impl Storage {
    fn as_slice(&self) -> &[f64] {
        match self {
            Storage::Owned(v) => v,
            Storage::Shared(v) => v,
        }
    }
}

/// Dense tensor: shape, flat row-major data, and an optional gradient of the
/// same shape populated by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Tensor {
    pub shape: Vec<usize>,
    storage: Storage,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn data(&self) -> &[f64] {
        self.storage.as_slice()
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul {
        a: TensorId,
        b: TensorId,
    },
    MatVec {
        m: TensorId,
        v: TensorId,
    },
    VecMat {
        v: TensorId,
        m: TensorId,
    },
    Add {
        a: TensorId,
        b: TensorId,
    },
    Scale {
        a: TensorId,
        c: f64,
    },
    LeakyRelu {
        a: TensorId,
        slope: f64,
    },
    Elu {
        a: TensorId,
    },
    Dropout {
        a: TensorId,
        mask: Vec<f64>,
    },
    Slice {
        a: TensorId,
        start: usize,
    },
    Gather {
        a: TensorId,
        idx: Arc<Vec<usize>>,
    },
    SegmentSoftmax {
        a: TensorId,
        segments: Arc<Vec<usize>>,
    },
    EdgeAggregate {
        alpha: TensorId,
        feats: TensorId,
        src: Arc<Vec<usize>>,
        dst: Arc<Vec<usize>>,
    },
    ConcatCols {
        parts: Vec<TensorId>,
    },
    MeanParts {
        parts: Vec<TensorId>,
    },
    StackRows {
        parts: Vec<TensorId>,
    },
    MeanRows {
        a: TensorId,
    },
    SumRows {
        a: TensorId,
    },
    MaxRows {
        a: TensorId,
        argmax: Vec<usize>,
    },
    LogSoftmax {
        a: TensorId,
    },
    Pick {
        a: TensorId,
        index: usize,
    },
    PickPerRow {
        a: TensorId,
        idx: Vec<usize>,
    },
    MeanAll {
        a: TensorId,
    },
}

struct Node {
    tensor: Tensor,
    op: Op,
}

/// Records a forward computation and replays it backwards for gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// C[m,n] = A[m,k] * B[k,n], all row-major.
fn mm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C[m,k] += G[m,n] * B[k,n]^T  (dA for a matmul).
fn mm_nt_acc(m: usize, n: usize, k: usize, g: &[f64], b: &[f64], c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            m,
            n,
            k,
            1.0,
            g.as_ptr(),
            n as isize,
            1,
            b.as_ptr(),
            1,
            n as isize,
            1.0,
            c.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

/// C[k,n] += A[m,k]^T * G[m,n]  (dB for a matmul).
fn mm_tn_acc(k: usize, m: usize, n: usize, a: &[f64], g: &[f64], c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            k,
            m,
            n,
            1.0,
            a.as_ptr(),
            1,
            k as isize,
            g.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> TensorId {
        debug_assert_eq!(numel_of(&shape), data.len());
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            tensor: Tensor {
                shape,
                storage: Storage::Owned(data),
                requires_grad,
                grad: None,
            },
            op,
        });
        id
    }

    fn needs_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].tensor.requires_grad)
    }

    /// New leaf tensor owning its data.
    pub fn leaf(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
    ) -> Result<TensorId> {
        if numel_of(&shape) != data.len() {
            return Err(HiegatError::invalid(
                "leaf",
                format!(
                    "shape {:?} implies {} elements, got {}",
                    shape,
                    numel_of(&shape),
                    data.len()
                ),
            ));
        }
        Ok(self.push(shape, data, requires_grad, Op::Leaf))
    }

    /// New leaf sharing externally owned storage (no copy).
    pub fn shared_leaf(
        &mut self,
        shape: Vec<usize>,
        data: Arc<Vec<f64>>,
        requires_grad: bool,
    ) -> Result<TensorId> {
        if numel_of(&shape) != data.len() {
            return Err(HiegatError::invalid(
                "shared_leaf",
                format!(
                    "shape {:?} implies {} elements, got {}",
                    shape,
                    numel_of(&shape),
                    data.len()
                ),
            ));
        }
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            tensor: Tensor {
                shape,
                storage: Storage::Shared(data),
                requires_grad,
                grad: None,
            },
            op: Op::Leaf,
        });
        Ok(id)
    }

    pub fn scalar(&mut self, value: f64) -> TensorId {
        self.push(vec![], vec![value], false, Op::Leaf)
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].tensor.data()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].tensor.shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    /// Clears accumulated gradients on every node.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.tensor.grad = None;
        }
    }

    // ── forward operations ──────────────────────────────────────────

    /// Standard matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(HiegatError::dims("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        mm_nn(m, k, n, self.value(a), self.value(b), &mut out);
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(vec![m, n], out, rg, Op::Matmul { a, b }))
    }

    /// `[r,c] x [c] -> [r]`.
    pub fn matvec(&mut self, m: TensorId, v: TensorId) -> Result<TensorId> {
        let (sm, sv) = (self.shape(m).to_vec(), self.shape(v).to_vec());
        if sm.len() != 2 || sv.len() != 1 || sm[1] != sv[0] {
            return Err(HiegatError::dims("matvec", &sm, &sv));
        }
        let (r, c) = (sm[0], sm[1]);
        let (md, vd) = (self.value(m), self.value(v));
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = &md[i * c..(i + 1) * c];
            out[i] = row.iter().zip(vd).map(|(x, y)| x * y).sum();
        }
        let rg = self.needs_grad(&[m, v]);
        Ok(self.push(vec![r], out, rg, Op::MatVec { m, v }))
    }

    /// `[r] x [r,c] -> [c]`.
    pub fn vecmat(&mut self, v: TensorId, m: TensorId) -> Result<TensorId> {
        let (sv, sm) = (self.shape(v).to_vec(), self.shape(m).to_vec());
        if sv.len() != 1 || sm.len() != 2 || sv[0] != sm[0] {
            return Err(HiegatError::dims("vecmat", &sv, &sm));
        }
        let (r, c) = (sm[0], sm[1]);
        let (vd, md) = (self.value(v), self.value(m));
        let mut out = vec![0.0; c];
        for i in 0..r {
            let vi = vd[i];
            for j in 0..c {
                out[j] += vi * md[i * c + j];
            }
        }
        let rg = self.needs_grad(&[v, m]);
        Ok(self.push(vec![c], out, rg, Op::VecMat { v, m }))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(HiegatError::dims("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(shape, out, rg, Op::Add { a, b }))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let out: Vec<f64> = self.value(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs_grad(&[a]);
        self.push(shape, out, rg, Op::Scale { a, c })
    }

    /// Elementwise `x if x >= 0 else slope * x`.
    pub fn leaky_relu(&mut self, a: TensorId, slope: f64) -> TensorId {
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .map(|&x| if x >= 0.0 { x } else { slope * x })
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs_grad(&[a]);
        self.push(shape, out, rg, Op::LeakyRelu { a, slope })
    }

    /// Elementwise `x if x >= 0 else exp(x) - 1`.
    pub fn elu(&mut self, a: TensorId) -> TensorId {
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .map(|&x| if x >= 0.0 { x } else { x.exp() - 1.0 })
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs_grad(&[a]);
        self.push(shape, out, rg, Op::Elu { a })
    }

    /// Inverted dropout: in training, zeroes entries with probability `rate`
    /// and scales survivors by `1/(1-rate)`; in eval mode it is the identity.
    pub fn dropout(
        &mut self,
        a: TensorId,
        rate: f64,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<TensorId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(HiegatError::invalid(
                "dropout",
                format!("rate must be in [0, 1), got {rate}"),
            ));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.tensor(a).numel())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs_grad(&[a]);
        Ok(self.push(shape, out, rg, Op::Dropout { a, mask }))
    }

    /// Contiguous sub-range of a 1-D tensor.
    pub fn slice(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 1 || start + len > sa[0] {
            return Err(HiegatError::invalid(
                "slice",
                format!("range {start}..{} out of shape {:?}", start + len, sa),
            ));
        }
        let out = self.value(a)[start..start + len].to_vec();
        let rg = self.needs_grad(&[a]);
        Ok(self.push(vec![len], out, rg, Op::Slice { a, start }))
    }

    /// 1-D index lookup: `out[e] = a[idx[e]]`.
    pub fn gather(&mut self, a: TensorId, idx: Arc<Vec<usize>>) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 1 {
            return Err(HiegatError::invalid(
                "gather",
                format!("expected 1-D input, got {sa:?}"),
            ));
        }
        let data = self.value(a);
        let mut out = Vec::with_capacity(idx.len());
        for &i in idx.iter() {
            if i >= sa[0] {
                return Err(HiegatError::invalid(
                    "gather",
                    format!("index {i} out of bounds for length {}", sa[0]),
                ));
            }
            out.push(data[i]);
        }
        let rg = self.needs_grad(&[a]);
        Ok(self.push(vec![idx.len()], out, rg, Op::Gather { a, idx }))
    }

    /// Softmax normalized independently within each segment. Entries sharing
    /// a segment id are jointly normalized with max-subtraction.
    pub fn softmax_over_segments(
        &mut self,
        scores: TensorId,
        segments: Arc<Vec<usize>>,
    ) -> Result<TensorId> {
        let sa = self.shape(scores).to_vec();
        if sa.len() != 1 {
            return Err(HiegatError::invalid(
                "softmax_over_segments",
                format!("expected 1-D scores, got {sa:?}"),
            ));
        }
        if sa[0] == 0 || segments.is_empty() {
            return Err(HiegatError::invalid(
                "softmax_over_segments",
                "empty segment set",
            ));
        }
        if segments.len() != sa[0] {
            return Err(HiegatError::invalid(
                "softmax_over_segments",
                format!("{} scores but {} segment ids", sa[0], segments.len()),
            ));
        }
        let data = self.value(scores);
        let num_seg = segments.iter().max().unwrap() + 1;
        let mut seg_max = vec![f64::NEG_INFINITY; num_seg];
        for (x, &s) in data.iter().zip(segments.iter()) {
            if *x > seg_max[s] {
                seg_max[s] = *x;
            }
        }
        let mut seg_sum = vec![0.0; num_seg];
        let mut out = vec![0.0; data.len()];
        for (e, (&x, &s)) in data.iter().zip(segments.iter()).enumerate() {
            let ex = (x - seg_max[s]).exp();
            out[e] = ex;
            seg_sum[s] += ex;
        }
        for (e, &s) in segments.iter().enumerate() {
            out[e] /= seg_sum[s];
        }
        let rg = self.needs_grad(&[scores]);
        Ok(self.push(
            vec![data.len()],
            out,
            rg,
            Op::SegmentSoftmax {
                a: scores,
                segments,
            },
        ))
    }

    /// Attention-weighted neighborhood sum: `out[dst[e]] += alpha[e] * feats[src[e]]`.
    ///
    /// `alpha` is one coefficient per edge; `feats` is `[V, d]`; the output is
    /// `[num_nodes, d]`. Every node is expected to own at least one incoming
    /// edge (window graphs guarantee this via self-loops).
    pub fn edge_aggregate(
        &mut self,
        alpha: TensorId,
        feats: TensorId,
        src: Arc<Vec<usize>>,
        dst: Arc<Vec<usize>>,
        num_nodes: usize,
    ) -> Result<TensorId> {
        let (salpha, sfeats) = (self.shape(alpha).to_vec(), self.shape(feats).to_vec());
        if salpha.len() != 1 || sfeats.len() != 2 {
            return Err(HiegatError::dims("edge_aggregate", &salpha, &sfeats));
        }
        if salpha[0] != src.len() || salpha[0] != dst.len() {
            return Err(HiegatError::invalid(
                "edge_aggregate",
                format!("{} coefficients for {} edges", salpha[0], src.len()),
            ));
        }
        let d = sfeats[1];
        let (ad, fd) = (self.value(alpha), self.value(feats));
        let mut out = vec![0.0; num_nodes * d];
        for e in 0..src.len() {
            let (s, t, w) = (src[e], dst[e], ad[e]);
            let f = &fd[s * d..(s + 1) * d];
            let o = &mut out[t * d..(t + 1) * d];
            for j in 0..d {
                o[j] += w * f[j];
            }
        }
        let rg = self.needs_grad(&[alpha, feats]);
        Ok(self.push(
            vec![num_nodes, d],
            out,
            rg,
            Op::EdgeAggregate {
                alpha,
                feats,
                src,
                dst,
            },
        ))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(HiegatError::invalid("concat_cols", "no parts"));
        }
        let rows = self.shape(parts[0])[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(HiegatError::dims("concat_cols", self.shape(parts[0]), s));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut col = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let data = self.value(p);
            for r in 0..rows {
                out[r * total + col..r * total + col + w]
                    .copy_from_slice(&data[r * w..(r + 1) * w]);
            }
            col += w;
        }
        let rg = self.needs_grad(parts);
        Ok(self.push(
            vec![rows, total],
            out,
            rg,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Elementwise mean of same-shape tensors.
    pub fn mean_parts(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(HiegatError::invalid("mean_parts", "no parts"));
        }
        let shape = self.shape(parts[0]).to_vec();
        for &p in parts {
            if self.shape(p) != shape.as_slice() {
                return Err(HiegatError::dims("mean_parts", &shape, self.shape(p)));
            }
        }
        let inv = 1.0 / parts.len() as f64;
        let mut out = vec![0.0; numel_of(&shape)];
        for &p in parts {
            for (o, x) in out.iter_mut().zip(self.value(p)) {
                *o += x;
            }
        }
        for o in out.iter_mut() {
            *o *= inv;
        }
        let rg = self.needs_grad(parts);
        Ok(self.push(
            shape,
            out,
            rg,
            Op::MeanParts {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Stacks 1-D vectors of equal length into a `[k, d]` matrix.
    pub fn stack_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(HiegatError::invalid("stack_rows", "no parts"));
        }
        let d = {
            let s = self.shape(parts[0]);
            if s.len() != 1 {
                return Err(HiegatError::invalid(
                    "stack_rows",
                    format!("expected 1-D parts, got {s:?}"),
                ));
            }
            s[0]
        };
        let mut out = Vec::with_capacity(parts.len() * d);
        for &p in parts {
            if self.shape(p) != [d] {
                return Err(HiegatError::dims("stack_rows", &[d], self.shape(p)));
            }
            out.extend_from_slice(self.value(p));
        }
        let rg = self.needs_grad(parts);
        Ok(self.push(
            vec![parts.len(), d],
            out,
            rg,
            Op::StackRows {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Column means of a `[r, c]` matrix.
    pub fn mean_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 || sa[0] == 0 {
            return Err(HiegatError::invalid(
                "mean_rows",
                format!("expected non-empty 2-D input, got {sa:?}"),
            ));
        }
        let (r, c) = (sa[0], sa[1]);
        let data = self.value(a);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += data[i * c + j];
            }
        }
        for o in out.iter_mut() {
            *o /= r as f64;
        }
        let rg = self.needs_grad(&[a]);
        Ok(self.push(vec![c], out, rg, Op::MeanRows { a }))
    }

    /// Column sums of a `[r, c]` matrix.
    pub fn sum_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 || sa[0] == 0 {
            return Err(HiegatError::invalid(
                "sum_rows",
                format!("expected non-empty 2-D input, got {sa:?}"),
            ));
        }
        let (r, c) = (sa[0], sa[1]);
        let data = self.value(a);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += data[i * c + j];
            }
        }
        let rg = self.needs_grad(&[a]);
        Ok(self.push(vec![c], out, rg, Op::SumRows { a }))
    }

    /// Column maxima of a `[r, c]` matrix.
    pub fn max_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 || sa[0] == 0 {
            return Err(HiegatError::invalid(
                "max_rows",
                format!("expected non-empty 2-D input, got {sa:?}"),
            ));
        }
        let (r, c) = (sa[0], sa[1]);
        let data = self.value(a);
        let mut out = vec![f64::NEG_INFINITY; c];
        let mut argmax = vec![0usize; c];
        for i in 0..r {
            for j in 0..c {
                let x = data[i * c + j];
                if x > out[j] {
                    out[j] = x;
                    argmax[j] = i;
                }
            }
        }
        let rg = self.needs_grad(&[a]);
        Ok(self.push(vec![c], out, rg, Op::MaxRows { a, argmax }))
    }

    /// `x_i - logsumexp(x)`, applied to a 1-D vector or to each row of a
    /// 2-D matrix. Computed with max-subtraction.
    pub fn log_softmax(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        let (rows, c) = match sa.len() {
            1 => (1, sa[0]),
            2 => (sa[0], sa[1]),
            _ => {
                return Err(HiegatError::invalid(
                    "log_softmax",
                    format!("expected 1-D or 2-D input, got {sa:?}"),
                ))
            }
        };
        if c == 0 {
            return Err(HiegatError::invalid("log_softmax", "empty input"));
        }
        let data = self.value(a);
        let mut out = vec![0.0; data.len()];
        for r in 0..rows {
            let row = &data[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            for (o, &x) in out[r * c..(r + 1) * c].iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        let rg = self.needs_grad(&[a]);
        Ok(self.push(sa, out, rg, Op::LogSoftmax { a }))
    }

    /// Single entry of a 1-D tensor as a scalar.
    pub fn pick(&mut self, a: TensorId, index: usize) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 1 || index >= sa[0] {
            return Err(HiegatError::invalid(
                "pick",
                format!("index {index} out of shape {sa:?}"),
            ));
        }
        let v = self.value(a)[index];
        let rg = self.needs_grad(&[a]);
        Ok(self.push(vec![], vec![v], rg, Op::Pick { a, index }))
    }

    /// One entry per row of a `[r, c]` matrix: `out[i] = a[i, idx[i]]`.
    pub fn pick_per_row(&mut self, a: TensorId, idx: &[usize]) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 || idx.len() != sa[0] {
            return Err(HiegatError::invalid(
                "pick_per_row",
                format!("{} indices for shape {sa:?}", idx.len()),
            ));
        }
        let c = sa[1];
        let data = self.value(a);
        let mut out = Vec::with_capacity(idx.len());
        for (i, &j) in idx.iter().enumerate() {
            if j >= c {
                return Err(HiegatError::invalid(
                    "pick_per_row",
                    format!("column {j} out of bounds for {c} columns"),
                ));
            }
            out.push(data[i * c + j]);
        }
        let rg = self.needs_grad(&[a]);
        Ok(self.push(
            vec![idx.len()],
            out,
            rg,
            Op::PickPerRow {
                a,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Mean of all entries as a scalar.
    pub fn mean_all(&mut self, a: TensorId) -> Result<TensorId> {
        let n = self.tensor(a).numel();
        if n == 0 {
            return Err(HiegatError::invalid("mean_all", "empty input"));
        }
        let v = self.value(a).iter().sum::<f64>() / n as f64;
        let rg = self.needs_grad(&[a]);
        Ok(self.push(vec![], vec![v], rg, Op::MeanAll { a }))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Accumulates `seed * d(loss)/d(tensor)` into the `grad` of every
    /// tensor with `requires_grad`. Repeated calls add up; use
    /// [`Tape::zero_grads`] to reset.
    pub fn backward_seeded(&mut self, loss: TensorId, seed: f64) -> Result<()> {
        if self.tensor(loss).numel() != 1 {
            return Err(HiegatError::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let n = self.nodes.len();
        // Scratch gradients for this call only, merged into persistent
        // grads at the end so repeated backward calls stay additive.
        let mut scratch: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
        scratch.resize_with(n, || None);
        scratch[loss.0] = Some(vec![seed]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].tensor.requires_grad {
                continue;
            }
            let g = match scratch[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut scratch);
            scratch[i] = Some(g);
        }

        for (node, s) in self.nodes.iter_mut().zip(scratch) {
            if !node.tensor.requires_grad {
                continue;
            }
            let numel = node.tensor.numel();
            let grad = node.tensor.grad.get_or_insert_with(|| vec![0.0; numel]);
            if let Some(s) = s {
                for (g, x) in grad.iter_mut().zip(&s) {
                    *g += x;
                }
            }
        }
        Ok(())
    }

    /// `backward_seeded` with seed 1.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        self.backward_seeded(loss, 1.0)
    }

    fn propagate(&self, i: usize, g: &[f64], scratch: &mut [Option<Vec<f64>>]) {
        // Adds this node's gradient contribution to each differentiable input.
        let nodes = &self.nodes;
        let need = |id: TensorId| nodes[id.0].tensor.requires_grad;
        macro_rules! acc {
            ($id:expr) => {
                scratch[$id.0].get_or_insert_with(|| vec![0.0; nodes[$id.0].tensor.numel()])
            };
        }
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = (nodes[a.0].tensor.shape[0], nodes[a.0].tensor.shape[1]);
                let n = nodes[b.0].tensor.shape[1];
                if need(*a) {
                    let bd = nodes[b.0].tensor.data();
                    mm_nt_acc(m, n, k, g, bd, acc!(a));
                }
                if need(*b) {
                    let ad = nodes[a.0].tensor.data();
                    mm_tn_acc(k, m, n, ad, g, acc!(b));
                }
            }
            Op::MatVec { m, v } => {
                let (r, c) = (nodes[m.0].tensor.shape[0], nodes[m.0].tensor.shape[1]);
                if need(*m) {
                    let vd = nodes[v.0].tensor.data().to_vec();
                    let dm = acc!(m);
                    for i in 0..r {
                        let gi = g[i];
                        for j in 0..c {
                            dm[i * c + j] += gi * vd[j];
                        }
                    }
                }
                if need(*v) {
                    let md = nodes[m.0].tensor.data();
                    let dv = acc!(v);
                    for i in 0..r {
                        let gi = g[i];
                        for j in 0..c {
                            dv[j] += gi * md[i * c + j];
                        }
                    }
                }
            }
            Op::VecMat { v, m } => {
                let (r, c) = (nodes[m.0].tensor.shape[0], nodes[m.0].tensor.shape[1]);
                if need(*v) {
                    let md = nodes[m.0].tensor.data();
                    let dv = acc!(v);
                    for i in 0..r {
                        let mut s = 0.0;
                        for j in 0..c {
                            s += md[i * c + j] * g[j];
                        }
                        dv[i] += s;
                    }
                }
                if need(*m) {
                    let vd = nodes[v.0].tensor.data().to_vec();
                    let dm = acc!(m);
                    for i in 0..r {
                        let vi = vd[i];
                        for j in 0..c {
                            dm[i * c + j] += vi * g[j];
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for id in [a, b] {
                    if need(*id) {
                        let d = acc!(id);
                        for (x, y) in d.iter_mut().zip(g) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Scale { a, c } => {
                if need(*a) {
                    let d = acc!(a);
                    for (x, y) in d.iter_mut().zip(g) {
                        *x += c * y;
                    }
                }
            }
            Op::LeakyRelu { a, slope } => {
                if need(*a) {
                    let input = nodes[a.0].tensor.data();
                    let d = acc!(a);
                    for ((x, y), &inp) in d.iter_mut().zip(g).zip(input) {
                        *x += if inp >= 0.0 { *y } else { slope * y };
                    }
                }
            }
            Op::Elu { a } => {
                if need(*a) {
                    let out = nodes[i].tensor.data();
                    let d = acc!(a);
                    for ((x, y), &o) in d.iter_mut().zip(g).zip(out) {
                        // For x < 0 the output is exp(x)-1, so d/dx = out+1.
                        *x += if o >= 0.0 { *y } else { (o + 1.0) * y };
                    }
                }
            }
            Op::Dropout { a, mask } => {
                if need(*a) {
                    let d = acc!(a);
                    for ((x, y), m) in d.iter_mut().zip(g).zip(mask) {
                        *x += y * m;
                    }
                }
            }
            Op::Slice { a, start } => {
                if need(*a) {
                    let d = acc!(a);
                    for (j, y) in g.iter().enumerate() {
                        d[start + j] += y;
                    }
                }
            }
            Op::Gather { a, idx } => {
                if need(*a) {
                    let d = acc!(a);
                    for (&ix, y) in idx.iter().zip(g) {
                        d[ix] += y;
                    }
                }
            }
            Op::SegmentSoftmax { a, segments } => {
                if need(*a) {
                    let out = nodes[i].tensor.data();
                    let num_seg = segments.iter().max().unwrap() + 1;
                    let mut seg_dot = vec![0.0; num_seg];
                    for (e, &s) in segments.iter().enumerate() {
                        seg_dot[s] += g[e] * out[e];
                    }
                    let d = acc!(a);
                    for (e, &s) in segments.iter().enumerate() {
                        d[e] += out[e] * (g[e] - seg_dot[s]);
                    }
                }
            }
            Op::EdgeAggregate {
                alpha,
                feats,
                src,
                dst,
            } => {
                let d = nodes[feats.0].tensor.shape[1];
                if need(*alpha) {
                    let fd = nodes[feats.0].tensor.data();
                    let da = acc!(alpha);
                    for e in 0..src.len() {
                        let go = &g[dst[e] * d..(dst[e] + 1) * d];
                        let f = &fd[src[e] * d..(src[e] + 1) * d];
                        da[e] += go.iter().zip(f).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
                if need(*feats) {
                    let ad = nodes[alpha.0].tensor.data().to_vec();
                    let df = acc!(feats);
                    for e in 0..src.len() {
                        let w = ad[e];
                        let go = &g[dst[e] * d..(dst[e] + 1) * d];
                        let fslot = &mut df[src[e] * d..(src[e] + 1) * d];
                        for j in 0..d {
                            fslot[j] += w * go[j];
                        }
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let rows = nodes[i].tensor.shape[0];
                let total = nodes[i].tensor.shape[1];
                let mut col = 0;
                for &p in parts {
                    let w = nodes[p.0].tensor.shape[1];
                    if need(p) {
                        let d = acc!(p);
                        for r in 0..rows {
                            for j in 0..w {
                                d[r * w + j] += g[r * total + col + j];
                            }
                        }
                    }
                    col += w;
                }
            }
            Op::MeanParts { parts } => {
                let inv = 1.0 / parts.len() as f64;
                for &p in parts {
                    if need(p) {
                        let d = acc!(p);
                        for (x, y) in d.iter_mut().zip(g) {
                            *x += inv * y;
                        }
                    }
                }
            }
            Op::StackRows { parts } => {
                let d_len = nodes[i].tensor.shape[1];
                for (r, &p) in parts.iter().enumerate() {
                    if need(p) {
                        let d = acc!(p);
                        for j in 0..d_len {
                            d[j] += g[r * d_len + j];
                        }
                    }
                }
            }
            Op::MeanRows { a } => {
                if need(*a) {
                    let (r, c) = (nodes[a.0].tensor.shape[0], nodes[a.0].tensor.shape[1]);
                    let inv = 1.0 / r as f64;
                    let d = acc!(a);
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += inv * g[j];
                        }
                    }
                }
            }
            Op::SumRows { a } => {
                if need(*a) {
                    let (r, c) = (nodes[a.0].tensor.shape[0], nodes[a.0].tensor.shape[1]);
                    let d = acc!(a);
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j];
                        }
                    }
                }
            }
            Op::MaxRows { a, argmax } => {
                if need(*a) {
                    let c = nodes[a.0].tensor.shape[1];
                    let d = acc!(a);
                    for (j, &row) in argmax.iter().enumerate() {
                        d[row * c + j] += g[j];
                    }
                }
            }
            Op::LogSoftmax { a } => {
                if need(*a) {
                    let out = nodes[i].tensor.data();
                    let sa = &nodes[a.0].tensor.shape;
                    let (rows, c) = if sa.len() == 1 {
                        (1, sa[0])
                    } else {
                        (sa[0], sa[1])
                    };
                    let d = acc!(a);
                    for r in 0..rows {
                        let gsum: f64 = g[r * c..(r + 1) * c].iter().sum();
                        for j in 0..c {
                            let p = out[r * c + j].exp();
                            d[r * c + j] += g[r * c + j] - p * gsum;
                        }
                    }
                }
            }
            Op::Pick { a, index } => {
                if need(*a) {
                    acc!(a)[*index] += g[0];
                }
            }
            Op::PickPerRow { a, idx } => {
                if need(*a) {
                    let c = nodes[a.0].tensor.shape[1];
                    let d = acc!(a);
                    for (i, &j) in idx.iter().enumerate() {
                        d[i * c + j] += g[i];
                    }
                }
            }
            Op::MeanAll { a } => {
                if need(*a) {
                    let n = nodes[a.0].tensor.numel();
                    let gv = g[0] / n as f64;
                    let d = acc!(a);
                    for x in d.iter_mut() {
                        *x += gv;
                    }
                }
            }
        }
    }
}
