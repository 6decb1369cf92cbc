//! The full three-level model: embedding tables, per-level attention
//! stacks, level readouts, per-level classification heads, and the
//! sentence-count-driven fusion of the three log-probability outputs.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HiegatError, Result};
use crate::gat::{
    gat_forward, readout, Activation, GatHead, GatLayerParams, GatOutput, HeadMerge, ReadoutMode,
    TapeBindings,
};
use crate::graph::{GraphWindows, LevelGraph, SampleGraphs};
use crate::tensor::{Tape, TensorId};

// ── parameter registry ──────────────────────────────────────────────

/// Handle to a parameter in a [`ParamStore`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct ParamId(pub(crate) usize);

/// Named trainable tensor. Storage is shared with tape leaves, so a forward
/// pass never copies parameter data.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Arc<Vec<f64>>,
}

impl Parameter {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Registry of model parameters; names are unique.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    names: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<ParamId> {
        if self.names.contains_key(name) {
            return Err(HiegatError::invalid(
                "register",
                format!("duplicate parameter name '{name}'"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(HiegatError::invalid(
                "register",
                format!(
                    "parameter '{name}': shape {shape:?} vs {} values",
                    data.len()
                ),
            ));
        }
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            shape,
            value: Arc::new(data),
        });
        self.names.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.get(name).copied()
    }

    /// Mutable access to a parameter's data for optimizer updates. Clones
    /// only if a tape still shares the storage.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Vec<f64> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    /// Snapshot of all parameter values.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params
            .iter()
            .map(|p| p.value.as_ref().clone())
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        assert_eq!(snapshot.len(), self.params.len());
        for (p, s) in self.params.iter_mut().zip(snapshot) {
            p.value = Arc::new(s.clone());
        }
    }
}

// ── configuration ───────────────────────────────────────────────────

/// Depth, head count and window size of one level's attention stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub layers: usize,
    pub heads: usize,
    pub window: usize,
}

/// How the sentence count entering the weight schedule is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPolicy {
    /// Each sample's own sentence count.
    PerSample,
    /// Sentence count averaged over the mini-batch.
    BatchMean,
}

/// Rule producing the three fusion weights for a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    /// The sentence-count schedule.
    Schedule,
    /// A fixed simplex point (zeros allowed, for ablations).
    Fixed {
        d: f64,
        s: f64,
        w: f64,
    },
    /// Schedule with one level zeroed and the survivors renormalized.
    DropDoc,
    DropSen,
    DropWord,
}

/// All model hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HieGnnConfig {
    pub embedding_dim: usize,
    pub word: LevelConfig,
    pub sen: LevelConfig,
    pub doc: LevelConfig,
    pub readout: ReadoutMode,
    pub dropout: f64,
    pub negative_slope: f64,
    pub lambda_policy: LambdaPolicy,
    pub lambda_rule: LambdaRule,
    pub num_classes: usize,
    pub seed: u64,
}

impl HieGnnConfig {
    /// Defaults: 200-dim embeddings, 1-layer/1-head word and sentence
    /// stacks, 3-layer/3-head document stack, window 2 everywhere, mean
    /// readout, dropout 0.5, slope 0.2.
    pub fn with_classes(num_classes: usize) -> Self {
        HieGnnConfig {
            embedding_dim: 200,
            word: LevelConfig {
                layers: 1,
                heads: 1,
                window: 2,
            },
            sen: LevelConfig {
                layers: 1,
                heads: 1,
                window: 2,
            },
            doc: LevelConfig {
                layers: 3,
                heads: 3,
                window: 2,
            },
            readout: ReadoutMode::Mean,
            dropout: 0.5,
            negative_slope: 0.2,
            lambda_policy: LambdaPolicy::PerSample,
            lambda_rule: LambdaRule::Schedule,
            num_classes,
            seed: 1,
        }
    }

    pub fn windows(&self) -> GraphWindows {
        GraphWindows {
            word: self.word.window,
            sen: self.sen.window,
            doc: self.doc.window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(HiegatError::Config("embedding_dim must be >= 1".into()));
        }
        for (name, lvl) in [("word", self.word), ("sen", self.sen), ("doc", self.doc)] {
            if lvl.layers == 0 || lvl.heads == 0 || lvl.window == 0 {
                return Err(HiegatError::Config(format!(
                    "{name} level needs layers, heads and window >= 1"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(HiegatError::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.num_classes < 2 {
            return Err(HiegatError::Config("need at least 2 classes".into()));
        }
        if let LambdaRule::Fixed { d, s, w } = self.lambda_rule {
            validate_fixed_lambda(d, s, w)?;
        }
        Ok(())
    }
}

pub fn validate_fixed_lambda(d: f64, s: f64, w: f64) -> Result<()> {
    if d < 0.0 || s < 0.0 || w < 0.0 || ((d + s + w) - 1.0).abs() > 1e-9 {
        return Err(HiegatError::Config(format!(
            "fixed lambda weights must be non-negative and sum to 1, got ({d}, {s}, {w})"
        )));
    }
    Ok(())
}

// ── fusion weights ──────────────────────────────────────────────────

/// Convex weights over the document, sentence and word level outputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaWeights {
    pub lambda_d: f64,
    pub lambda_s: f64,
    pub lambda_w: f64,
    /// The sentence count the weights were derived from.
    pub source_xs: f64,
}

/// The sentence-count schedule:
/// `lambda_d = 1 / (ln(x_s) + 1)`, with the remainder split 2:1 between
/// the sentence and word levels.
pub fn compute_lambda(x_s: f64) -> Result<LambdaWeights> {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN counts
    if !(x_s >= 1.0) {
        return Err(HiegatError::invalid(
            "compute_lambda",
            format!("sentence count must be >= 1, got {x_s}"),
        ));
    }
    let lambda_d = 1.0 / (x_s.ln() + 1.0);
    let rest = 1.0 - lambda_d;
    Ok(LambdaWeights {
        lambda_d,
        lambda_s: 2.0 / 3.0 * rest,
        lambda_w: 1.0 / 3.0 * rest,
        source_xs: x_s,
    })
}

/// Weights for a given rule at a given sentence count.
pub fn lambda_for_rule(rule: LambdaRule, x_s: f64) -> Result<LambdaWeights> {
    match rule {
        LambdaRule::Schedule => compute_lambda(x_s),
        LambdaRule::Fixed { d, s, w } => Ok(LambdaWeights {
            lambda_d: d,
            lambda_s: s,
            lambda_w: w,
            source_xs: x_s,
        }),
        // Zero one level, renormalize the other two keeping their schedule
        // proportions. The sentence:word remainder split is constantly 2:1,
        // so dropping the doc level gives fixed (0, 2/3, 1/3).
        LambdaRule::DropDoc => Ok(LambdaWeights {
            lambda_d: 0.0,
            lambda_s: 2.0 / 3.0,
            lambda_w: 1.0 / 3.0,
            source_xs: x_s,
        }),
        LambdaRule::DropSen => {
            let l = compute_lambda(x_s)?;
            let z = l.lambda_d + l.lambda_w;
            Ok(LambdaWeights {
                lambda_d: l.lambda_d / z,
                lambda_s: 0.0,
                lambda_w: l.lambda_w / z,
                source_xs: x_s,
            })
        }
        LambdaRule::DropWord => {
            let l = compute_lambda(x_s)?;
            let z = l.lambda_d + l.lambda_s;
            Ok(LambdaWeights {
                lambda_d: l.lambda_d / z,
                lambda_s: l.lambda_s / z,
                lambda_w: 0.0,
                source_xs: x_s,
            })
        }
    }
}

// ── embedding tables ────────────────────────────────────────────────

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EmbeddingRole {
    M1WordLevel,
    M2DocLevel,
}

/// A trainable `[vocab, dim]` lookup table.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub matrix: ParamId,
    pub role: EmbeddingRole,
}

// ── the model ───────────────────────────────────────────────────────

/// Per-level log-probability outputs (`None` when the level was skipped
/// because its fusion weight is zero).
#[derive(Clone, Copy, Debug)]
pub struct LevelOutputs {
    pub word: Option<TensorId>,
    pub sen: Option<TensorId>,
    pub doc: Option<TensorId>,
}

/// Result of one sample's forward pass.
pub struct SampleOutput {
    /// Fused `[C]` log-probability vector.
    pub yhat: TensorId,
    pub levels: LevelOutputs,
    pub lambda: LambdaWeights,
}

struct Projection {
    w: ParamId,
    b: ParamId,
}

/// The hierarchical attention model.
pub struct HieGat {
    pub config: HieGnnConfig,
    pub params: ParamStore,
    pub vocab_size: usize,
    m1: EmbeddingTable,
    m2: EmbeddingTable,
    word_stack: Vec<GatLayerParams>,
    sen_stack: Vec<GatLayerParams>,
    doc_stack: Vec<GatLayerParams>,
    proj_word: Projection,
    proj_sen: Projection,
    proj_doc: Projection,
}

fn uniform(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rng, rows * cols, bound)
}

fn build_stack(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    prefix: &str,
    level: LevelConfig,
    dim: usize,
    slope: f64,
) -> Result<Vec<GatLayerParams>> {
    let mut stack = Vec::with_capacity(level.layers);
    let mut d_in = dim;
    for l in 0..level.layers {
        let final_layer = l + 1 == level.layers;
        let mut heads = Vec::with_capacity(level.heads);
        for h in 0..level.heads {
            let w = store.register(
                &format!("{prefix}.l{l}.h{h}.w"),
                vec![d_in, dim],
                xavier(rng, d_in, dim),
            )?;
            let a = store.register(
                &format!("{prefix}.l{l}.h{h}.a"),
                vec![2 * dim],
                xavier(rng, 2 * dim, 1),
            )?;
            heads.push(GatHead { w, a });
        }
        let merge = if final_layer {
            HeadMerge::Mean
        } else {
            HeadMerge::Concat
        };
        let layer = GatLayerParams {
            heads,
            merge,
            negative_slope: slope,
            d_in,
            d_out: dim,
        };
        d_in = layer.output_width();
        stack.push(layer);
    }
    Ok(stack)
}

impl HieGat {
    /// Builds a model with freshly initialized parameters. Embeddings are
    /// uniform in [-0.01, 0.01]; weights use Xavier-uniform initialization.
    pub fn new(config: HieGnnConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(HiegatError::Config("vocabulary must not be empty".into()));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
        use rand::SeedableRng;
        let n = config.embedding_dim;
        let c = config.num_classes;
        let mut params = ParamStore::new();

        let m1_id = params.register(
            "m1",
            vec![vocab_size, n],
            uniform(&mut rng, vocab_size * n, 0.01),
        )?;
        let m2_id = params.register(
            "m2",
            vec![vocab_size, n],
            uniform(&mut rng, vocab_size * n, 0.01),
        )?;

        let word_stack = build_stack(
            &mut params,
            &mut rng,
            "word",
            config.word,
            n,
            config.negative_slope,
        )?;
        let sen_stack = build_stack(
            &mut params,
            &mut rng,
            "sen",
            config.sen,
            n,
            config.negative_slope,
        )?;
        let doc_stack = build_stack(
            &mut params,
            &mut rng,
            "doc",
            config.doc,
            n,
            config.negative_slope,
        )?;

        let projection = |name: &str,
                          params: &mut ParamStore,
                          rng: &mut rand_chacha::ChaCha8Rng|
         -> Result<Projection> {
            Ok(Projection {
                w: params.register(&format!("proj.{name}.w"), vec![n, c], xavier(rng, n, c))?,
                b: params.register(&format!("proj.{name}.b"), vec![c], vec![0.0; c])?,
            })
        };
        let proj_word = projection("word", &mut params, &mut rng)?;
        let proj_sen = projection("sen", &mut params, &mut rng)?;
        let proj_doc = projection("doc", &mut params, &mut rng)?;

        Ok(HieGat {
            config,
            params,
            vocab_size,
            m1: EmbeddingTable {
                matrix: m1_id,
                role: EmbeddingRole::M1WordLevel,
            },
            m2: EmbeddingTable {
                matrix: m2_id,
                role: EmbeddingRole::M2DocLevel,
            },
            word_stack,
            sen_stack,
            doc_stack,
            proj_word,
            proj_sen,
            proj_doc,
        })
    }

    pub fn word_embedding(&self) -> &EmbeddingTable {
        &self.m1
    }

    pub fn doc_embedding(&self) -> &EmbeddingTable {
        &self.m2
    }

    #[allow(clippy::too_many_arguments)]
    fn run_stack(
        &self,
        tape: &mut Tape,
        binds: &mut TapeBindings,
        features: TensorId,
        graph: &LevelGraph,
        stack: &[GatLayerParams],
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<TensorId> {
        let mut h = features;
        for (l, layer) in stack.iter().enumerate() {
            let activation = if l + 1 < stack.len() {
                Activation::Elu
            } else {
                Activation::None
            };
            let GatOutput { nodes, .. } = gat_forward(
                tape,
                &self.params,
                binds,
                h,
                graph,
                layer,
                activation,
                self.config.dropout,
                training,
                rng,
            )?;
            h = nodes;
        }
        Ok(h)
    }

    /// Word level: one attention pass per sentence graph with `M1` features,
    /// a readout per sentence, and the mean of the sentence vectors.
    /// Returns the per-sentence vectors (reused by the sentence level) and
    /// the level output before projection.
    pub fn word_level_forward(
        &self,
        tape: &mut Tape,
        binds: &mut TapeBindings,
        graphs: &SampleGraphs,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<(Vec<TensorId>, TensorId)> {
        let mut sentence_vectors = Vec::with_capacity(graphs.word_graphs.len());
        for graph in &graphs.word_graphs {
            let rows = Arc::new(graph.node_refs.clone());
            let feats = binds.bind_embedding_rows(tape, &self.params, self.m1.matrix, rows)?;
            let nodes =
                self.run_stack(tape, binds, feats, graph, &self.word_stack, training, rng)?;
            sentence_vectors.push(readout(tape, nodes, self.config.readout)?);
        }
        let r_w = tape.mean_parts(&sentence_vectors)?;
        Ok((sentence_vectors, r_w))
    }

    /// Sentence level: the word-level sentence vectors become node features
    /// of the sentence graph, one attention pass updates them, and the mean
    /// over sentence nodes is the level output.
    pub fn sen_level_forward(
        &self,
        tape: &mut Tape,
        binds: &mut TapeBindings,
        sentence_vectors: &[TensorId],
        sen_graph: &LevelGraph,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<TensorId> {
        if sentence_vectors.len() != sen_graph.num_nodes {
            return Err(HiegatError::dims(
                "sen_level_forward",
                &[sentence_vectors.len()],
                &[sen_graph.num_nodes],
            ));
        }
        let feats = tape.stack_rows(sentence_vectors)?;
        let nodes = self.run_stack(
            tape,
            binds,
            feats,
            sen_graph,
            &self.sen_stack,
            training,
            rng,
        )?;
        tape.mean_rows(nodes)
    }

    /// Document level: all tokens as one graph with `M2` features, the deep
    /// attention stack, and a mean over node features.
    pub fn doc_level_forward(
        &self,
        tape: &mut Tape,
        binds: &mut TapeBindings,
        doc_graph: &LevelGraph,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<TensorId> {
        let rows = Arc::new(doc_graph.node_refs.clone());
        let feats = binds.bind_embedding_rows(tape, &self.params, self.m2.matrix, rows)?;
        let nodes = self.run_stack(
            tape,
            binds,
            feats,
            doc_graph,
            &self.doc_stack,
            training,
            rng,
        )?;
        tape.mean_rows(nodes)
    }

    fn project(
        &self,
        tape: &mut Tape,
        binds: &mut TapeBindings,
        proj: &Projection,
        level_vec: TensorId,
    ) -> Result<TensorId> {
        let w = binds.bind(tape, &self.params, proj.w)?;
        let b = binds.bind(tape, &self.params, proj.b)?;
        let logits = tape.vecmat(level_vec, w)?;
        let shifted = tape.add(logits, b)?;
        tape.log_softmax(shifted)
    }

    /// The convex fusion of the per-level log-probability vectors.
    /// Zero-weight levels are skipped; a single weight-one level passes
    /// through unchanged.
    pub fn fuse_and_predict(
        tape: &mut Tape,
        outputs: &LevelOutputs,
        lambda: &LambdaWeights,
    ) -> Result<TensorId> {
        let mut terms: Vec<(TensorId, f64)> = Vec::new();
        for (id, weight, name) in [
            (outputs.doc, lambda.lambda_d, "doc"),
            (outputs.sen, lambda.lambda_s, "sen"),
            (outputs.word, lambda.lambda_w, "word"),
        ] {
            if weight == 0.0 {
                continue;
            }
            match id {
                Some(id) => terms.push((id, weight)),
                None => {
                    return Err(HiegatError::invalid(
                        "fuse_and_predict",
                        format!("{name} level output missing but its weight is {weight}"),
                    ))
                }
            }
        }
        if terms.is_empty() {
            return Err(HiegatError::invalid(
                "fuse_and_predict",
                "all weights are zero",
            ));
        }
        if terms.len() == 1 && terms[0].1 == 1.0 {
            return Ok(terms[0].0);
        }
        let mut acc = tape.scale(terms[0].0, terms[0].1);
        for &(id, weight) in &terms[1..] {
            let scaled = tape.scale(id, weight);
            acc = tape.add(acc, scaled)?;
        }
        Ok(acc)
    }

    /// Full forward pass for one sample. Levels whose fusion weight is zero
    /// are not computed at all.
    pub fn forward_sample(
        &self,
        tape: &mut Tape,
        binds: &mut TapeBindings,
        graphs: &SampleGraphs,
        lambda: &LambdaWeights,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<SampleOutput> {
        let need_word = lambda.lambda_w != 0.0 || lambda.lambda_s != 0.0;
        let need_sen = lambda.lambda_s != 0.0;
        let need_doc = lambda.lambda_d != 0.0;

        let mut outputs = LevelOutputs {
            word: None,
            sen: None,
            doc: None,
        };
        if need_word {
            let (sentence_vectors, r_w) =
                self.word_level_forward(tape, binds, graphs, training, rng)?;
            if lambda.lambda_w != 0.0 {
                outputs.word = Some(self.project(tape, binds, &self.proj_word, r_w)?);
            }
            if need_sen {
                let r_s = self.sen_level_forward(
                    tape,
                    binds,
                    &sentence_vectors,
                    &graphs.sen_graph,
                    training,
                    rng,
                )?;
                outputs.sen = Some(self.project(tape, binds, &self.proj_sen, r_s)?);
            }
        }
        if need_doc {
            let r_d = self.doc_level_forward(tape, binds, &graphs.doc_graph, training, rng)?;
            outputs.doc = Some(self.project(tape, binds, &self.proj_doc, r_d)?);
        }
        let yhat = Self::fuse_and_predict(tape, &outputs, lambda)?;
        Ok(SampleOutput {
            yhat,
            levels: outputs,
            lambda: *lambda,
        })
    }

    // ── checkpointing ───────────────────────────────────────────────

    /// Writes a versioned binary container: config as JSON, then every
    /// parameter as name, shape and raw little-endian data.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let config_json = serde_json::to_string(&self.config)
            .map_err(|e| HiegatError::Checkpoint(format!("config serialization failed: {e}")))?;
        out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
        out.extend_from_slice(config_json.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (_, p) in self.params.iter() {
            out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(p.shape.len() as u8);
            for &d in &p.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in p.value.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    /// Loads a checkpoint, rebuilding the model it describes. Fails loudly
    /// on any magic, version, name or shape mismatch.
    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cur = 0usize;
        let take = |cur: &mut usize, n: usize| -> Result<&[u8]> {
            if *cur + n > bytes.len() {
                return Err(HiegatError::Checkpoint("truncated checkpoint file".into()));
            }
            let s = &bytes[*cur..*cur + n];
            *cur += n;
            Ok(s)
        };
        if take(&mut cur, CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(HiegatError::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(HiegatError::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let config_len = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
        let config: HieGnnConfig = serde_json::from_slice(take(&mut cur, config_len)?)
            .map_err(|e| HiegatError::Checkpoint(format!("bad config block: {e}")))?;
        let count = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;

        let mut entries: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(&mut cur, 2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut cur, name_len)?.to_vec())
                .map_err(|_| HiegatError::Checkpoint("non-UTF8 parameter name".into()))?;
            let ndim = take(&mut cur, 1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = take(&mut cur, numel * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push((name, shape, data));
        }

        let m1 = entries
            .iter()
            .find(|(n, _, _)| n == "m1")
            .ok_or_else(|| HiegatError::Checkpoint("checkpoint has no embedding table".into()))?;
        let vocab_size = m1.1[0];
        let mut model = HieGat::new(config, vocab_size)?;
        if entries.len() != model.params.len() {
            return Err(HiegatError::Checkpoint(format!(
                "checkpoint has {} parameters, model needs {}",
                entries.len(),
                model.params.len()
            )));
        }
        for (name, shape, data) in entries {
            let id = model
                .params
                .find(&name)
                .ok_or_else(|| HiegatError::Checkpoint(format!("unexpected parameter '{name}'")))?;
            if model.params.get(id).shape != shape {
                return Err(HiegatError::Checkpoint(format!(
                    "parameter '{name}': checkpoint shape {:?} vs model shape {:?}",
                    shape,
                    model.params.get(id).shape
                )));
            }
            *model.params.value_mut(id) = data;
        }
        Ok(model)
    }
}

const CHECKPOINT_MAGIC: &[u8] = b"HIEGATCK";
const CHECKPOINT_VERSION: u32 = 1;
