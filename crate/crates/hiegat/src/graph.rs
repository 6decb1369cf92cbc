//! Level-graph construction with n-gram window adjacency.
//!
//! All three levels share one rule: nodes `i` and `j` are connected exactly
//! when `|i - j| <= window`, which includes a self-loop on every node.

use std::io::Write;
use std::sync::Arc;

use crate::error::{HiegatError, Result};
use crate::text::DocumentRecord;

/// Semantic level a graph belongs to.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Level {
    Word,
    Sen,
    Doc,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Word => "word",
            Level::Sen => "sen",
            Level::Doc => "doc",
        }
    }
}

/// Directed edges grouped by destination node, ready for attention.
///
/// Edges for node `i` occupy `offsets[i]..offsets[i+1]`; within that range
/// `src` holds the neighbor and `dst` is constantly `i`.
#[derive(Clone, Debug)]
pub struct EdgeIndex {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub offsets: Vec<usize>,
}

/// Adjacency plus node-feature references for one graph at one level.
///
/// `node_refs` point into the word embedding tables for word/doc graphs
/// (token ids, repeats allowed) and hold sentence indices for sen graphs.
#[derive(Clone, Debug)]
pub struct LevelGraph {
    pub level: Level,
    pub node_refs: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    pub num_nodes: usize,
    index: Arc<EdgeIndex>,
}

impl LevelGraph {
    pub fn index(&self) -> &Arc<EdgeIndex> {
        &self.index
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
}

/// The three graph views of one sample.
#[derive(Clone, Debug)]
pub struct SampleGraphs {
    pub word_graphs: Vec<LevelGraph>,
    pub sen_graph: LevelGraph,
    pub doc_graph: LevelGraph,
    pub sentence_count: usize,
}

/// Builds the window-adjacency edge set over `num_nodes` positional nodes:
/// directed edges `(src, dst)` for every pair with `|src - dst| <= window`,
/// self-loops included. Edges come out grouped by destination.
pub fn build_window_graph(
    level: Level,
    node_refs: Vec<usize>,
    window: usize,
) -> Result<LevelGraph> {
    let num_nodes = node_refs.len();
    if num_nodes == 0 {
        return Err(HiegatError::invalid(
            "build_window_graph",
            "graph must have at least one node",
        ));
    }
    if window == 0 {
        return Err(HiegatError::invalid(
            "build_window_graph",
            "window must be at least 1",
        ));
    }
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut offsets = Vec::with_capacity(num_nodes + 1);
    offsets.push(0);
    for i in 0..num_nodes {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(num_nodes - 1);
        for j in lo..=hi {
            src.push(j);
            dst.push(i);
        }
        offsets.push(src.len());
    }
    let edges = src.iter().zip(&dst).map(|(&s, &d)| (s, d)).collect();
    Ok(LevelGraph {
        level,
        node_refs,
        edges,
        num_nodes,
        index: Arc::new(EdgeIndex { src, dst, offsets }),
    })
}

/// Builds all three level graphs for one document: a word graph per
/// sentence (features in `M1`), a sentence graph over the `k` sentences,
/// and a document graph over all tokens (features in `M2`).
pub fn build_sample_graphs(doc: &DocumentRecord, windows: GraphWindows) -> Result<SampleGraphs> {
    if doc.sentence_spans.is_empty() || doc.tokens.is_empty() {
        return Err(HiegatError::invalid(
            "build_sample_graphs",
            format!("document {} has no sentences or no tokens", doc.doc_id),
        ));
    }
    let mut word_graphs = Vec::with_capacity(doc.sentence_spans.len());
    for &(start, end) in &doc.sentence_spans {
        let refs: Vec<usize> = doc.tokens[start..end].iter().map(|&t| t as usize).collect();
        word_graphs.push(build_window_graph(Level::Word, refs, windows.word)?);
    }
    let k = word_graphs.len();
    let sen_graph = build_window_graph(Level::Sen, (0..k).collect(), windows.sen)?;
    let doc_refs: Vec<usize> = doc.tokens.iter().map(|&t| t as usize).collect();
    let doc_graph = build_window_graph(Level::Doc, doc_refs, windows.doc)?;
    Ok(SampleGraphs {
        word_graphs,
        sen_graph,
        doc_graph,
        sentence_count: k,
    })
}

/// Window size per level. All default to 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphWindows {
    pub word: usize,
    pub sen: usize,
    pub doc: usize,
}

impl Default for GraphWindows {
    fn default() -> Self {
        GraphWindows {
            word: 2,
            sen: 2,
            doc: 2,
        }
    }
}

/// Writes a sample's graphs as `level src dst` lines, one edge per line.
pub fn dump_edge_list(graphs: &SampleGraphs, mut out: impl Write) -> std::io::Result<()> {
    for (i, g) in graphs.word_graphs.iter().enumerate() {
        for &(s, d) in &g.edges {
            writeln!(out, "word[{i}] {s} {d}")?;
        }
    }
    for &(s, d) in &graphs.sen_graph.edges {
        writeln!(out, "sen {s} {d}")?;
    }
    for &(s, d) in &graphs.doc_graph.edges {
        writeln!(out, "doc {s} {d}")?;
    }
    Ok(())
}
