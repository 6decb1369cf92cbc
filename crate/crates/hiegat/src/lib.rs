//! Hierarchical graph attention networks (HieGAT) for text classification.
//!
//! A sample is modelled at three semantic levels, each as a small graph with
//! n-gram window adjacency:
//!
//! * **word level** — one graph per sentence, nodes are token positions,
//!   features come from a global embedding table `M1`;
//! * **sentence level** — one graph per sample, nodes are sentences, features
//!   are the word-level readout vectors;
//! * **document level** — one graph over all token positions (the sample
//!   treated as one long sentence), features from a second table `M2`.
//!
//! Graph attention layers run at every level, each level is read out, passed
//! through its own linear + log-softmax head, and the three log-probability
//! vectors are fused with convex weights driven by the sample's sentence
//! count. Training is plain mini-batch cross-entropy over a minimal
//! reverse-mode tensor tape ([`tensor::Tape`]).

pub mod error;
pub mod gat;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod optim;
pub mod reference;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::HiegatError;
