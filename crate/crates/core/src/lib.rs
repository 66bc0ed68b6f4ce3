//! Prompt-based few-shot classification on graphs.
//!
//! A pair of encoders (an MLP and a GCN) is pre-trained contrastively on an
//! unlabeled graph. Few-shot classes are then attached to the graph as
//! virtual prototype nodes whose connections to the real nodes are the only
//! trainable parameters. Nodes (or whole graphs) are classified by cosine
//! similarity between their MLP embedding and each prototype's GCN embedding.

pub mod autodiff;
pub mod data;
pub mod encoders;
mod error;
pub mod experiment;
pub mod gradcheck;
pub mod graph;
pub mod inference;
pub mod optim;
pub mod pretrain;
pub mod prompt;
pub mod prompted;
pub mod tensor;

pub use autodiff::{Tape, Var};
pub use encoders::{EncoderParams, Mode};
pub use error::{PspError, Result};
pub use experiment::{ExperimentConfig, MetricLine, Variant};
pub use graph::{build_csr, gcn_normalize, GraphData};
pub use inference::{evaluate, predict, Prediction};
pub use optim::{AdamState, Param};
pub use pretrain::{pretrain, PretrainConfig, PretrainOutcome};
pub use prompt::{prompt_tune, LabeledSet, PromptConfig, PromptOutcome, PromptedGraph, Task};
pub use tensor::{CsrMatrix, Tensor};
