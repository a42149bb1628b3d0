//! Desk-scale laboratory for dynamic context cutoff: a small trainable
//! decoder-only transformer processes long synthetic contexts chunk by chunk
//! with KV-cache reuse, lightweight classifiers over selected attention-head
//! activations detect context sufficiency, and an engine terminates processing
//! early. Ships with baselines (full context, static truncation, BM25 chunk
//! retrieval, oracle cutoff) and a metrics/report harness.

pub mod chunking;
pub mod config;
pub mod corpus;
pub mod engine;
pub mod ensemble;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod pipeline;
pub mod probe;
pub mod report;
pub mod rng;
pub mod tasks;
pub mod tensor;

pub use chunking::{ChunkPlan, ChunkingSpec};
// pub use config::RunConfig;
pub use engine::{AnswerResult, CutoffConfig, CutoffTrace};
pub use ensemble::EnsembleModel;
pub use model::{ForwardOutput, HeadTap, KvCache, Model, ModelConfig};
pub use optim::Parameter;
pub use probe::{ActivationExample, HeadScore, ProbeParams};
pub use tasks::{DatasetSplit, SufficiencyLabels, TaskInstance, TokenId};
pub use tensor::Tensor;
