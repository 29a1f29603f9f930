//! Training-free knowledge tracing: students' interaction histories are
//! clustered into schemas, exemplary peers are stored as annotated
//! paradigms, and predictions are made from retrieved paradigms under an
//! explicit difficulty-spike constraint.
//!
//! Numeric kernels are generic over [`num::Scalar`] (`f32` or `f64`); the
//! pipeline itself runs on `f64`, and the aliases below name the concrete
//! types.

pub mod bank;
pub mod config;
pub mod embed;
pub mod error;
pub mod eval;
pub mod http;
pub mod inference;
pub mod ingest;
pub mod jsonl;
pub mod llm;
pub mod metrics;
pub mod model;
pub mod num;
pub mod prompt;
pub mod retrieval;
pub mod schema;
pub mod synth;
pub mod text;

pub use config::Config;
pub use error::{Error, ErrorClass, Result};
pub use eval::{evaluate_split, run_ablations, Artifacts, EvalReport};
pub use inference::{predict, Ablation, InferenceConfig, Pipeline, Predictor};
pub use model::{
    Annotation, ClusterId, Constraint, DifficultyTag, Interaction, KeyPattern, MemoryEntry, PredictionRecord,
    RetrievalCandidate, Split, StudentSequence,
};

pub type Embedding = model::EmbeddingVector<f64>;
pub type Embedding32 = model::EmbeddingVector<f32>;
pub type Ctfidf = schema::CtfidfTable<f64>;
