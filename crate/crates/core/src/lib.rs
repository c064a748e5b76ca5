//! Dense table retrieval over partial tables sampled from row clusters.
//!
//! Tables are split into row instances, embedded and clustered with K-means. Rows sampled from
//! each cluster form partial tables, a chat model writes questions about them, and those
//! questions train a linear adapter over the frozen embeddings with an InfoNCE loss against
//! hard negatives. [`pipeline`] wires the stages together over a cached on-disk workspace.
//!
//! Numeric code is generic over [`scalar::Scalar`]; the aliases below fix it to `f64`.

pub mod cluster;
pub mod corpus;
pub mod embed;
pub mod http;
pub mod kpt;
pub mod mining;
pub mod pipeline;
pub mod querygen;
pub mod retrieval;
pub mod scalar;
pub mod store;
pub mod synth;
pub mod train;

pub use scalar::Scalar;

pub type Adapter64 = train::Adapter<f64>;
pub type ClusterAssignment64 = cluster::ClusterAssignment<f64>;
pub type RetrievalIndex64 = retrieval::RetrievalIndex<f64>;
pub type ScoredTable64 = retrieval::ScoredTable<f64>;
pub type InfoNce64 = train::InfoNce<f64>;
