//! Evaluation toolkit for embedding retrieval over noisy keyword metadata.

pub mod corpus;
pub mod drift;
pub mod metrics;
pub mod pooling;
pub mod relevance;
pub mod report;
pub mod retrieval;
pub mod sampling;
pub mod significance;
pub mod synthetic;
