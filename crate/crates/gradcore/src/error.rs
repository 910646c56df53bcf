use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("backward requested for node {node}, but the graph only holds {len} evaluated nodes")]
    NotEvaluated { node: usize, len: usize },

    #[error("unknown input `{0}`")]
    UnknownInput(String),

    #[error("non-finite gradient for `{0}`; optimizer step rejected")]
    NonFiniteGradient(String),
}
