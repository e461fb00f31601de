use alloc::string::String;
use alloc::vec::Vec;

use crate::mesh::Violation;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("mesh validation failed: {}", format_violations(.0))]
    InvalidMesh(Vec<Violation>),

    #[error("invalid electrode set: {0}")]
    InvalidElectrodes(String),

    #[error("invalid conductivity specification: {0}")]
    InvalidConductivity(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("degenerate edge between vertices {0} and {1}: coincident endpoints")]
    DegenerateEdge(usize, usize),

    #[error("{count} vertices unreachable from source {source_vertex} (first: {first})")]
    Unreachable {
        source_vertex: usize,
        count: usize,
        first: usize,
    },

    #[error("vertex index {index} out of range for {len} vertices")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("electrode {electrode} coincides with vertex {vertex}: singular kernel")]
    SingularKernel { electrode: usize, vertex: usize },

    #[error("correlation undefined: only {0} vertices activated in both maps")]
    UndefinedCorrelation(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

fn format_violations(v: &[Violation]) -> String {
    use core::fmt::Write;
    let mut s = String::new();
    for (i, item) in v.iter().take(5).enumerate() {
        if i > 0 {
            s.push_str("; ");
        }
        let _ = write!(s, "{item}");
    }
    if v.len() > 5 {
        let _ = write!(s, "; ... ({} more)", v.len() - 5);
    }
    s
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
