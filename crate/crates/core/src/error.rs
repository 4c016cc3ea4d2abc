use thiserror::Error;

use crate::structure::Member;
use crate::NodeId;

/// Everything the engine can refuse to do.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MorphoError {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("degenerate geometry: nodes {quadruple:?} are coplanar (|volume| = {volume:.3e})")]
    DegenerateGeometry { quadruple: [NodeId; 4], volume: f64 },

    #[error("degenerate member {0}: coincident endpoints")]
    DegenerateMember(Member),

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("cell is not a valid unicellular tensegrity: zero force density on {0}")]
    ZeroForceDensity(Member),

    #[error("cell classification failed: sign groups are {positive}/{negative}, expected 6/4")]
    Classification { positive: usize, negative: usize },

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("ambiguous typology: near-zero force density on {0:?}")]
    AmbiguousTypology(Vec<Member>),

    #[error("mechanism risk: new cell shares {shared} node(s) with the structure; adhesion needs 3 or more")]
    MechanismRisk { shared: usize },

    #[error("redundant cell: every member of the new cell is already present")]
    RedundantCell,

    #[error("cannot fuse {0}: no self-stress state carries force in it")]
    CannotFuse(Member),

    #[error("unknown member {0}")]
    UnknownMember(Member),

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("numeric degeneracy: {0}")]
    NumericDegeneracy(String),

    #[error("incomplete basis: found {found} of {needed} virtual-cell states after {evaluated} candidates ({detail})")]
    IncompleteBasis {
        needed: usize,
        found: usize,
        evaluated: usize,
        detail: String,
    },

    #[error("no solution found after {iterations} iterations; best residuals {residuals:?}")]
    NoSolution { iterations: usize, residuals: Vec<f64> },

    #[error("placement residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    PlacementRejected { residual: f64, tolerance: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("step {index}: {source}")]
    Step {
        index: usize,
        #[source]
        source: Box<MorphoError>,
    },

    #[error("step {index}: expected {what} = {expected}, observed {observed}")]
    Expectation {
        index: usize,
        what: String,
        expected: String,
        observed: String,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl MorphoError {
    /// Short machine-readable code, used by the service's structured errors.
    pub fn code(&self) -> &'static str {
        match self {
            MorphoError::Usage(_) => "usage",
            MorphoError::DegenerateGeometry { .. } => "degenerate_geometry",
            MorphoError::DegenerateMember(_) => "degenerate_member",
            MorphoError::DegenerateConfiguration(_) => "degenerate_configuration",
            MorphoError::ZeroForceDensity(_) => "zero_force_density",
            MorphoError::Classification { .. } => "classification",
            MorphoError::OutOfDomain(_) => "out_of_domain",
            MorphoError::AmbiguousTypology(_) => "ambiguous_typology",
            MorphoError::MechanismRisk { .. } => "mechanism_risk",
            MorphoError::RedundantCell => "redundant_cell",
            MorphoError::CannotFuse(_) => "cannot_fuse",
            MorphoError::UnknownMember(_) => "unknown_member",
            MorphoError::UnknownNode(_) => "unknown_node",
            MorphoError::NumericDegeneracy(_) => "numeric_degeneracy",
            MorphoError::IncompleteBasis { .. } => "incomplete_basis",
            MorphoError::NoSolution { .. } => "no_solution",
            MorphoError::PlacementRejected { .. } => "placement_rejected",
            MorphoError::Invariant(_) => "invariant",
            MorphoError::Step { source, .. } => source.code(),
            MorphoError::Expectation { .. } => "expectation",
            MorphoError::Parse { .. } => "parse",
            MorphoError::Io(_) => "io",
        }
    }

    /// The error without its step wrapper.
    pub fn root(&self) -> &MorphoError {
        match self {
            MorphoError::Step { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn at_step(self, index: usize) -> Self {
        match self {
            e @ MorphoError::Step { .. } | e @ MorphoError::Expectation { .. } => e,
            other => MorphoError::Step {
                index,
                source: Box::new(other),
            },
        }
    }
}

impl From<std::io::Error> for MorphoError {
    fn from(e: std::io::Error) -> Self {
        MorphoError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, MorphoError>;
