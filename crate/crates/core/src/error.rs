use crate::network::ValidationReport;
use crate::phase::Phase;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    InvalidNetwork(ValidationReport),
    #[error("line {from}->{to}: impedance matrix is singular")]
    SingularLine { from: usize, to: usize },
    #[error("line {from}->{to}: {reason}")]
    BadImpedance {
        from: usize,
        to: usize,
        reason: String,
    },
    #[error("matrix is singular (reciprocal condition {rcond:e})")]
    SingularMatrix { rcond: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid phase ordering: {0}")]
    InvalidOrdering(String),
    #[error("channel {node}_{phase} has zero variance")]
    DegenerateChannel { node: usize, phase: Phase },
    #[error("node {0} has no measured channels and is not a three-phase datum")]
    UnmeasuredNode(usize),
    #[error("no three-phase node available to seed the tree")]
    NoThreePhaseNode,
    #[error("missing pair score for ({i}, {j})")]
    MissingScore { i: usize, j: usize },
    #[error("edge set does not reach node {0} from the root")]
    Disconnected(usize),
    #[error("{0}")]
    Format(String),
    #[error("trial {trial}: {source}")]
    Trial { trial: usize, source: Box<Error> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI error envelope.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidNetwork(_) => "invalid_network",
            Error::SingularLine { .. } => "singular_line",
            Error::BadImpedance { .. } => "bad_impedance",
            Error::SingularMatrix { .. } => "singular_matrix",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::InvalidOrdering(_) => "invalid_ordering",
            Error::DegenerateChannel { .. } => "degenerate_channel",
            Error::UnmeasuredNode(_) => "unmeasured_node",
            Error::NoThreePhaseNode => "no_three_phase_node",
            Error::MissingScore { .. } => "missing_score",
            Error::Disconnected(_) => "disconnected",
            Error::Format(_) => "format",
            Error::Trial { source, .. } => source.kind(),
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
