use std::path::PathBuf;

/// Crate-wide error type.
///
/// The variants map onto the failure classes the command-line tool
/// distinguishes: data/usage problems (bad shapes, bad files, bad
/// configuration) versus failed checks (an invariant that did not hold, an
/// evaluation that is undefined on the given input).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two operands have incompatible shapes; both shapes are named so the
    /// message is actionable without a debugger.
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A structurally invalid configuration: head count not dividing the
    /// channel width, a reduction that leaves an empty bottleneck, an empty
    /// benchmark grid, and so on.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A value outside an operation's domain, e.g. a negative threshold.
    #[error("domain error: {0}")]
    Domain(String),

    /// The caller broke a documented precondition, e.g. detections not
    /// sorted by descending score.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A malformed input file. The message carries the offending location
    /// (line/column, and the field where applicable).
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    /// Average precision is undefined because the ground-truth set is empty.
    #[error("undefined AP: ground-truth set is empty")]
    UndefinedAp,

    /// A gradient check where every coordinate was excluded has nothing to
    /// compare and must not report success.
    #[error("gradient check has no checkable coordinates")]
    NoCheckableCoordinates,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code the command-line tool maps this error onto:
    /// `2` for usage/parse/configuration problems, `1` for failed checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ShapeMismatch { .. }
            | Error::Config(_)
            | Error::Domain(_)
            | Error::Precondition(_)
            | Error::Parse { .. }
            | Error::Io(_) => 2,
            Error::UndefinedAp | Error::NoCheckableCoordinates => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
