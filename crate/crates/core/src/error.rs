use std::fmt;
use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage an error was raised in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Sampling,
    MaxIntensity,
    BasisFit,
    StainStats,
    Transform,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Sampling => "sampling",
            Stage::MaxIntensity => "max-intensity",
            Stage::BasisFit => "basis-fit",
            Stage::StainStats => "stain-stats",
            Stage::Transform => "transform",
        };
        f.write_str(name)
    }
}

/// Which image a [`FitParams`](crate::normalize::FitParams) belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Source,
    Target,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Source => "source",
            Role::Target => "target",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("unsupported image format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("corrupt or truncated image {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("region ({x}, {y}, {w}x{h}) is outside the {width}x{height} image")]
    OutOfBounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },

    #[error("strip starting at row {got} does not continue the output at row {expected}")]
    StripOrder { expected: u32, got: u32 },

    #[error("strip shape {got_width}x{got_height} does not fit a {width}-pixel-wide output with {remaining} rows left")]
    StripShape {
        got_width: u32,
        got_height: u32,
        width: u32,
        remaining: u32,
    },

    #[error("output is incomplete: {written} of {height} rows written")]
    IncompleteOutput { written: u32, height: u32 },

    #[error("cannot write output: {0}")]
    Write(#[source] io::Error),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("insufficient pixels for basis estimation: {found} found, at least {required} needed")]
    InsufficientPixels { found: usize, required: usize },

    #[error("blank slide: no non-white pixels found")]
    BlankSlide,

    #[error("stain {stain} absent from the sampled pixels")]
    StainAbsent { stain: usize },

    #[error("degenerate stain density: {role} 99th percentile of stain {stain} is {value}")]
    DegenerateStain { role: Role, stain: usize, value: f64 },

    #[error("invalid stain basis: {0}")]
    InvalidBasis(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid profile: {0}")]
    Profile(String),

    #[error("{stage}: {source}")]
    Staged {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at(self, stage: Stage) -> Error {
        match self {
            staged @ Error::Staged { .. } => staged,
            other => Error::Staged {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The error with any stage label removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Staged { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code for the command-line tool.
    ///
    /// 2: bad input (missing, unsupported, corrupt, invalid config),
    /// 3: blank slide, 4: degenerate or absent stain, 5: output write failure.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::BlankSlide | Error::InsufficientPixels { .. } => 3,
            Error::DegenerateStain { .. } | Error::StainAbsent { .. } => 4,
            Error::Write(_) | Error::StripOrder { .. } | Error::StripShape { .. } | Error::IncompleteOutput { .. } => 5,
            _ => 2,
        }
    }
}

impl From<tiff::TiffError> for Error {
    fn from(err: tiff::TiffError) -> Self {
        match err {
            tiff::TiffError::IoError(e) => Error::Io(e),
            other => Error::Corrupt {
                path: PathBuf::new(),
                reason: other.to_string(),
            },
        }
    }
}

/// Non-fatal conditions reported alongside a result.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// No sample above the white threshold in this channel; 255 was used.
    NoBackground { channel: usize },
    /// Fewer pixels than recommended for a stable basis estimate.
    FewPixels { found: usize, recommended: usize },
    /// The solver hit its iteration cap before the objective settled.
    NotConverged { iterations: usize },
    /// One stain carries almost none of the density, or both columns point
    /// the same way.
    DegenerateBasis { reason: String },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::NoBackground { channel } => write!(
                f,
                "no background samples in channel {channel}; assuming maximum intensity 255"
            ),
            Warning::FewPixels { found, recommended } => write!(
                f,
                "only {found} pixels for basis estimation ({recommended} recommended)"
            ),
            Warning::NotConverged { iterations } => write!(
                f,
                "basis estimation did not converge in {iterations} iterations; returning best iterate"
            ),
            Warning::DegenerateBasis { reason } => write!(f, "degenerate stain basis: {reason}"),
        }
    }
}
