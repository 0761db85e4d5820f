use thiserror::Error;

/// Errors produced by the shape-servoing library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid arc parameters: {0}")]
    InvalidArc(String),

    #[error("curvature-radius product kappa*d = {kappa_d:.6} must be below 1")]
    CableDomain { kappa_d: f64 },

    #[error("bend angle kappa*s = {bend:.6} rad must be below pi")]
    BendDomain { bend: f64 },

    #[error("expected {expected} entries, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("point is behind the camera (camera-frame z = {z:.6} mm)")]
    BehindCamera { z: f64 },

    #[error("section {section} tip is not visible: {source}")]
    SectionNotVisible {
        section: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("depth {depth:.6} mm is below the minimum {min:.6} mm")]
    DepthTooSmall { depth: f64, min: f64 },

    #[error("feature {index}: {source}")]
    Feature {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("cannot fit an arc to a tip at the section base")]
    DegenerateTip,

    #[error("tip lies behind the section base tangent plane (z = {z:.6} mm)")]
    TipBehindBase { z: f64 },

    #[error("fitted arc length {s:.6} mm outside [{s_min}, {s_max}]")]
    ArcLengthOutOfRange { s: f64, s_min: f64, s_max: f64 },

    #[error("section {section}: {source}")]
    Section {
        section: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("target unreachable (best residual {residual:.6})")]
    Unreachable { residual: f64 },

    #[error("no obstacle-free reference found")]
    Infeasible,

    #[error("episode too short for steady-state metrics ({0} cycles)")]
    EpisodeTooShort(usize),

    #[error("cycle {cycle}: {source}")]
    Cycle {
        cycle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("log format: {0}")]
    LogFormat(String),

    #[error("io: {0}")]
    Io(String),

    #[error("json: {0}")]
    Json(String),
}

impl Error {
    pub(crate) fn in_section(self, section: usize) -> Self {
        Error::Section {
            section,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_cycle(self, cycle: usize) -> Self {
        Error::Cycle {
            cycle,
            source: Box::new(self),
        }
    }

    /// Strips cycle/section/feature wrappers and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::SectionNotVisible { source, .. }
            | Error::Feature { source, .. }
            | Error::Section { source, .. }
            | Error::Cycle { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
