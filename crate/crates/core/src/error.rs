use thiserror::Error;

/// Errors raised anywhere in the simulation / reconstruction pipeline.
///
/// Variant names follow the failure classes the CLI maps onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bad dimensions: {0}")]
    BadDims(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("imaginary residue: discarded imaginary energy fraction {fraction:.3e} exceeds 1e-6")]
    ImagResidue { fraction: f64 },
    #[error("grid too coarse: OTF cutoff {cutoff:.6} cycles/um exceeds grid Nyquist {nyquist:.6} cycles/um")]
    GridTooCoarse { cutoff: f64, nyquist: f64 },
    #[error("not a dark-field configuration: {0}")]
    NotDarkfield(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bad magnification {0}: must be > 0")]
    BadMagnification(f64),
    #[error("fringe frequency {freq:.6} cycles/um aliased on grid with Nyquist {nyquist:.6} cycles/um")]
    FreqAliased { freq: f64, nyquist: f64 },
    #[error("singular phase set: mixing matrix condition number {0:.3e}")]
    SingularPhases(f64),
    #[error("no correlation peak: {0}")]
    NoPeak(String),
    #[error("support overflow: {0}")]
    SupportOverflow(String),
    #[error("partial protocol: {0}")]
    PartialProtocol(String),
    #[error("layout overflow: {0}")]
    LayoutOverflow(String),
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// Innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
