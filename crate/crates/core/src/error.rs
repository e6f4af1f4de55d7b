use thiserror::Error;

/// Errors raised by the simulation and analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {}", .0.join("; "))]
    Invalid(Vec<String>),

    #[error("integration did not converge at t = {time_ps:.3} ps after {halvings} step halvings")]
    NonConvergence { time_ps: f64, halvings: u32 },

    #[error("sweep point {index} failed: {source}")]
    SweepPoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stream not time-ordered at index {index}")]
    Unsorted { index: usize },

    #[error("window [{lo_ps}, {hi_ps}] ps outside histogram range ±{range_ps} ps")]
    WindowOutOfRange { lo_ps: i64, hi_ps: i64, range_ps: i64 },

    #[error("need at least {needed} resolvable side peaks, histogram holds {available}")]
    InsufficientSidePeaks { needed: usize, available: usize },

    #[error("no counts in {0}")]
    ZeroTotal(String),

    #[error("missing polarization setting {0}")]
    MissingSetting(String),

    #[error("settings were acquired for unequal durations ({0} s vs {1} s)")]
    UnequalDurations(f64, f64),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("spectral grid does not cover line at {energy_mev} meV ± 5 linewidths")]
    GridCoverage { energy_mev: f64 },

    #[error("kernel bin width {kernel_ps} ps does not match grid bin width {grid_ps} ps")]
    KernelMismatch { kernel_ps: f64, grid_ps: f64 },

    #[error("fit did not converge within {0} iterations")]
    FitNotConverged(usize),

    #[error("degenerate data: {0}")]
    Degenerate(String),

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
    /// Innermost error below any stage or sweep-point wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::SweepPoint { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for problems with the inputs rather than with the computation.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Invalid(_) | Error::Format(_) | Error::Io(_) | Error::MissingSetting(_) | Error::UnequalDurations(..))
    }
}

/// Tags failures of a pipeline stage with its name.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T, E: Into<Error>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e.into()),
        })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
