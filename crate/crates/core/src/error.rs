use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range; `field` names the offending input.
    #[error("invalid {field}: {message}")]
    Config { field: String, message: String },

    /// Inputs that are individually valid but do not fit together
    /// (grid mismatch, wrong domain, ...).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("singular soliton parameters: eta1 == eta2 = {0}")]
    SingularParameters(f64),

    #[error("grid too small: edge amplitude {edge:e} exceeds {limit:e}")]
    GridTooSmall { edge: f64, limit: f64 },

    #[error("numerical blowup at step {step}")]
    NumericalBlowup { step: usize },

    #[error("window overflow at step {step}: edge amplitude {ratio:e} of peak")]
    WindowOverflow { step: usize, ratio: f64 },

    #[error("degenerate local oscillator: output field has zero energy")]
    DegenerateOscillator,

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("degenerate spectrum: every slot is below the variance floor")]
    DegenerateSpectrum,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
