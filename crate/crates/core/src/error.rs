use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("series {series}: non-positive level at {period}; growth rates need positive levels")]
    NonPositiveLevel { series: String, period: String },

    #[error("series {series}: {got} observations, transform needs at least {needed}")]
    SeriesTooShort {
        series: String,
        needed: usize,
        got: usize,
    },

    #[error("unknown transform code {0} (expected 0, 1 or 2)")]
    UnknownTransform(u8),

    #[error("no common sample: {detail}")]
    EmptySample { detail: String },

    #[error("country {0} has no usable series after alignment")]
    EmptyCountry(String),

    #[error("{0}")]
    Ingestion(String),

    #[error(
        "equation ({country},{eq}): effective sample {t_eff} does not exceed {k} own-lag columns"
    )]
    InsufficientObservations {
        country: usize,
        eq: usize,
        t_eff: usize,
        k: usize,
    },

    #[error("own-lag regressors are rank deficient; near-collinear columns {0:?}")]
    RankDeficient(Vec<usize>),

    #[error("{matrix} is not positive definite after {attempts} jitter attempts (last jitter {last_jitter:e})")]
    NotPositiveDefinite {
        matrix: &'static str,
        attempts: usize,
        last_jitter: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("equation ({country},{eq}) failed: {source}")]
    Equation {
        country: usize,
        eq: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no stable coefficient draw in {tries} attempts; lower the sparsity or cross scale")]
    UnstableSimulation { tries: usize },

    #[error("forecast-error decomposition produced non-finite entries (explosive draw)")]
    NonFiniteFevd,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Tags an error with the (country, equation) pair it came from.
    pub fn for_equation(self, country: usize, eq: usize) -> Error {
        Error::Equation {
            country,
            eq,
            source: Box::new(self),
        }
    }
}
