use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("structure lists differ: {left:?} vs {right:?}")]
    StructureMismatch {
        left: Vec<String>,
        right: Vec<String>,
    },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("registration failed in {stage} stage at pyramid level {level}: {reason}")]
    Registration {
        stage: &'static str,
        level: usize,
        reason: String,
    },

    #[error("all {attempted} reference registrations failed for case {case_id}")]
    AllReferencesFailed { case_id: String, attempted: usize },

    #[error("case {case_id} has no value for attribute {attribute:?}")]
    MissingAttribute { case_id: String, attribute: String },

    #[error("attribute {attribute:?} must take exactly two values, found {found:?}")]
    GroupCount {
        attribute: String,
        found: Vec<String>,
    },

    #[error("every pair was excluded at threshold {threshold}; the threshold is uninformative")]
    AllPairsExcluded { threshold: f64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Codec {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}
