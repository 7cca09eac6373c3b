use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("I/O error on '{}': {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("format error: {0}")]
    Format(String),

    #[error("empty input")]
    EmptyInput,

    #[error("duplicate fix for storm '{storm_id}' at {timestamp} (line {line})")]
    DuplicateFix {
        storm_id: String,
        timestamp: String,
        line: u64,
    },

    #[error("field '{field}' is missing in every fix of storm '{storm_id}'")]
    UnimputableField { storm_id: String, field: String },

    #[error("storm '{storm_id}' has a {hours} h gap before fix {index}")]
    TrackGap {
        storm_id: String,
        index: usize,
        hours: i64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("feature '{feature}' is constant ({value}); min-max scaling needs min < max")]
    DegenerateFeature { feature: String, value: f64 },

    #[error("no SST value within 2 grid cells of ({lat}, {lon}) on {date}")]
    SstUnavailable { lat: f64, lon: f64, date: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{storms} storms cannot be split into {folds} folds")]
    NotEnoughStorms { storms: usize, folds: usize },

    #[error("0 training windows{0}")]
    NoTrainingWindows(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("nothing to evaluate: empty window set")]
    EmptyEvaluation,

    #[error("forecast needs at least {required} fixes of history, got {available}")]
    ShortHistory { required: usize, available: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Process exit code for the CLI: 2 for usage/IO problems, 1 for data or
    /// domain errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::NotFound(_) | Error::Config(_) => 2,
            _ => 1,
        }
    }
}
