use std::fmt;

use divernet::dataset::DatasetError;
use divernet::metrics::MetricsError;
use divernet::model::ModelError;
use divernet::pipeline::PipelineError;
use divernet::servo::ServoError;
use divernet::sim::SimError;
use divernet::TensorError;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config, unreadable inputs.
    Usage(String),
    /// NaN or infinite values during training or inference.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(t @ TensorError::NonFinite { .. }) => CliError::Numeric(t.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Model(m) => m.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Model(m) => m.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

macro_rules! usage_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Usage(e.to_string())
            }
        })*
    };
}

usage_from!(DatasetError, MetricsError, ServoError, std::io::Error, serde_json::Error);
