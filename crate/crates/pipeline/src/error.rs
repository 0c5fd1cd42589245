use gridgroup_core::Error as CoreError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid controller library: {0}")]
    Library(String),
    #[error("line {0} is not covered by the controller library")]
    Unhandled(u32),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: CoreError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl PipelineError {
    /// 2 for bad inputs, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Library(_) | PipelineError::Unhandled(_) | PipelineError::Io { .. } | PipelineError::Json { .. } => 2,
            PipelineError::Stage { source, .. } => core_exit_code(source),
        }
    }
}

pub fn core_exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::DimensionMismatch { .. }
        | CoreError::InvalidTimes
        | CoreError::Disconnects { .. }
        | CoreError::UnknownLine(_)
        | CoreError::InvalidNetwork(_)
        | CoreError::KOutOfRange { .. }
        | CoreError::InvalidInput(_)
        | CoreError::MalformedDistances(_)
        | CoreError::Io(_)
        | CoreError::Json(_) => 2,
        _ => 3,
    }
}

/// Attaches a stage name to core errors.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for gridgroup_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|source| PipelineError::Stage { stage, source })
    }
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

pub(crate) fn json_err(path: &std::path::Path) -> impl FnOnce(serde_json::Error) -> PipelineError + '_ {
    move |source| PipelineError::Json { path: path.display().to_string(), source }
}
