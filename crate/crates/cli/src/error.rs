use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed input data; `line` is 1-based and counts the header.
    #[error("{source_name}: line {line}: {msg}")]
    Ingest {
        source_name: String,
        line: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    /// A pipeline stage failed; `stage` names it (e.g. `garch[S2]`, `fit`).
    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: taildep::Error,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn stage(stage: impl Into<String>) -> impl FnOnce(taildep::Error) -> CliError {
        let stage = stage.into();
        move |source| CliError::Stage { stage, source }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}
