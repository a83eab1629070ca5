use std::path::{Path, PathBuf};

use crate::config::ConfigIssue;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n{}", list(.0))]
    Config(Vec<ConfigIssue>),
    #[error("cannot parse {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("stage `{stage}`{} failed: {source}", subject.as_ref().map(|s| format!(" (subject {s})")).unwrap_or_default())]
    Stage {
        stage: String,
        subject: Option<String>,
        #[source]
        source: Box<CliError>,
    },
    #[error(transparent)]
    Core(#[from] fiberatlas::Error),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("run checks failed: {}", .0.join(", "))]
    ChecksFailed(Vec<String>),
    #[error("cannot encode {what}: {message}")]
    Encode { what: String, message: String },
}

fn list(issues: &[ConfigIssue]) -> String {
    issues.iter().map(|i| format!("  - {i}")).collect::<Vec<_>>().join("\n")
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn in_stage(self, stage: &str, subject: Option<&str>) -> Self {
        CliError::Stage {
            stage: stage.to_string(),
            subject: subject.map(str::to_string),
            source: Box::new(self),
        }
    }

    /// 1 validation, 2 runtime, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        use fiberatlas::Error as E;
        match self {
            CliError::Config(_) | CliError::Parse { .. } | CliError::Usage(_) => EXIT_VALIDATION,
            CliError::Stage { source, .. } => source.exit_code(),
            CliError::Io { .. } => EXIT_IO,
            CliError::Encode { .. } | CliError::ChecksFailed(_) => EXIT_RUNTIME,
            CliError::Core(e) => {
                let mut e = e;
                while let E::Stage { source, .. } = e {
                    e = source;
                }
                match e {
                    E::InvalidArgument(_) => EXIT_VALIDATION,
                    E::Io { .. } | E::Json { .. } | E::Format { .. } | E::Bundle(_) => EXIT_IO,
                    _ => EXIT_RUNTIME,
                }
            }
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
