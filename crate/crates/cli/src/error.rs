use std::fmt;
use std::path::PathBuf;

use pkws::ErrorKind;
use serde::Serialize;

/// Every way a subcommand can fail, with its exit code.
#[derive(Debug)]
pub enum CliError {
    Core(pkws::Error),
    /// A required artifact of an earlier stage does not exist.
    Missing {
        artifact: &'static str,
        path: PathBuf,
    },
    Config(String),
}

impl CliError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Missing { .. } => ErrorKind::Data,
            CliError::Config(_) => ErrorKind::Config,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }

    fn code(&self) -> String {
        match self {
            CliError::Core(_) => "rejected".into(),
            CliError::Missing { artifact, .. } => format!("missing-{artifact}"),
            CliError::Config(_) => "invalid-config".into(),
        }
    }

    /// One-line JSON object for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            error: String,
            kind: &'a str,
            exit_code: i32,
            #[serde(skip_serializing_if = "Option::is_none")]
            path: Option<String>,
            message: String,
        }
        let kind = match self.kind() {
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Numerical => "numerical",
        };
        let path = match self {
            CliError::Missing { path, .. } => Some(path.display().to_string()),
            _ => None,
        };
        serde_json::to_string(&Out {
            error: self.code(),
            kind,
            exit_code: self.exit_code(),
            path,
            message: self.to_string(),
        })
        .expect("plain struct serializes")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Missing { artifact, path } => write!(f, "missing {artifact}: {} does not exist", path.display()),
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<pkws::Error> for CliError {
    fn from(e: pkws::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Fails with a structured error unless `path` exists.
pub fn require(artifact: &'static str, path: &std::path::Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing {
            artifact,
            path: path.to_path_buf(),
        })
    }
}
