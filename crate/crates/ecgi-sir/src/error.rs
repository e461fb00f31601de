use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, AppError>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] ecgi_sir_core::Error),
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            AppError::MissingInput(path)
        } else {
            AppError::Io { path, source }
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        AppError::Parse { path: path.into(), line, msg: msg.into() }
    }

    /// Process exit status: 2 config, 3 missing input, 4 resource limit, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use ecgi_sir_core::Error as E;
        match self {
            AppError::Config(_) => 2,
            AppError::MissingInput(_) => 3,
            AppError::Core(E::ResourceLimit(_)) => 4,
            AppError::Core(
                E::InvalidParameter { .. }
                | E::InvalidConductivity(_)
                | E::InvalidElectrodes(_)
                | E::IndexOutOfRange { .. },
            ) => 2,
            _ => 1,
        }
    }
}
