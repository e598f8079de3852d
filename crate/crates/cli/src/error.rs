use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("solver failure: {0}")]
    Solver(youngfem::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => exit::IO,
            CliError::Config(_) => exit::CONFIG,
            CliError::Solver(_) => exit::SOLVER,
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<youngfem::Error> for CliError {
    fn from(e: youngfem::Error) -> Self {
        use youngfem::Error as E;
        match e {
            E::Config(msg) => CliError::Config(msg),
            E::Dimension { .. } | E::MeshMismatch | E::Domain { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Solver(other),
        }
    }
}

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const SOLVER: i32 = 3;
    pub const GATE: i32 = 4;
}

pub type CliResult<T> = Result<T, CliError>;
