use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl From<avgbench::Error> for CliError {
    fn from(e: avgbench::Error) -> Self {
        use avgbench::Error as E;
        match e {
            E::Input(m) => Self::Config(m),
            E::Precondition(m) | E::Resource(m) | E::Unsupported(m) => Self::Precondition(m),
            E::Solver(m) => Self::Solver(m),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Precondition(_) => 3,
            Self::Solver(_) => 4,
            Self::Io(_) | Self::Csv(_) => 1,
        }
    }
}
