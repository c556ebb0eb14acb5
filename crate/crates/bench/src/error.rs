use autodesign::Error;

/// Failures surfaced by the CLI, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),

    #[error("run {run_id}: {source}")]
    Run {
        run_id: String,
        #[source]
        source: Error,
    },

    #[error(transparent)]
    Core(#[from] Error),
}

pub type BenchResult<T> = std::result::Result<T, BenchError>;

fn core_code(e: &Error) -> i32 {
    match e {
        Error::Input(_) | Error::Parse(_) | Error::Usage(_) => 2,
        Error::Infeasible(_) => 3,
        _ => 4,
    }
}

impl BenchError {
    /// 2 for configuration problems, 3 for infeasible budgets, 4 for any
    /// other pipeline failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::Run { source, .. } => core_code(source),
            BenchError::Core(e) => core_code(e),
        }
    }

    pub(crate) fn in_run(run_id: &str) -> impl FnOnce(Error) -> BenchError + '_ {
        move |source| BenchError::Run {
            run_id: run_id.to_string(),
            source,
        }
    }
}
