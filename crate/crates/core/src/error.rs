use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("invalid case: {0}")]
    InvalidCase(String),

    #[error("branch {0} does not exist")]
    NoSuchBranch(usize),

    #[error("branch {0} is out of service")]
    BranchOpen(usize),

    #[error("bus {0} does not exist")]
    NoSuchBus(u32),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("power flow diverged: mismatch grew for 3 consecutive iterations (last {mismatch:.3e} p.u. at iteration {iteration})")]
    Diverged { iteration: usize, mismatch: f64 },

    #[error("power flow did not converge in {max_iter} iterations (mismatch {mismatch:.3e} p.u.)")]
    MaxIterations { max_iter: usize, mismatch: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("outage of branch {0} islands the network")]
    Islanding(usize),

    #[error("bus at position {0} has zero voltage magnitude at the operating point")]
    ZeroMagnitude(usize),
}

impl Error {
    /// Numerical failures (divergence, singularity, islanding) as opposed to
    /// bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. }
                | Error::MaxIterations { .. }
                | Error::Singular(_)
                | Error::Islanding(_)
                | Error::ZeroMagnitude(_)
        )
    }
}
