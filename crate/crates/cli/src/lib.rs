//! Experiment runner: dataset generation, training, evaluation, λ sweeps and
//! mode comparisons.

pub mod commands;
pub mod config;
pub mod manifest;

use fairrank::Error;

/// Process exit code for an error: 2 for configuration and input problems,
/// 3 for numerical failure, 1 for internal faults.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Divergence { .. } => 3,
        Error::Config(_)
        | Error::Parse { .. }
        | Error::Io { .. }
        | Error::Data(_)
        | Error::Json(_)
        | Error::Probe(_) => 2,
        Error::Dimension { .. } | Error::Contract(_) => 1,
    }
}
