//! Library side of the `swbss` command: configuration files, the
//! simulate/enhance/evaluate pipeline and parameter sweeps.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod sweep;

use swbss_core::Error;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Format(_) | Error::Shape(_) | Error::Switch(_) => 2,
        Error::Numerical(_) | Error::Singular(_) | Error::NonFinite(_) => 3,
        Error::Io(_) | Error::Wav(_) => 1,
    }
}
