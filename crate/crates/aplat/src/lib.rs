//! Configuration, file formats and subcommands behind the `aplat` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{run, Command, RunOutput};
pub use config::{load, LoadedConfig, RunConfig};
pub use error::CliError;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "APLAT_THREADS";

/// Sizes the global work pool from [`THREADS_ENV`]; unset or empty means
/// rayon's default.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    if raw.trim().is_empty() {
        return Ok(());
    }
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config(format!("cannot size thread pool: {e}")))
}
