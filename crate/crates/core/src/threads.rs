//! Worker-pool sizing from the `CANVOLVE_THREADS` environment variable.

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "CANVOLVE_THREADS";

/// Parses a `CANVOLVE_THREADS` value; `None` means "logical cores".
pub fn parse_threads(value: Option<&str>) -> Result<Option<usize>> {
    match value.map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::config(format!(
                "{THREADS_ENV} must be a positive integer, got {s:?}"
            ))),
        },
    }
}

/// Sizes the global rayon pool from `CANVOLVE_THREADS` and returns the
/// resulting worker count. A pool that is already initialised is kept.
pub fn configure_threads() -> Result<usize> {
    let requested = parse_threads(std::env::var(THREADS_ENV).ok().as_deref())?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = requested {
        builder = builder.num_threads(n);
    }
    if builder.build_global().is_err() {
        log::debug!("rayon pool already initialised; keeping it");
    }
    Ok(rayon::current_num_threads())
}
