//! Pipeline orchestration for the `cortigraph` command-line tool.

pub mod pipeline;
pub mod run;

use cortigraph::{Error, Result};

/// Caps the worker pool at `CORTIGRAPH_THREADS` when that variable is set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("CORTIGRAPH_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::InvalidInput(format!(
            "CORTIGRAPH_THREADS={raw:?} is not a positive integer"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidInput(e.to_string()))
}
