//! Command-line driver: configuration, run directories, metrics and the
//! `train` / `eval` / `sample` / `diagnose` commands.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod run;
pub mod svg;

pub use config::RunConfig;
pub use error::CliError;

/// Worker threads used by the data-parallel core.
pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Sizes the global worker pool; a no-op without the `parallel` feature.
pub fn set_threads(n: usize) -> Result<(), CliError> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))
    }
    #[cfg(not(feature = "parallel"))]
    {
        if n > 1 {
            log::warn!("built without the `parallel` feature; ignoring --threads {n}");
        }
        Ok(())
    }
}
