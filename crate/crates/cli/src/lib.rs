//! Config-driven experiment runner for `gibbslab`.
//!
//! One experiment is one TOML file and produces one JSON report plus a CSV
//! table. Sampled ensembles can be persisted as checksummed archives.

pub mod archive;
pub mod config;
pub mod report;
pub mod run;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// A pass criterion failed.
    pub const FAIL: i32 = 1;
    /// Config or archive rejected before any numerics ran.
    pub const INVALID: i32 = 2;
    /// Numerical failure or I/O error during the run.
    pub const NUMERICAL: i32 = 3;
}

/// Worker threads from `GIBBSLAB_THREADS`, default 1 so runs reproduce exactly.
pub fn thread_count() -> usize {
    std::env::var("GIBBSLAB_THREADS").ok().and_then(|v| v.trim().parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}
