//! Front end of the soft-arm simulator: trajectory files, the assembly
//! scaling benchmark and the parameter report.

pub mod bench;
pub mod output;
pub mod report;

use soro_spt::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const THREADS_ENV: &str = "SORO_SPT_THREADS";

/// Exit status for a library error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_USAGE
    }
}

/// Assembly worker cap from the environment; 1 when unset.
pub fn threads_from_env() -> Result<usize, String> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(format!("{THREADS_ENV} must be a positive integer (got {v:?})")),
        },
    }
}

/// Version string with the git description when the build had one.
pub fn version() -> String {
    match option_env!("SORO_SPT_GIT_DESCRIBE") {
        Some(g) if !g.is_empty() => format!("{} ({g})", env!("CARGO_PKG_VERSION")),
        _ => env!("CARGO_PKG_VERSION").to_string(),
    }
}
