//! Command line, configuration and file formats for `rvp-core`.
//!
//! The binary is a thin layer over [`run`] and [`verify`]; the formats in
//! [`formats`] are plain text and round-trip exactly.

pub mod config;
pub mod formats;
pub mod run;
pub mod verify;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const CHECK_FAILED: i32 = 1;
    pub const USAGE: i32 = 2;
}

/// `x` with six significant digits, e.g. `1.13159` or `0.00000`.
pub fn six_significant(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.5}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}
