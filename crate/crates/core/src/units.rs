//! Unit conventions shared across the crate: sizes are carried in MB,
//! 1 GB = 1024 MB, and human-facing numbers are printed with at most two
//! decimals and no trailing zeros.

pub const MB_PER_GB: f64 = 1024.0;
pub const SECONDS_PER_WEEK: f64 = 604_800.0;
pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const SECONDS_PER_HOUR: f64 = 3_600.0;

pub fn mb_to_gb(mb: f64) -> f64 {
    mb / MB_PER_GB
}

pub fn gb_to_mb(gb: f64) -> f64 {
    gb * MB_PER_GB
}

/// `10.0 -> "10"`, `0.5 -> "0.5"`, `10.333 -> "10.33"`.
pub fn fmt_num(x: f64) -> String {
    let s = format!("{x:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}
