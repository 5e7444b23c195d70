//! Test support for crashlens: seeded corpus generators and independent
//! brute-force oracles.

pub mod fixtures;
pub mod gen;
pub mod oracle;

/// Peak resident set size of this process in bytes, where the platform
/// reports it.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}
