//! CSV encoding and the run manifest.
//!
//! Numbers are written in Rust's shortest round-trip form, so identical results give
//! identical bytes.

use std::path::Path;

use serde_json::json;
use sha2::{Digest, Sha256};

use crate::{Check, CliError, Outcome, RunConfig};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_ECHO: &str = "config.toml";

pub fn num(x: f64) -> String {
    x.to_string()
}

/// CSV bytes with a header row.
pub fn csv_bytes<I>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        debug_assert_eq!(r.len(), header.len());
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn checks_csv(checks: &[Check]) -> Vec<u8> {
    csv_bytes(
        &["check", "value", "condition", "pass"],
        checks.iter().map(|c| vec![c.name.clone(), num(c.value), c.condition.clone(), c.pass.to_string()]),
    )
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Artifacts, the config echo and `manifest.json`.
pub fn write_run(cfg: &RunConfig, out: &Path, outcome: &Outcome, wall_time: f64) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    let echo = cfg.to_toml();
    std::fs::write(out.join(CONFIG_ECHO), &echo)?;
    let mut files = Vec::new();
    for (name, bytes) in &outcome.files {
        std::fs::write(out.join(name), bytes)?;
        files.push(json!({ "name": name, "bytes": bytes.len(), "sha256": sha256_hex(bytes) }));
    }
    let manifest = json!({
        "problem": cfg.problem.name(),
        "seed": cfg.seed.0.to_string(),
        "status": if outcome.passed() { "pass" } else { "fail" },
        "wall_time_s": wall_time,
        "config": echo,
        "scalars": outcome.scalars,
        "checks": outcome.checks,
        "files": files,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(out.join(MANIFEST), text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_round_trip_numbers() {
        let b = csv_bytes(&["t", "x"], vec![vec![num(0.1), num(1.0 / 3.0)]]);
        let s = String::from_utf8(b).unwrap();
        assert_eq!(s, "t,x\n0.1,0.3333333333333333\n");
        assert_eq!("0.3333333333333333".parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn sha_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
