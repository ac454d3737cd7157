//! Versioned output files: every artifact records the tool version and a
//! hash of the configuration that produced it.

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

pub fn header_line<T: Serialize>(cfg: &T) -> String {
    format!("# hepim {VERSION} config-sha256={}", config_hash(cfg))
}

/// Write CSV text preceded by the header comment line.
pub fn write_csv<T: Serialize>(path: &Path, cfg: &T, body: &[u8]) -> anyhow::Result<()> {
    let mut f =
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(f, "{}", header_line(cfg))?;
    f.write_all(body)?;
    Ok(())
}

/// Write a JSON document wrapped with version and config hash.
pub fn write_json<T: Serialize, D: Serialize>(
    path: &Path,
    cfg: &T,
    data: &D,
) -> anyhow::Result<()> {
    let doc = serde_json::json!({
        "hepim": VERSION,
        "config_sha256": config_hash(cfg),
        "config": cfg,
        "data": data,
    });
    let text = serde_json::to_string_pretty(&doc)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
