use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Stamp carried by every file a sweep writes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new<C: Serialize>(config: &C, seed: u64) -> Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: config_hash(config)?,
            seed,
        })
    }

    /// Single comment line for CSV headers.
    pub fn comment(&self) -> String {
        format!("# {} {} config_sha256={} seed={}", self.tool, self.version, self.config_sha256, self.seed)
    }
}

/// Hex SHA-256 of the compact JSON encoding.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// CSV preceded by a `#` provenance line.
pub fn write_csv_with_provenance<T: Serialize>(path: &Path, prov: &Provenance, rows: &[T]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{}", prov.comment())?;
    let mut wtr = csv::Writer::from_writer(file);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Stamped<'a, T> {
    provenance: &'a Provenance,
    result: &'a T,
}

/// `{"provenance": …, "result": …}`.
pub fn write_json_with_provenance<T: Serialize>(path: &Path, prov: &Provenance, result: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(&Stamped { provenance: prov, result })?;
    std::fs::write(path, s)?;
    Ok(())
}
