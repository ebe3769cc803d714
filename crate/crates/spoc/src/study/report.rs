//! Report files: CSV tables, JSON summaries, binary field dumps.
//!
//! Re-running a study with the same config and seed reproduces every output
//! byte-for-byte; the only wall-clock information lives in the JSON
//! summary's `metadata` object.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::AdaptedField;
use crate::study::{RateReport, StudyConfig};

const FIELD_MAGIC: &[u8; 8] = b"SPOCFLD1";

/// Per-level result row; every rate CSV uses these columns.
#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub level: usize,
    pub j: usize,
    pub n_elems: usize,
    pub error: f64,
    pub stderr: f64,
}

pub fn write_rows_csv(path: &Path, rows: &[Row]) -> Result<()> {
    for r in rows {
        if !r.error.is_finite() || !r.stderr.is_finite() {
            return Err(Error::Format(format!(
                "refusing to write non-finite value at level {}",
                r.level
            )));
        }
    }
    let mut out = String::from("level,J,n_elems,error,stderr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.17e},{:.17e}\n",
            r.level, r.j, r.n_elems, r.error, r.stderr
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// FNV-1a hash of the canonical JSON encoding of the config.
pub fn config_hash(config: &StudyConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let mut h: u64 = 0xcbf29ce484222325;
    for b in json.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub kind: &'a str,
    pub config: &'a StudyConfig,
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub rate: Option<&'a RateReport>,
    pub checks: serde_json::Value,
    pub pass: Option<bool>,
    pub metadata: Metadata,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub crate_version: &'static str,
    pub format: u32,
}

#[derive(Debug, Serialize)]
pub struct Metadata {
    pub timestamp_unix_ms: u128,
}

pub fn write_summary(
    path: &Path,
    kind: &str,
    config: &StudyConfig,
    rate: Option<&RateReport>,
    checks: serde_json::Value,
    pass: Option<bool>,
) -> Result<()> {
    let summary = Summary {
        kind,
        config,
        config_hash: config_hash(config),
        seed: config.seed,
        versions: Versions {
            crate_version: env!("CARGO_PKG_VERSION"),
            format: 1,
        },
        rate,
        checks,
        pass,
        metadata: Metadata {
            timestamp_unix_ms: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
        },
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Field dump flags: bit 0 set when levels hold `2^level` nodes (tree
/// layout, otherwise one node per level), bit 1 set for interval fields
/// (`J` levels instead of `J + 1`).
pub fn field_flags(tree_layout: bool, interval_field: bool) -> u32 {
    (tree_layout as u32) | ((interval_field as u32) << 1)
}

/// Writes an adapted field: magic, u32 J, u32 flags, u32 dim, then the
/// level-major little-endian f64 payload.
pub fn write_field(path: &Path, field: &AdaptedField, j: u32, flags: u32) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut header = Vec::with_capacity(20);
    header.extend_from_slice(FIELD_MAGIC);
    header.extend_from_slice(&j.to_le_bytes());
    header.extend_from_slice(&flags.to_le_bytes());
    header.extend_from_slice(&(field.dim() as u32).to_le_bytes());
    file.write_all(&header).map_err(|e| Error::io(path, e))?;
    for l in 0..field.n_levels() {
        let mut buf = Vec::with_capacity(field.level(l).len() * 8);
        for v in field.level(l) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Reads a field written by [`write_field`].
pub fn read_field(path: &Path) -> Result<(AdaptedField, u32, u32)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[0..8] != FIELD_MAGIC {
        return Err(Error::Format(format!(
            "{}: not a field dump",
            path.display()
        )));
    }
    let j = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let flags = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let tree_layout = flags & 1 != 0;
    let interval = flags & 2 != 0;
    let n_levels = if interval { j as usize } else { j as usize + 1 };
    let mut offset = 20usize;
    let mut levels = Vec::with_capacity(n_levels);
    for l in 0..n_levels {
        let nodes = if tree_layout { 1usize << l } else { 1 };
        let len = nodes * dim * 8;
        if offset + len > bytes.len() {
            return Err(Error::Format(format!(
                "{}: truncated payload at level {l}",
                path.display()
            )));
        }
        let level: Vec<f64> = bytes[offset..offset + len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        levels.push(level);
        offset += len;
    }
    if offset != bytes.len() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes",
            path.display(),
            bytes.len() - offset
        )));
    }
    Ok((AdaptedField::new(dim, levels)?, j, flags))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn table_path(dir: &Path, kind: &str, suffix: &str) -> PathBuf {
    if suffix.is_empty() {
        dir.join(format!("{kind}-table.csv"))
    } else {
        dir.join(format!("{kind}-{suffix}.csv"))
    }
}

pub fn summary_path(dir: &Path, kind: &str) -> PathBuf {
    dir.join(format!("{kind}-summary.json"))
}
