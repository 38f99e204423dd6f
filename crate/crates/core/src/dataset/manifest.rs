use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ScanRecord;
use crate::error::{Error, Result};

const HEADER: [&str; 4] = ["subject_id", "t_years", "label", "volume_path"];

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    subject_id: String,
    t_years: f64,
    label: u8,
    volume_path: String,
}

/// Reads and validates a manifest CSV.
///
/// Volume paths are resolved against the manifest's directory. Rows are
/// numbered from 1, excluding the header.
pub fn load_manifest(path: &Path) -> Result<Vec<ScanRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        log::warn!("manifest {} is empty", path.display());
        return Ok(Vec::new());
    }
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| manifest_err(path, 0, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(manifest_err(path, 0, format!("header must be {}", HEADER.join(","))));
    }

    let mut records = Vec::new();
    let mut labels: HashMap<String, (u8, usize)> = HashMap::new();
    let mut times: HashMap<(String, u64), usize> = HashMap::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let n = i + 1;
        let row = row.map_err(|e| manifest_err(path, n, format!("unparsable row: {e}")))?;
        if row.subject_id.is_empty() {
            return Err(manifest_err(path, n, "empty subject_id"));
        }
        if !row.t_years.is_finite() {
            return Err(manifest_err(path, n, format!("non-finite time {}", row.t_years)));
        }
        if row.label > 1 {
            return Err(manifest_err(path, n, format!("label must be 0 or 1, got {}", row.label)));
        }
        match labels.get(&row.subject_id) {
            Some(&(l, first)) if l != row.label => {
                return Err(manifest_err(
                    path,
                    n,
                    format!("inconsistent label for subject {}: {} here, {l} at row {first}", row.subject_id, row.label),
                ));
            }
            Some(_) => {}
            None => {
                labels.insert(row.subject_id.clone(), (row.label, n));
            }
        }
        let key = (row.subject_id.clone(), (row.t_years + 0.0).to_bits());
        if let Some(first) = times.insert(key, n) {
            return Err(manifest_err(
                path,
                n,
                format!("duplicate scan time {} for subject {} (also row {first})", row.t_years, row.subject_id),
            ));
        }
        let volume_path = base.join(&row.volume_path);
        if !volume_path.is_file() {
            return Err(manifest_err(path, n, format!("missing volume file {}", volume_path.display())));
        }
        records.push(ScanRecord { subject_id: row.subject_id, t_years: row.t_years, label: row.label, volume_path });
    }
    if records.is_empty() {
        log::warn!("manifest {} has no rows", path.display());
    }
    Ok(records)
}

/// Writes a manifest whose volume paths are expressed relative to `path`'s
/// directory when possible.
pub fn write_manifest(path: &Path, records: &[ScanRecord]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut writer = csv::Writer::from_writer(Vec::new());
    for r in records {
        let rel = r.volume_path.strip_prefix(base).unwrap_or(&r.volume_path);
        writer
            .serialize(Row {
                subject_id: r.subject_id.clone(),
                t_years: r.t_years,
                label: r.label,
                volume_path: rel.to_string_lossy().into_owned(),
            })
            .map_err(|e| Error::Format { path: path.into(), msg: e.to_string() })?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Format { path: path.into(), msg: e.to_string() })?;
    let bytes = if records.is_empty() { format!("{}\n", HEADER.join(",")).into_bytes() } else { bytes };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn manifest_err(path: &Path, row: usize, msg: impl Into<String>) -> Error {
    Error::Manifest { path: path.into(), row, msg: msg.into() }
}
