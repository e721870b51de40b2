//! Dataset manifests: a CSV with a header row, one image per row.
//!
//! The default columns are `image_name` and `MOS`, which is what the KonIQ-10k
//! score table uses. Other columns are ignored.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("failed to read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest header lacks required column {0:?}")]
    MissingColumn(String),
    #[error("duplicate image id {id:?} on line {line}")]
    DuplicateId { id: String, line: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestColumns {
    pub image_id: String,
    pub mos: String,
}

impl Default for ManifestColumns {
    fn default() -> Self {
        Self {
            image_id: "image_name".into(),
            mos: "MOS".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub image_id: String,
    pub image_path: PathBuf,
    pub mos: f64,
}

/// A row that could not become a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub line: u64,
    pub image_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<DatasetRecord>,
    pub rejected: Vec<RejectedRow>,
}

/// Loads a manifest; image paths are `images_dir / <image id>`.
///
/// Rows whose MOS does not parse as a finite number end up in
/// [`Manifest::rejected`]. Duplicate ids are a hard error.
pub fn load_manifest(
    path: impl AsRef<Path>,
    images_dir: impl AsRef<Path>,
    columns: &ManifestColumns,
) -> Result<Manifest, ManifestError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| ManifestError::Io {
        path: path.to_owned(),
        source,
    })?;
    read_manifest(file, images_dir.as_ref(), columns)
}

pub fn read_manifest<R: std::io::Read>(
    reader: R,
    images_dir: &Path,
    columns: &ManifestColumns,
) -> Result<Manifest, ManifestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| ManifestError::MissingColumn(name.to_owned()))
    };
    let id_col = column(&columns.image_id)?;
    let mos_col = column(&columns.mos)?;

    let mut manifest = Manifest::default();
    let mut seen: HashMap<String, u64> = HashMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let image_id = row.get(id_col).unwrap_or_default().to_owned();
        if image_id.is_empty() {
            manifest.rejected.push(RejectedRow {
                line,
                image_id,
                reason: "empty image id".into(),
            });
            continue;
        }
        if seen.insert(image_id.clone(), line).is_some() {
            return Err(ManifestError::DuplicateId { id: image_id, line });
        }
        let raw_mos = row.get(mos_col).unwrap_or_default();
        match raw_mos.parse::<f64>() {
            Ok(mos) if mos.is_finite() => manifest.records.push(DatasetRecord {
                image_path: images_dir.join(&image_id),
                image_id,
                mos,
            }),
            _ => manifest.rejected.push(RejectedRow {
                line,
                image_id,
                reason: format!("unparsable MOS {raw_mos:?}"),
            }),
        }
    }
    Ok(manifest)
}
