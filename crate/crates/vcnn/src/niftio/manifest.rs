//! Dataset manifest CSVs: `path,subject_id,modality,age_class[,split]`.

use super::{AgeClass, Modality};
use crate::error::{Error, ManifestError, Result};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestRow {
    pub path: String,
    pub subject_id: String,
    pub modality: Modality,
    pub age_class: AgeClass,
    pub split: Option<Split>,
}

/// Validated list of dataset rows. Paths are unique and every row carries a
/// known cohort label.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(ManifestError::Empty.into());
        }
        for (i, row) in rows.iter().enumerate() {
            if rows[..i].iter().any(|r| r.path == row.path) {
                return Err(ManifestError::DuplicatePath {
                    row: i + 2,
                    path: row.path.clone(),
                }
                .into());
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Scan counts per cohort, in class order.
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for r in &self.rows {
            counts[r.age_class.index()] += 1;
        }
        counts
    }

    pub fn subject_count(&self) -> usize {
        let mut ids: Vec<&str> = self.rows.iter().map(|r| r.subject_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.is_empty() {
            return Err(ManifestError::Empty.into());
        }
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(bytes.as_slice());

        let headers = reader
            .headers()
            .map_err(|e| ManifestError::BadRow {
                row: 1,
                reason: e.to_string(),
            })?
            .clone();
        let required = ["path", "subject_id", "modality", "age_class"];
        let mut col = [0usize; 4];
        for (k, name) in required.iter().enumerate() {
            col[k] = headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| ManifestError::MissingColumn(name.to_string()))?;
        }
        let split_col = headers.iter().position(|h| h == "split");
        for h in headers.iter() {
            if !required.contains(&h) && h != "split" {
                return Err(ManifestError::BadRow {
                    row: 1,
                    reason: format!("unexpected column \"{h}\""),
                }
                .into());
            }
        }

        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 2; // header is line 1
            let record = record.map_err(|e| ManifestError::BadRow {
                row,
                reason: e.to_string(),
            })?;
            let field = |c: usize| -> Result<&str> {
                record.get(c).ok_or_else(|| {
                    Error::Manifest(ManifestError::BadRow {
                        row,
                        reason: "missing field".into(),
                    })
                })
            };
            let path_field = field(col[0])?.to_string();
            if path_field.is_empty() {
                return Err(ManifestError::BadRow {
                    row,
                    reason: "empty path".into(),
                }
                .into());
            }
            let modality_field = field(col[2])?;
            let modality = Modality::from_label(modality_field).ok_or_else(|| {
                Error::Manifest(ManifestError::BadModality {
                    row,
                    value: modality_field.to_string(),
                })
            })?;
            let class_field = field(col[3])?;
            let age_class = AgeClass::from_label(class_field).ok_or_else(|| {
                Error::Manifest(ManifestError::BadAgeClass {
                    row,
                    value: class_field.to_string(),
                })
            })?;
            let split = match split_col {
                Some(c) => match field(c)? {
                    "" => None,
                    "train" => Some(Split::Train),
                    "val" => Some(Split::Val),
                    other => {
                        return Err(ManifestError::BadSplit {
                            row,
                            value: other.to_string(),
                        }
                        .into())
                    }
                },
                None => None,
            };
            if rows.iter().any(|r: &ManifestRow| r.path == path_field) {
                return Err(ManifestError::DuplicatePath {
                    row,
                    path: path_field,
                }
                .into());
            }
            rows.push(ManifestRow {
                path: path_field,
                subject_id: field(col[1])?.to_string(),
                modality,
                age_class,
                split,
            });
        }
        if rows.is_empty() {
            return Err(ManifestError::Empty.into());
        }
        Ok(Self { rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let has_split = self.rows.iter().any(|r| r.split.is_some());
        let mut w = csv::Writer::from_writer(Vec::new());
        let io_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        if has_split {
            w.write_record(["path", "subject_id", "modality", "age_class", "split"])
                .map_err(io_err)?;
        } else {
            w.write_record(["path", "subject_id", "modality", "age_class"])
                .map_err(io_err)?;
        }
        for r in &self.rows {
            let mut rec = vec![
                r.path.clone(),
                r.subject_id.clone(),
                r.modality.label().to_string(),
                r.age_class.label().to_string(),
            ];
            if has_split {
                rec.push(r.split.map(|s| s.label().to_string()).unwrap_or_default());
            }
            w.write_record(&rec).map_err(io_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e)))?;
        crate::fsutil::write_atomic(path, &bytes)
    }
}
