//! CSV manifests and the feature-store directory layout.
//!
//! A feature store is a directory holding `manifest.csv` (columns
//! `path,emotion,speaker,text`), `norm.json` (the corpus normalization
//! basis) and one EDTF spectrogram file per segment. Toy generation,
//! featurization of real audio and synthetic sampling all emit this
//! layout, so downstream consumers cannot tell them apart.

use crate::audio::{MelSpectrogram, NormSpec};
use crate::emotion::EmotionLabel;
use crate::error::{Error, Result};
use crate::io::edtf;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub emotion: String,
    pub speaker: String,
    pub text: String,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        let row: ManifestRow = record
            .map_err(|e| Error::Data(format!("bad manifest row in {}: {e}", path.display())))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Data(format!("cannot write manifest {}: {e}", path.display())))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Data(format!("cannot serialize manifest row: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// One loaded segment with its conditioning text.
#[derive(Clone, Debug)]
pub struct CorpusItem<F: Scalar> {
    pub mel: MelSpectrogram<F>,
    pub text: String,
}

/// A fully loaded feature store.
#[derive(Clone, Debug)]
pub struct Corpus<F: Scalar> {
    pub items: Vec<CorpusItem<F>>,
    pub norm: NormSpec,
}

impl<F: Scalar> Corpus<F> {
    /// Sorted unique speakers.
    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.items.iter().map(|i| i.mel.speaker.clone()).collect();
        s.sort();
        s.dedup();
        s
    }
}

/// Writes a complete feature store. Segment files are named by their
/// source id.
pub fn save_feature_store<F: Scalar>(
    dir: &Path,
    items: &[CorpusItem<F>],
    norm: &NormSpec,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut rows = Vec::with_capacity(items.len());
    for item in items {
        let file = format!("{}.edtf", item.mel.source_id);
        edtf::write_tensor(&dir.join(&file), &item.mel.values)?;
        rows.push(ManifestRow {
            path: file,
            emotion: item.mel.emotion.name().to_string(),
            speaker: item.mel.speaker.clone(),
            text: item.text.clone(),
        });
    }
    write_manifest(&dir.join("manifest.csv"), &rows)?;
    let norm_json = serde_json::to_string_pretty(norm)
        .map_err(|e| Error::Data(format!("cannot serialize norm spec: {e}")))?;
    std::fs::write(dir.join("norm.json"), norm_json)
        .map_err(|e| Error::io(dir.display().to_string(), e))
}

/// Loads a feature store directory written by [`save_feature_store`]
/// (or by featurization of real audio).
pub fn load_feature_store<F: Scalar>(dir: &Path) -> Result<Corpus<F>> {
    let manifest_path = dir.join("manifest.csv");
    if !manifest_path.exists() {
        return Err(Error::Data(format!(
            "missing expected manifest {}",
            manifest_path.display()
        )));
    }
    let norm_path = dir.join("norm.json");
    let norm_text = std::fs::read_to_string(&norm_path)
        .map_err(|e| Error::io(norm_path.display().to_string(), e))?;
    let norm: NormSpec = serde_json::from_str(&norm_text)
        .map_err(|e| Error::Data(format!("bad norm.json: {e}")))?;
    let rows = read_manifest(&manifest_path)?;
    let mut items = Vec::with_capacity(rows.len());
    for row in rows {
        let emotion: EmotionLabel = row.emotion.parse()?;
        let tensor_path: PathBuf = dir.join(&row.path);
        let values = edtf::read_tensor::<F>(&tensor_path)?;
        if values.shape().len() != 2 {
            return Err(Error::Data(format!(
                "{}: spectrogram must be rank 2, got {:?}",
                tensor_path.display(),
                values.shape()
            )));
        }
        let source_id = row
            .path
            .strip_suffix(".edtf")
            .unwrap_or(&row.path)
            .to_string();
        items.push(CorpusItem {
            mel: MelSpectrogram {
                values,
                frame_hop: crate::audio::stft::HOP,
                source_id,
                emotion,
                speaker: row.speaker,
            },
            text: row.text,
        });
    }
    Ok(Corpus { items, norm })
}
