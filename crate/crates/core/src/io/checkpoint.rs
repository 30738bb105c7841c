//! Checkpoint directories: one EDTF file per parameter plus a JSON
//! manifest. Writes go to a temporary sibling directory that is renamed
//! into place, so readers never observe a half-written checkpoint.

use crate::error::{Error, Result};
use crate::io::edtf;
use crate::scalar::Scalar;
use crate::tensor::{ParamSet, Tensor};
use std::path::Path;

/// Saves parameters (in registration order) plus arbitrary metadata.
/// Extra named tensors (e.g. normalization buffers) ride along.
pub fn save<F: Scalar>(
    dir: &Path,
    params: &ParamSet<F>,
    extra: &[(String, Tensor<F>)],
    meta: &serde_json::Value,
) -> Result<()> {
    let parent = dir.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    let tmp = parent.join(format!(
        ".{}.tmp",
        dir.file_name().and_then(|n| n.to_str()).unwrap_or("ckpt")
    ));
    std::fs::remove_dir_all(&tmp).ok();
    std::fs::create_dir_all(tmp.join("params")).map_err(|e| Error::io(tmp.display().to_string(), e))?;

    let mut names = Vec::with_capacity(params.len());
    for (i, p) in params.params().iter().enumerate() {
        let file = format!("params/{i:04}.edtf");
        edtf::write_tensor(&tmp.join(&file), &p.value)?;
        names.push(serde_json::json!({ "name": p.name, "file": file, "steps": p.steps }));
    }
    let mut extra_entries = Vec::new();
    for (name, tensor) in extra {
        let file = format!("params/extra_{name}.edtf");
        edtf::write_tensor(&tmp.join(&file), tensor)?;
        extra_entries.push(serde_json::json!({ "name": name, "file": file }));
    }
    let manifest = serde_json::json!({
        "meta": meta,
        "parameters": names,
        "extra": extra_entries,
    });
    std::fs::write(
        tmp.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest json"),
    )
    .map_err(|e| Error::io(tmp.display().to_string(), e))?;

    std::fs::remove_dir_all(dir).ok();
    std::fs::rename(&tmp, dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

pub struct LoadedCheckpoint<F: Scalar> {
    pub values: Vec<(String, Tensor<F>)>,
    pub extra: Vec<(String, Tensor<F>)>,
    pub meta: serde_json::Value,
    pub steps: Vec<u64>,
}

pub fn load<F: Scalar>(dir: &Path) -> Result<LoadedCheckpoint<F>> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::Data(format!(
            "missing expected checkpoint manifest {}",
            manifest_path.display()
        )));
    }
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("bad checkpoint manifest: {e}")))?;
    let entries = manifest["parameters"]
        .as_array()
        .ok_or_else(|| Error::Data("checkpoint manifest has no parameter list".into()))?;
    let mut values = Vec::with_capacity(entries.len());
    let mut steps = Vec::with_capacity(entries.len());
    for e in entries {
        let name = e["name"].as_str().unwrap_or_default().to_string();
        let file = e["file"]
            .as_str()
            .ok_or_else(|| Error::Data("parameter entry missing file".into()))?;
        values.push((name, edtf::read_tensor::<F>(&dir.join(file))?));
        steps.push(e["steps"].as_u64().unwrap_or(0));
    }
    let mut extra = Vec::new();
    if let Some(arr) = manifest["extra"].as_array() {
        for e in arr {
            let name = e["name"].as_str().unwrap_or_default().to_string();
            let file = e["file"]
                .as_str()
                .ok_or_else(|| Error::Data("extra entry missing file".into()))?;
            extra.push((name, edtf::read_tensor::<F>(&dir.join(file))?));
        }
    }
    Ok(LoadedCheckpoint { values, extra, meta: manifest["meta"].clone(), steps })
}

/// Restores loaded values into a parameter set built with the same
/// layout; names must match position by position.
pub fn restore_into<F: Scalar>(params: &mut ParamSet<F>, loaded: &LoadedCheckpoint<F>) -> Result<()> {
    if loaded.values.len() != params.len() {
        return Err(Error::shape(
            "checkpoint::restore_into",
            "parameter count",
            params.len(),
            loaded.values.len(),
        ));
    }
    for (p, (name, value)) in params.params_mut().iter_mut().zip(loaded.values.iter()) {
        if &p.name != name {
            return Err(Error::Data(format!(
                "checkpoint layout mismatch: expected parameter '{}', found '{name}'",
                p.name
            )));
        }
        if p.value.shape() != value.shape() {
            return Err(Error::shape(
                "checkpoint::restore_into",
                "parameter shape",
                format!("{:?}", p.value.shape()),
                format!("{:?}", value.shape()),
            ));
        }
        p.value = value.clone();
    }
    Ok(())
}
