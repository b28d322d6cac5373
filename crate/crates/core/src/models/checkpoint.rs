//! Checkpoint directories: `manifest.json` plus one blob per parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build, ForecastModel, ModelConfig};
use crate::blob;
use crate::error::{Error, Result};

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub config: ModelConfig,
    pub parameters: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

pub fn save_checkpoint(model: &ForecastModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut parameters = Vec::with_capacity(model.params.len());
    for (name, t) in model.params.iter() {
        let file = format!("{name}.f32");
        blob::write(&dir.join(&file), t)?;
        parameters.push(ParamEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            file,
        });
    }
    let m = CheckpointManifest {
        version: 1,
        config: model.config.clone(),
        parameters,
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&m).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<ForecastModel> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(MANIFEST, 0, format!("line {}: {e}", e.line())))?;
    if m.version != 1 {
        return Err(Error::format(MANIFEST, 0, format!("unsupported version {}", m.version)));
    }
    // a fresh build fixes the expected names and shapes
    let mut model = build(&m.config)?;
    let expected: Vec<(String, Vec<usize>)> = model
        .params
        .iter()
        .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
        .collect();
    let listed: Vec<(String, Vec<usize>)> =
        m.parameters.iter().map(|p| (p.name.clone(), p.shape.clone())).collect();
    if expected != listed {
        return Err(Error::format(
            MANIFEST,
            0,
            "parameter list does not match the configured architecture",
        ));
    }
    for entry in &m.parameters {
        if entry.file.contains('/') || entry.file.contains("..") {
            return Err(Error::format(MANIFEST, 0, format!("bad file name {:?}", entry.file)));
        }
        let t = blob::read(&dir.join(&entry.file))?;
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::format(
                &entry.file,
                0,
                format!("shape {:?}, manifest says {:?}", t.shape(), entry.shape),
            ));
        }
        *model.params.get_mut(&entry.name).expect("name checked above") = t.with_requires_grad(true);
    }
    Ok(model)
}
