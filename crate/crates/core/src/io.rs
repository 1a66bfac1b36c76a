//! On-disk formats.
//!
//! Grids are a JSON manifest `<name>.json` plus one little-endian `f32`
//! probability blob per layer (`<name>.<layer>.f32`, row-major). Label blobs
//! are raw `u32` (segmentations) or `u8` (ground truth) arrays in the same
//! layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, SemanticGrid, EPS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub spec: GridSpec,
    pub layers: Vec<String>,
    pub eps: f64,
}

pub fn grid_manifest_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.json"))
}

pub fn layer_blob_path(dir: &Path, name: &str, layer: &str) -> PathBuf {
    dir.join(format!("{name}.{layer}.f32"))
}

pub fn write_grid(dir: &Path, name: &str, grid: &SemanticGrid) -> Result<()> {
    let manifest = GridManifest {
        spec: grid.spec().clone(),
        layers: grid.layer_names().iter().map(|s| s.to_string()).collect(),
        eps: EPS,
    };
    write_json(&grid_manifest_path(dir, name), &manifest)?;
    for (i, layer) in manifest.layers.iter().enumerate() {
        let probs: Vec<f32> = grid.layer_probabilities(i).iter().map(|&p| p as f32).collect();
        write_f32_blob(&layer_blob_path(dir, name, layer), &probs)?;
    }
    Ok(())
}

pub fn read_grid(dir: &Path, name: &str) -> Result<SemanticGrid> {
    let manifest: GridManifest = read_json(&grid_manifest_path(dir, name))?;
    manifest.spec.validate()?;
    let n = manifest.spec.num_cells();
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for layer in &manifest.layers {
        let data = read_f32_blob(&layer_blob_path(dir, name, layer))?;
        if data.len() != n {
            return Err(Error::DimensionError {
                expected: n,
                found: data.len(),
            });
        }
        layers.push((layer.clone(), data.into_iter().map(f64::from).collect()));
    }
    SemanticGrid::from_probabilities(manifest.spec, layers)
}

/// Debug export: one row per cell, `x,y,<p per layer>`.
pub fn grid_to_csv(grid: &SemanticGrid) -> String {
    let spec = grid.spec();
    let mut out = String::from("x,y");
    for name in grid.layer_names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let probs: Vec<Vec<f64>> = (0..grid.num_layers()).map(|i| grid.layer_probabilities(i)).collect();
    for off in 0..spec.num_cells() {
        let idx = spec.at_offset(off);
        out.push_str(&format!("{},{}", idx.x, idx.y));
        for layer in &probs {
            out.push_str(&format!(",{:.9}", layer[off]));
        }
        out.push('\n');
    }
    out
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(format!("serializing {}", path.display()), e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::json(format!("parsing {}", path.display()), e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| not_found_or_io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| not_found_or_io(path, e))
}

fn not_found_or_io(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::NotFound(path.to_path_buf())
    } else {
        Error::io(format!("reading {}", path.display()), e)
    }
}

pub fn write_f32_blob(path: &Path, data: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_bytes(path, &bytes)
}

pub fn read_f32_blob(path: &Path) -> Result<Vec<f32>> {
    let bytes = read_bytes(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::invalid(format!(
            "{} is not a whole number of f32 values",
            path.display()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_u32_blob(path: &Path, data: &[u32]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_bytes(path, &bytes)
}

pub fn read_u32_blob(path: &Path) -> Result<Vec<u32>> {
    let bytes = read_bytes(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::invalid(format!(
            "{} is not a whole number of u32 values",
            path.display()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_u8_blob(path: &Path, data: &[u8]) -> Result<()> {
    write_bytes(path, data)
}

pub fn read_u8_blob(path: &Path) -> Result<Vec<u8>> {
    read_bytes(path)
}
