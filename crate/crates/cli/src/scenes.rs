use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use sogm_core::io;
use sogm_core::pipeline::{ExperimentConfig, PreparedScene};
use sogm_core::segmentation::{read_segmentation, to_point_cloud, SegmentationManifest, SegmentationParams};
use sogm_core::sim::read_scene;
use sogm_core::Error;

use crate::manifest::CONFIG_FILE;
use crate::Common;

/// File stem used for every per-scene artifact.
pub const SCENE_NAME: &str = "scene";

pub fn scene_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("scene_{index:04}"))
}

pub fn conflict(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidParams(msg.into()).into()
}

/// Segmentation parameters actually used for scene `index`.
pub fn scene_params(params: &SegmentationParams, index: usize) -> SegmentationParams {
    let mut p = params.clone();
    p.rng_seed = p.rng_seed.wrapping_add(index as u64);
    p
}

/// Reads `--config`, falling back to the snapshot in `upstream` (an
/// earlier command's output directory), the dataset's snapshot or the
/// defaults. The scenario section must match the dataset, and `--seed`
/// is applied last. The result is not validated.
pub fn resolve_config(common: &Common, dataset: Option<&Path>, upstream: Option<&Path>) -> Result<ExperimentConfig> {
    let stored: Option<ExperimentConfig> = dataset
        .map(|d| io::read_json(&d.join(CONFIG_FILE)).context("reading the dataset configuration"))
        .transpose()?;
    let mut config = if let Some(path) = &common.config {
        io::read_json(path)?
    } else if let Some(dir) = upstream {
        io::read_json(&dir.join(CONFIG_FILE))?
    } else {
        stored.clone().unwrap_or_default()
    };
    if let Some(stored) = &stored {
        if stored.scenario != config.scenario {
            return Err(conflict("the scenario section differs from the one the dataset was simulated with"));
        }
    }
    if let Some(seed) = common.seed {
        if stored.is_some() {
            config.model.seed = seed;
            config.classifier.seed = seed;
            config.evaluation.split_seed = seed;
        } else {
            config = config.with_seed(seed);
        }
    }
    Ok(config)
}

/// Loads every scene of a dataset, reading stored segmentations when a
/// directory is given and recomputing them otherwise.
pub fn load_scenes(dataset: &Path, segmentation: Option<&Path>, config: &ExperimentConfig) -> Result<Vec<PreparedScene>> {
    (0..config.scenario.num_scenes)
        .into_par_iter()
        .map(|i| {
            let data = read_scene(&scene_dir(dataset, i), SCENE_NAME)?;
            let Some(seg_root) = segmentation else {
                return Ok(PreparedScene::new(i, data, &config.segmentation)?);
            };
            let dir = scene_dir(seg_root, i);
            let stored: SegmentationManifest = io::read_json(&dir.join(format!("{SCENE_NAME}.segmentation.json")))?;
            if stored.params != scene_params(&config.segmentation, i) {
                return Err(conflict(format!(
                    "segmentation of scene {i} was made with different parameters than the configuration"
                )));
            }
            let segmentation = read_segmentation(&dir, SCENE_NAME, &data.grid)?;
            let cloud = to_point_cloud(&segmentation);
            Ok(PreparedScene {
                index: i,
                data,
                segmentation,
                cloud,
            })
        })
        .collect()
}
