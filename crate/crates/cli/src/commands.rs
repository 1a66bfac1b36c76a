use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sogm_core::baselines::{KMeansClassifier, MajorityClassifier, RandomClassifier};
use sogm_core::hmm::{read_model, write_model};
use sogm_core::io;
use sogm_core::pipeline::{
    fit_classifier, split_scenarios, ClassifierKind, ExperimentConfig, FittedClassifier, LabeledSequence, PreparedScene,
};
use sogm_core::segmentation::{boundary_recall, write_segmentation};
use sogm_core::sim::{self, CLASS_NAMES};

use crate::manifest::{Recorder, CONFIG_FILE};
use crate::scenes::{conflict, load_scenes, resolve_config, scene_dir, scene_params, SCENE_NAME};
use crate::Common;

pub const MODEL_FILE: &str = "model.json";
pub const BASELINE_FILE: &str = "classifier.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

pub fn simulate(common: &Common) -> Result<()> {
    let config = resolve_config(common, None, None)?;
    config.scenario.validate()?;
    let mut rec = Recorder::new("simulate", &common.out);
    if let Some(p) = &common.config {
        rec.input(p);
    }
    let specs = sim::random_scenes(&config.scenario)?;
    let curves = config.scenario.curves();
    specs.par_iter().enumerate().try_for_each(|(i, spec)| -> Result<()> {
        let data = sim::build_scene(spec, &curves, &config.scenario.plan)?;
        sim::write_scene(&scene_dir(&common.out, i), SCENE_NAME, &data)?;
        Ok(())
    })?;
    for i in 0..specs.len() {
        rec.artifact(scene_dir(Path::new(""), i));
    }
    log::info!("simulated {} scenes into {}", specs.len(), common.out.display());
    rec.finish(&config)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub scene: usize,
    pub supercells: usize,
    pub mean_variance: f64,
    pub boundary_recall: f64,
}

pub fn segment(common: &Common, dataset: &Path) -> Result<()> {
    let config = resolve_config(common, Some(dataset), None)?;
    config.scenario.validate()?;
    let mut rec = Recorder::new("segment", &common.out);
    rec.input(dataset);
    let rows: Vec<SegmentSummary> = (0..config.scenario.num_scenes)
        .into_par_iter()
        .map(|i| -> Result<SegmentSummary> {
            let data = sim::read_scene(&scene_dir(dataset, i), SCENE_NAME)?;
            let scene = PreparedScene::new(i, data, &config.segmentation)?;
            let seg = &scene.segmentation;
            write_segmentation(&scene_dir(&common.out, i), SCENE_NAME, seg, &scene_params(&config.segmentation, i))?;
            Ok(SegmentSummary {
                scene: i,
                supercells: seg.num_supercells(),
                mean_variance: seg.mean_variance(),
                boundary_recall: boundary_recall(&seg.spec, &scene.data.truth.labels, &seg.labels),
            })
        })
        .collect::<Result<_>>()?;
    for i in 0..rows.len() {
        rec.artifact(scene_dir(Path::new(""), i));
    }
    write_csv(&rec.artifact("summary.csv"), &rows)?;
    rec.finish(&config)?;
    Ok(())
}

/// Serialized form of the non-HMM classifiers.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum StoredBaseline {
    Kmeans(KMeansClassifier),
    Random(RandomClassifier),
    Majority(MajorityClassifier),
}

#[derive(Debug, Serialize, Deserialize)]
struct Split {
    train: Vec<usize>,
    test: Vec<usize>,
}

fn split(config: &ExperimentConfig) -> Result<Split> {
    let (train, test) = split_scenarios(
        config.scenario.num_scenes,
        config.evaluation.train_fraction,
        config.evaluation.split_seed,
    )?;
    Ok(Split { train, test })
}

fn gather(scenes: &[PreparedScene], ids: &[usize], config: &ExperimentConfig) -> Result<Vec<LabeledSequence>> {
    let rep = config.evaluation.representation;
    let per_scene: Vec<Vec<LabeledSequence>> = ids.par_iter().map(|&i| scenes[i].sequences(rep)).collect::<sogm_core::Result<_>>()?;
    Ok(per_scene.into_iter().flatten().collect())
}

pub fn train(common: &Common, dataset: &Path, segmentation: Option<&Path>) -> Result<()> {
    let config = resolve_config(common, Some(dataset), None)?;
    config.validate()?;
    let mut rec = Recorder::new("train", &common.out);
    rec.input(dataset);
    if let Some(s) = segmentation {
        rec.input(s);
    }
    let scenes = load_scenes(dataset, segmentation, &config)?;
    let split = split(&config)?;
    let train = gather(&scenes, &split.train, &config)?;
    let (classifier, report) = fit_classifier(&config, &train)?;
    match classifier {
        FittedClassifier::Hmm(model, _) => write_model(&rec.artifact(MODEL_FILE), &model)?,
        FittedClassifier::Kmeans(c) => io::write_json(&rec.artifact(BASELINE_FILE), &StoredBaseline::Kmeans(c))?,
        FittedClassifier::Random(c) => io::write_json(&rec.artifact(BASELINE_FILE), &StoredBaseline::Random(c))?,
        FittedClassifier::Majority(c) => io::write_json(&rec.artifact(BASELINE_FILE), &StoredBaseline::Majority(c))?,
    }
    if let Some(report) = report {
        io::write_json(&rec.artifact("training.json"), &report)?;
    }
    io::write_json(&rec.artifact("split.json"), &split)?;
    rec.finish(&config)?;
    Ok(())
}

fn load_classifier(model_dir: &Path, config: &ExperimentConfig) -> Result<FittedClassifier> {
    Ok(match config.classifier.kind {
        ClassifierKind::Hmm => {
            FittedClassifier::Hmm(read_model(&model_dir.join(MODEL_FILE))?, config.evaluation.decode.clone())
        }
        kind => {
            let stored: StoredBaseline = io::read_json(&model_dir.join(BASELINE_FILE))?;
            match (kind, stored) {
                (ClassifierKind::Kmeans, StoredBaseline::Kmeans(c)) => FittedClassifier::Kmeans(c),
                (ClassifierKind::Random, StoredBaseline::Random(c)) => FittedClassifier::Random(c),
                (ClassifierKind::Majority, StoredBaseline::Majority(c)) => FittedClassifier::Majority(c),
                (kind, stored) => {
                    return Err(conflict(format!("configured classifier {} but found {stored:?}", kind.name())));
                }
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub scenario: usize,
    pub trajectory: usize,
    pub frame: usize,
    pub truth: String,
    pub predicted: String,
}

pub fn decode(common: &Common, dataset: &Path, segmentation: Option<&Path>, model_dir: &Path) -> Result<()> {
    let config = resolve_config(common, Some(dataset), Some(model_dir))?;
    config.validate()?;
    let trained: ExperimentConfig = io::read_json(&model_dir.join(CONFIG_FILE)).context("reading the training configuration")?;
    if trained.scenario != config.scenario
        || trained.segmentation != config.segmentation
        || trained.model != config.model
        || trained.classifier != config.classifier
        || trained.evaluation.representation != config.evaluation.representation
    {
        return Err(conflict("configuration differs from the one the model was trained with"));
    }
    let mut rec = Recorder::new("decode", &common.out);
    rec.input(dataset);
    rec.input(model_dir);
    if let Some(s) = segmentation {
        rec.input(s);
    }
    let classifier = load_classifier(model_dir, &config)?;
    let scenes = load_scenes(dataset, segmentation, &config)?;
    let test = gather(&scenes, &split(&config)?.test, &config)?;
    let per_seq: Vec<Vec<PredictionRow>> = test
        .par_iter()
        .map(|s| -> Result<Vec<PredictionRow>> {
            let stream = ((s.scenario as u64) << 32) | s.trajectory as u64;
            let predicted = classifier.predict(&s.obs, stream)?;
            Ok(s.truth
                .iter()
                .zip(&predicted)
                .enumerate()
                .map(|(frame, (&t, &p))| PredictionRow {
                    scenario: s.scenario,
                    trajectory: s.trajectory,
                    frame,
                    truth: CLASS_NAMES[t].to_string(),
                    predicted: CLASS_NAMES[p].to_string(),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let rows: Vec<PredictionRow> = per_seq.into_iter().flatten().collect();
    write_csv(&rec.artifact(PREDICTIONS_FILE), &rows)?;
    rec.finish(&config)?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().context("flushing CSV")?;
    io::write_bytes(path, &bytes)?;
    Ok(())
}
