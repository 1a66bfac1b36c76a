//! Trajectory sampling and end-to-end experiments.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{Classifier, ConfusionMatrix, KMeansClassifier, MajorityClassifier, RandomClassifier};
use crate::error::{Error, Result};
use crate::grid::{GridIndex, GridSpec, Pose, SemanticGrid};
use crate::hmm::{train_hierarchical, DecodeConfig, HierarchicalModel, HierarchicalTrainingConfig, ObservationSequence, TrainingReport};
use crate::segmentation::{extract_supercells, to_point_cloud, PointCloudMap, Segmentation, SegmentationParams};
use crate::sim::{self, SceneData, ScenarioConfig, CLASS_NAMES};

/// Map representation a sequence was sampled from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationTag {
    #[default]
    Clustered,
    Cellwise,
    Pointcloud,
}

impl RepresentationTag {
    pub const ALL: [RepresentationTag; 3] = [
        RepresentationTag::Clustered,
        RepresentationTag::Cellwise,
        RepresentationTag::Pointcloud,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RepresentationTag::Clustered => "clustered",
            RepresentationTag::Cellwise => "cellwise",
            RepresentationTag::Pointcloud => "pointcloud",
        }
    }
}

impl std::str::FromStr for RepresentationTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RepresentationTag::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown representation {s:?}")))
    }
}

/// Polyline through the map, sampled every `step` meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Pose>,
    pub step: f64,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::invalid("a trajectory needs at least two waypoints"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid("trajectory step must be positive"));
        }
        Ok(())
    }

    /// Positions every `step` meters along the polyline, starting at the
    /// first waypoint.
    pub fn sample_positions(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut carry = 0.0;
        for w in self.waypoints.windows(2) {
            let (dx, dy) = (w[1].x - w[0].x, w[1].y - w[0].y);
            let len = (dx * dx + dy * dy).sqrt();
            let mut s = carry;
            while s <= len {
                let f = if len > 0.0 { s / len } else { 0.0 };
                out.push((w[0].x + f * dx, w[0].y + f * dy));
                s += self.step;
            }
            carry = s - len;
        }
        out
    }

    /// Cells crossed by the rasterized polyline, without repeats at joints.
    pub fn cells(&self, spec: &GridSpec) -> Result<Vec<GridIndex>> {
        self.validate()?;
        let mut out: Vec<GridIndex> = Vec::new();
        for w in self.waypoints.windows(2) {
            let a = spec.world_to_cell(w[0].x, w[0].y)?;
            let b = spec.world_to_cell(w[1].x, w[1].y)?;
            let line = bresenham_cells(spec, a, b)?;
            let skip = usize::from(out.last() == line.first());
            out.extend_from_slice(&line[skip..]);
        }
        Ok(out)
    }
}

/// 8-connected line from `a` to `b`, both included.
pub fn bresenham_cells(spec: &GridSpec, a: GridIndex, b: GridIndex) -> Result<Vec<GridIndex>> {
    spec.check(a)?;
    spec.check(b)?;
    let (mut x, mut y) = (a.x as i64, a.y as i64);
    let (x1, y1) = (b.x as i64, b.y as i64);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx.max(-dy) + 1) as usize);
    loop {
        out.push(GridIndex::new(x as usize, y as usize));
        if x == x1 && y == y1 {
            return Ok(out);
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Frame positions of a representation: traversed cells for the grid-based
/// ones, pose samples at the trajectory step for the point cloud.
fn frame_cells(spec: &GridSpec, traj: &Trajectory, rep: RepresentationTag) -> Result<Vec<GridIndex>> {
    match rep {
        RepresentationTag::Cellwise | RepresentationTag::Clustered => traj.cells(spec),
        RepresentationTag::Pointcloud => {
            traj.validate()?;
            traj.sample_positions()
                .into_iter()
                .map(|(x, y)| spec.world_to_cell(x, y))
                .collect()
        }
    }
}

pub fn sample_trajectory(
    grid: &SemanticGrid,
    seg: Option<&Segmentation>,
    pc: Option<&PointCloudMap>,
    traj: &Trajectory,
    rep: RepresentationTag,
) -> Result<ObservationSequence> {
    let spec = grid.spec();
    let frames = match rep {
        RepresentationTag::Cellwise => traj
            .cells(spec)?
            .into_iter()
            .map(|c| grid.logit_vector(c))
            .collect::<Result<Vec<_>>>()?,
        RepresentationTag::Clustered => {
            let seg = seg.ok_or_else(|| Error::invalid("clustered sampling needs a segmentation"))?;
            if seg.spec != *spec {
                return Err(Error::invalid("segmentation does not match the grid"));
            }
            traj.cells(spec)?
                .into_iter()
                .map(|c| seg.supercell_at(c).mean_logits())
                .collect()
        }
        RepresentationTag::Pointcloud => {
            let pc = pc.ok_or_else(|| Error::invalid("point-cloud sampling needs a point cloud"))?;
            if pc.points.is_empty() {
                return Err(Error::invalid("point cloud is empty"));
            }
            traj.validate()?;
            traj.sample_positions()
                .into_iter()
                .map(|(x, y)| {
                    spec.world_to_cell(x, y)?;
                    let cx = (x - spec.origin.0) / spec.resolution;
                    let cy = (y - spec.origin.1) / spec.resolution;
                    let p = &pc.points[pc.nearest(cx, cy).unwrap()];
                    Ok(p.mean_p
                        .iter()
                        .map(|&v| crate::grid::logit(crate::grid::Probability::new(v)).get())
                        .collect())
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    ObservationSequence::with_source(frames, rep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub obs: ObservationSequence,
    /// Class index per frame.
    pub truth: Vec<usize>,
    pub scenario: usize,
    pub trajectory: usize,
}

/// A simulated scene with its segmentation and point-cloud reduction.
#[derive(Clone, Debug)]
pub struct PreparedScene {
    pub index: usize,
    pub data: SceneData,
    pub segmentation: Segmentation,
    pub cloud: PointCloudMap,
}

impl PreparedScene {
    pub fn new(index: usize, data: SceneData, params: &SegmentationParams) -> Result<Self> {
        let mut params = params.clone();
        params.rng_seed = params.rng_seed.wrapping_add(index as u64);
        let segmentation = extract_supercells(&data.grid, &params)?;
        let cloud = to_point_cloud(&segmentation);
        Ok(PreparedScene {
            index,
            data,
            segmentation,
            cloud,
        })
    }

    /// One labeled sequence per evaluation trajectory.
    pub fn sequences(&self, rep: RepresentationTag) -> Result<Vec<LabeledSequence>> {
        let spec = self.data.grid.spec();
        self.data
            .trajectories
            .iter()
            .enumerate()
            .map(|(t, traj)| {
                let obs = sample_trajectory(&self.data.grid, Some(&self.segmentation), Some(&self.cloud), traj, rep)?;
                let truth = frame_cells(spec, traj, rep)?
                    .into_iter()
                    .map(|c| usize::from(self.data.truth.label_at(c)))
                    .collect();
                Ok(LabeledSequence {
                    obs,
                    truth,
                    scenario: self.index,
                    trajectory: t,
                })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    Hmm,
    Kmeans,
    Random,
    Majority,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 4] = [
        ClassifierKind::Hmm,
        ClassifierKind::Kmeans,
        ClassifierKind::Random,
        ClassifierKind::Majority,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Hmm => "hmm",
            ClassifierKind::Kmeans => "kmeans",
            ClassifierKind::Random => "random",
            ClassifierKind::Majority => "majority",
        }
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassifierKind::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown classifier {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierSection {
    pub kind: ClassifierKind,
    /// Clusters of the k-means baseline.
    pub kmeans_k: usize,
    pub seed: u64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection {
            kind: ClassifierKind::Hmm,
            kmeans_k: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSection {
    pub representation: RepresentationTag,
    /// Share of scenarios used for training.
    pub train_fraction: f64,
    pub split_seed: u64,
    pub decode: DecodeConfig,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            representation: RepresentationTag::Clustered,
            train_fraction: 0.7,
            split_seed: 0,
            decode: DecodeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub segmentation: SegmentationParams,
    /// `manual_means` left empty means the simulator's class means.
    pub model: HierarchicalTrainingConfig,
    pub classifier: ClassifierSection,
    pub evaluation: EvaluationSection,
}

/// Segmentation used by experiments: about 600 supercells per scene, each
/// at least 40 cells, with spatial distance weighted well above the logits.
pub const EXPERIMENT_NUM_SEEDS: usize = 600;
pub const EXPERIMENT_COMPACTNESS: f64 = 5.0;
pub const EXPERIMENT_MIN_CELL_COUNT: usize = 40;
/// Bakis skip width used by experiments.
pub const EXPERIMENT_SKIP: usize = 2;

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioConfig::default(),
            segmentation: SegmentationParams {
                num_seeds: EXPERIMENT_NUM_SEEDS,
                compactness: EXPERIMENT_COMPACTNESS,
                min_cell_count: EXPERIMENT_MIN_CELL_COUNT,
                ..SegmentationParams::default()
            },
            model: HierarchicalTrainingConfig {
                skip: EXPERIMENT_SKIP,
                ..HierarchicalTrainingConfig::default()
            },
            classifier: ClassifierSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Sets every seed in the configuration to `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.scenario.seed = seed;
        self.segmentation.rng_seed = seed;
        self.model.seed = seed;
        self.classifier.seed = seed;
        self.evaluation.split_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.segmentation.num_seeds == 0 {
            return Err(Error::invalid("segmentation.num_seeds must be >= 1"));
        }
        if self.scenario.num_scenes < 2 {
            return Err(Error::invalid("need at least two scenarios for a train/test split"));
        }
        let f = self.evaluation.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::invalid(format!("evaluation.train_fraction must lie in (0, 1), got {f}")));
        }
        if self.model.num_states == 0 {
            return Err(Error::invalid("model.num_states must be >= 1"));
        }
        if let Some(m) = &self.model.manual_means {
            if m.len() != CLASS_NAMES.len() || m.iter().any(|r| r.len() != sim::LAYER_NAMES.len()) {
                return Err(Error::invalid("model.manual_means must be a 3 x 3 table (class x layer)"));
            }
        }
        if self.classifier.kind == ClassifierKind::Kmeans && self.classifier.kmeans_k < CLASS_NAMES.len() {
            return Err(Error::invalid(format!(
                "classifier.kmeans_k = {} is smaller than the {} classes",
                self.classifier.kmeans_k,
                CLASS_NAMES.len()
            )));
        }
        self.model.training.validate()
    }

    /// Hash of the canonical JSON form together with the crate version.
    pub fn run_id(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(env!("CARGO_PKG_VERSION").as_bytes());
        h.update(b"\n");
        h.update(json.as_bytes());
        hex::encode(&h.finalize()[..8])
    }

    fn training_config(&self) -> Result<HierarchicalTrainingConfig> {
        let mut model = self.model.clone();
        if model.manual_means.is_none() {
            model.manual_means = Some(sim::manual_class_means(&self.scenario.curves())?);
        }
        Ok(model)
    }
}

/// Simulates, segments and reduces every scenario of the configuration.
pub fn prepare_scenes(config: &ExperimentConfig) -> Result<Vec<PreparedScene>> {
    config.validate()?;
    let specs = sim::random_scenes(&config.scenario)?;
    let curves = config.scenario.curves();
    specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let data = sim::build_scene(spec, &curves, &config.scenario.plan)?;
            PreparedScene::new(i, data, &config.segmentation)
        })
        .collect()
}

/// Seeded split of scenario indices into sorted train and test sets.
pub fn split_scenarios(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::invalid("need at least two scenarios for a train/test split"));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut train = ids[..n_train].to_vec();
    let mut test = ids[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// A trained classifier of any kind.
#[derive(Clone, Debug)]
pub enum FittedClassifier {
    Hmm(HierarchicalModel, DecodeConfig),
    Kmeans(KMeansClassifier),
    Random(RandomClassifier),
    Majority(MajorityClassifier),
}

impl FittedClassifier {
    pub fn predict(&self, obs: &ObservationSequence, stream: u64) -> Result<Vec<usize>> {
        Ok(match self {
            FittedClassifier::Hmm(m, decode) => m.decode_path(obs, decode)?,
            FittedClassifier::Kmeans(c) => c.predict(&obs.frames, stream),
            FittedClassifier::Random(c) => c.predict(&obs.frames, stream),
            FittedClassifier::Majority(c) => c.predict(&obs.frames, stream),
        })
    }
}

pub fn fit_classifier(
    config: &ExperimentConfig,
    train: &[LabeledSequence],
) -> Result<(FittedClassifier, Option<TrainingReport>)> {
    if train.is_empty() {
        return Err(Error::invalid("no training sequences"));
    }
    let labels: Vec<usize> = train.iter().flat_map(|s| s.truth.iter().copied()).collect();
    let seed = config.classifier.seed;
    Ok(match config.classifier.kind {
        ClassifierKind::Hmm => {
            let classes: Vec<String> = CLASS_NAMES.iter().map(|s| s.to_string()).collect();
            let data: Vec<(ObservationSequence, Vec<usize>)> =
                train.iter().map(|s| (s.obs.clone(), s.truth.clone())).collect();
            let (model, report) = train_hierarchical(&classes, &data, &config.training_config()?)?;
            (FittedClassifier::Hmm(model, config.evaluation.decode.clone()), Some(report))
        }
        ClassifierKind::Kmeans => {
            let frames: Vec<Vec<f64>> = train.iter().flat_map(|s| s.obs.frames.iter().cloned()).collect();
            let c = KMeansClassifier::fit(&frames, &labels, CLASS_NAMES.len(), config.classifier.kmeans_k, seed)?;
            (FittedClassifier::Kmeans(c), None)
        }
        ClassifierKind::Random => (
            FittedClassifier::Random(RandomClassifier::fit(&labels, CLASS_NAMES.len(), seed)?),
            None,
        ),
        ClassifierKind::Majority => (
            FittedClassifier::Majority(MajorityClassifier::fit(&labels, &CLASS_NAMES)?),
            None,
        ),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequencePrediction {
    pub scenario: usize,
    pub trajectory: usize,
    pub truth: Vec<usize>,
    pub predicted: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub predictions: Vec<SequencePrediction>,
    pub confusion: ConfusionMatrix,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    /// Macro-F1 of each test scenario on its own, in scenario order.
    pub per_scenario_f1: Vec<(usize, f64)>,
    pub training: Option<TrainingReport>,
}

/// Trains on `train` and scores predictions on `test`. Test sequences are
/// decoded in parallel; results keep the order of `test`.
pub fn evaluate_sequences(
    config: &ExperimentConfig,
    train: &[LabeledSequence],
    test: &[LabeledSequence],
) -> Result<Evaluation> {
    let (classifier, training) = fit_classifier(config, train)?;
    let predictions: Vec<SequencePrediction> = test
        .par_iter()
        .map(|s| {
            let stream = ((s.scenario as u64) << 32) | s.trajectory as u64;
            let predicted = classifier.predict(&s.obs, stream)?;
            if predicted.len() != s.truth.len() {
                return Err(Error::DimensionError {
                    expected: s.truth.len(),
                    found: predicted.len(),
                });
            }
            Ok(SequencePrediction {
                scenario: s.scenario,
                trajectory: s.trajectory,
                truth: s.truth.clone(),
                predicted,
            })
        })
        .collect::<Result<_>>()?;

    let mut confusion = ConfusionMatrix::new(&CLASS_NAMES);
    let mut per_scenario: Vec<(usize, ConfusionMatrix)> = Vec::new();
    for p in &predictions {
        confusion.add(&p.truth, &p.predicted)?;
        if per_scenario.last().map(|(s, _)| *s) != Some(p.scenario) {
            per_scenario.push((p.scenario, ConfusionMatrix::new(&CLASS_NAMES)));
        }
        per_scenario.last_mut().unwrap().1.add(&p.truth, &p.predicted)?;
    }
    Ok(Evaluation {
        macro_f1: confusion.macro_f1(),
        per_class_f1: confusion.per_class_f1(),
        per_scenario_f1: per_scenario.iter().map(|(s, m)| (*s, m.macro_f1())).collect(),
        predictions,
        confusion,
        training,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub train_scenarios: Vec<usize>,
    pub test_scenarios: Vec<usize>,
    /// Derived per-scene seeds: (scenario, simulation seed, segmentation seed).
    pub scene_seeds: Vec<(usize, u64, u64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub run_id: String,
    pub classes: Vec<String>,
    pub representation: RepresentationTag,
    pub classifier: ClassifierKind,
    pub bakis_length: usize,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub per_scenario_f1: Vec<(usize, f64)>,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<SequencePrediction>,
    pub training: Option<TrainingReport>,
    pub provenance: Provenance,
}

impl ExperimentResult {
    pub fn csv_header() -> String {
        let mut h = "run_id,representation,classifier,bakis_length,macro_f1".to_string();
        for c in CLASS_NAMES {
            h.push_str(&format!(",f1_{c}"));
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut row = format!(
            "{},{},{},{},{}",
            self.run_id,
            self.representation.name(),
            self.classifier.name(),
            self.bakis_length,
            self.macro_f1
        );
        for f in &self.per_class_f1 {
            row.push_str(&format!(",{f}"));
        }
        row
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::csv_header(), self.csv_row())
    }
}

/// Evaluates a configuration on already prepared scenes. The scenes must
/// come from `prepare_scenes` with the same scenario and segmentation
/// sections.
pub fn run_prepared(config: &ExperimentConfig, scenes: &[PreparedScene]) -> Result<ExperimentResult> {
    config.validate()?;
    if scenes.len() != config.scenario.num_scenes {
        return Err(Error::invalid(format!(
            "{} prepared scenes for a {}-scene configuration",
            scenes.len(),
            config.scenario.num_scenes
        )));
    }
    let rep = config.evaluation.representation;
    let (train_ids, test_ids) = split_scenarios(scenes.len(), config.evaluation.train_fraction, config.evaluation.split_seed)?;
    let gather = |ids: &[usize]| -> Result<Vec<LabeledSequence>> {
        let per_scene: Vec<Vec<LabeledSequence>> = ids.par_iter().map(|&i| scenes[i].sequences(rep)).collect::<Result<_>>()?;
        Ok(per_scene.into_iter().flatten().collect())
    };
    let train = gather(&train_ids)?;
    let test = gather(&test_ids)?;
    log::info!(
        "{} on {}: {} training and {} test sequences",
        config.classifier.kind.name(),
        rep.name(),
        train.len(),
        test.len()
    );
    let eval = evaluate_sequences(config, &train, &test)?;
    Ok(ExperimentResult {
        run_id: config.run_id(),
        classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        representation: rep,
        classifier: config.classifier.kind,
        bakis_length: config.model.num_states,
        macro_f1: eval.macro_f1,
        per_class_f1: eval.per_class_f1,
        per_scenario_f1: eval.per_scenario_f1,
        confusion: eval.confusion,
        predictions: eval.predictions,
        training: eval.training,
        provenance: Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            train_scenarios: train_ids,
            test_scenarios: test_ids,
            scene_seeds: scenes
                .iter()
                .map(|s| (s.index, s.data.scene.rng_seed, config.segmentation.rng_seed.wrapping_add(s.index as u64)))
                .collect(),
        },
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let scenes = prepare_scenes(config)?;
    run_prepared(config, &scenes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Probability;

    fn spec(w: usize, h: usize) -> GridSpec {
        GridSpec::new(w, h, 1.0, (0.0, 0.0)).unwrap()
    }

    fn idx(x: usize, y: usize) -> GridIndex {
        GridIndex::new(x, y)
    }

    /// Integer error accumulator over the major axis.
    fn reference_line(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        assert!(dx >= dy && dy >= 0);
        let mut out = Vec::new();
        let mut y = a.1;
        let mut acc = 0;
        for x in a.0..=b.0 {
            out.push((x, y));
            acc += 2 * dy;
            if acc > dx {
                y += 1;
                acc -= 2 * dx;
            }
        }
        out
    }

    #[test]
    fn bresenham_examples() {
        let s = spec(10, 10);
        assert_eq!(
            bresenham_cells(&s, idx(0, 0), idx(3, 0)).unwrap(),
            vec![idx(0, 0), idx(1, 0), idx(2, 0), idx(3, 0)]
        );
        assert_eq!(
            bresenham_cells(&s, idx(0, 0), idx(2, 2)).unwrap(),
            vec![idx(0, 0), idx(1, 1), idx(2, 2)]
        );
        let got: Vec<(i64, i64)> = bresenham_cells(&s, idx(0, 0), idx(5, 2))
            .unwrap()
            .iter()
            .map(|c| (c.x as i64, c.y as i64))
            .collect();
        assert_eq!(got.len(), 6);
        assert_eq!(got, reference_line((0, 0), (5, 2)));
        assert!(matches!(
            bresenham_cells(&s, idx(0, 0), idx(10, 0)),
            Err(Error::IndexOutOfBounds { .. })
        ));
    }

    #[test]
    fn bresenham_is_connected_without_repeats() {
        let s = spec(30, 30);
        for (a, b) in [((3, 17), (25, 2)), ((29, 29), (0, 5)), ((7, 7), (7, 7)), ((4, 0), (4, 20))] {
            let line = bresenham_cells(&s, idx(a.0, a.1), idx(b.0, b.1)).unwrap();
            assert_eq!(line[0], idx(a.0, a.1));
            assert_eq!(*line.last().unwrap(), idx(b.0, b.1));
            for w in line.windows(2) {
                let dx = w[0].x.abs_diff(w[1].x);
                let dy = w[0].y.abs_diff(w[1].y);
                assert!(dx <= 1 && dy <= 1 && dx + dy > 0);
            }
            let n = a.0.abs_diff(b.0).max(a.1.abs_diff(b.1)) + 1;
            assert_eq!(line.len(), n);
        }
    }

    fn two_half_grid() -> SemanticGrid {
        let s = spec(10, 4);
        let left = crate::grid::logit(Probability::new(0.2)).get();
        let right = crate::grid::logit(Probability::new(0.9)).get();
        let layer: Vec<f64> = (0..40).map(|i| if i % 10 < 5 { left } else { right }).collect();
        SemanticGrid::from_log_odds(s, vec![("a".into(), layer)]).unwrap()
    }

    fn across(y: f64) -> Trajectory {
        Trajectory {
            waypoints: vec![Pose::new(0.5, y, 0.0), Pose::new(9.5, y, 0.0)],
            step: 1.0,
        }
    }

    #[test]
    fn cellwise_on_homogeneous_grid_is_constant() {
        let g = SemanticGrid::from_probabilities(spec(6, 6), vec![("a".into(), vec![0.7; 36])]).unwrap();
        let traj = Trajectory {
            waypoints: vec![Pose::new(0.5, 0.5, 0.0), Pose::new(5.5, 3.5, 0.0), Pose::new(1.5, 5.5, 0.0)],
            step: 1.0,
        };
        let obs = sample_trajectory(&g, None, None, &traj, RepresentationTag::Cellwise).unwrap();
        let v = crate::grid::logit(Probability::new(0.7)).get();
        assert!(obs.len() >= 9);
        assert!(obs.frames.iter().all(|f| (f[0] - v).abs() < 1e-12));
    }

    #[test]
    fn clustered_switches_at_boundary() {
        let g = two_half_grid();
        let labels: Vec<u32> = (0..40).map(|i| u32::from(i % 10 >= 5)).collect();
        let seg = Segmentation::from_labels(&g, &labels).unwrap();
        let obs = sample_trajectory(&g, Some(&seg), None, &across(1.5), RepresentationTag::Clustered).unwrap();
        let cell = sample_trajectory(&g, None, None, &across(1.5), RepresentationTag::Cellwise).unwrap();
        assert_eq!(obs.len(), 10);
        for (t, (a, b)) in obs.frames.iter().zip(&cell.frames).enumerate() {
            assert!((a[0] - b[0]).abs() < 1e-9, "frame {t}");
        }
        let first_right = obs.frames.iter().position(|f| f[0] > 0.0).unwrap();
        assert_eq!(first_right, 5);
    }

    #[test]
    fn single_point_cloud_is_constant() {
        let g = two_half_grid();
        let pc = PointCloudMap {
            points: vec![crate::segmentation::CloudPoint {
                x: 2.0,
                y: 2.0,
                mean_p: vec![0.3],
            }],
        };
        let obs = sample_trajectory(&g, None, Some(&pc), &across(1.5), RepresentationTag::Pointcloud).unwrap();
        let v = crate::grid::logit(Probability::new(0.3)).get();
        assert_eq!(obs.len(), 10);
        assert!(obs.frames.iter().all(|f| f[0] == v));
    }

    #[test]
    fn missing_inputs_and_bounds() {
        let g = two_half_grid();
        assert!(matches!(
            sample_trajectory(&g, None, None, &across(1.5), RepresentationTag::Clustered),
            Err(Error::InvalidParams(_))
        ));
        assert!(matches!(
            sample_trajectory(&g, None, None, &across(1.5), RepresentationTag::Pointcloud),
            Err(Error::InvalidParams(_))
        ));
        assert!(matches!(
            sample_trajectory(&g, None, None, &across(7.5), RepresentationTag::Cellwise),
            Err(Error::IndexOutOfBounds { .. })
        ));
    }

    #[test]
    fn sample_positions_follow_step() {
        let traj = Trajectory {
            waypoints: vec![Pose::new(0.0, 0.0, 0.0), Pose::new(1.0, 0.0, 0.0), Pose::new(1.0, 1.0, 0.0)],
            step: 0.3,
        };
        let p = traj.sample_positions();
        assert_eq!(p.len(), 7);
        assert!((p[3].0 - 0.9).abs() < 1e-12);
        assert!((p[4].0 - 1.0).abs() < 1e-12 && (p[4].1 - 0.2).abs() < 1e-12);
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let (train, test) = split_scenarios(20, 0.7, 5).unwrap();
        assert_eq!((train.len(), test.len()), (14, 6));
        assert!(train.iter().all(|t| !test.contains(t)));
        assert_eq!(split_scenarios(20, 0.7, 5).unwrap(), (train.clone(), test));
        assert_ne!(split_scenarios(20, 0.7, 6).unwrap().0, train);
    }

    fn labeled(truth: Vec<usize>, scenario: usize, means: &[f64]) -> LabeledSequence {
        let frames = truth.iter().map(|&c| vec![means[c], -means[c]]).collect();
        LabeledSequence {
            obs: ObservationSequence::new(frames).unwrap(),
            truth,
            scenario,
            trajectory: 0,
        }
    }

    fn path(runs: &[(usize, usize)]) -> Vec<usize> {
        runs.iter().flat_map(|&(c, n)| std::iter::repeat_n(c, n)).collect()
    }

    fn separable() -> (Vec<LabeledSequence>, Vec<LabeledSequence>) {
        let means = [-3.0, 0.0, 3.0];
        let train = (0..4)
            .map(|i| labeled(path(&[(0, 6 + i), (1, 10), (2, 5 + i), (1, 8), (0, 6)]), i, &means))
            .collect();
        let test = (4..6)
            .map(|i| labeled(path(&[(0, 7), (1, 9 + i), (2, 6), (1, 7), (0, 5)]), i, &means))
            .collect();
        (train, test)
    }

    fn small_config(kind: ClassifierKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.classifier.kind = kind;
        c.model.num_states = 3;
        c.model.manual_means = Some(vec![vec![-3.0, 3.0], vec![0.0, 0.0], vec![3.0, -3.0]]);
        c
    }

    #[test]
    fn hmm_on_separable_sequences_is_perfect() {
        let (train, test) = separable();
        let eval = evaluate_sequences(&small_config(ClassifierKind::Hmm), &train, &test).unwrap();
        assert_eq!(eval.macro_f1, 1.0);
        assert_eq!(eval.per_scenario_f1.len(), 2);
    }

    #[test]
    fn majority_on_balanced_labels() {
        let means = [-3.0, 0.0, 3.0];
        let train = vec![labeled(path(&[(0, 10), (1, 10), (2, 10)]), 0, &means)];
        let test = vec![labeled(path(&[(0, 10), (1, 10), (2, 10)]), 1, &means)];
        let eval = evaluate_sequences(&small_config(ClassifierKind::Majority), &train, &test).unwrap();
        assert!((eval.macro_f1 - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn frame_counts_are_conserved() {
        let (train, test) = separable();
        for kind in ClassifierKind::ALL {
            let eval = evaluate_sequences(&small_config(kind), &train, &test).unwrap();
            for (p, s) in eval.predictions.iter().zip(&test) {
                assert_eq!(p.predicted.len(), s.obs.len());
                assert_eq!(p.truth.len(), s.obs.len());
            }
        }
    }

    #[test]
    fn config_defaults_round_trip() {
        let c = ExperimentConfig::default();
        let json = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"classifier": {"kind": "kmeans"}}"#).unwrap();
        assert_eq!(partial.classifier.kind, ClassifierKind::Kmeans);
        assert_eq!(partial.scenario, c.scenario);
        assert_eq!(c.run_id(), ExperimentConfig::default().run_id());
        assert_ne!(c.run_id(), partial.run_id());
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        let mut c = ExperimentConfig::default();
        c.evaluation.train_fraction = 1.0;
        assert!(matches!(c.validate(), Err(Error::InvalidParams(_))));
        let mut c = ExperimentConfig::default();
        c.classifier.kind = ClassifierKind::Kmeans;
        c.classifier.kmeans_k = 2;
        assert!(matches!(c.validate(), Err(Error::InvalidParams(_))));
        let mut c = ExperimentConfig::default();
        c.scenario.num_scenes = 1;
        assert!(matches!(run_experiment(&c), Err(Error::InvalidParams(_))));
    }
}
