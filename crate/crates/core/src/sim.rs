//! Synthetic table-top scenes.
//!
//! A scene is a table rectangle with disc-shaped objects on it, surrounded
//! by ground. The robot drives on the table and approaches objects along one
//! scene heading. Each classifier layer follows a response template recorded
//! along such an approach, indexed by distance: a plateau on the open table,
//! an obstacle peak at the object's front, then a rising anomaly response
//! while corner and obstacle evidence fades to unknown over the rest of the
//! object and the occluded table behind it. Ground cells carry a fixed
//! response per layer.
//!
//! An observation of a cell seen `c` times in total contributes
//! `logit(mean) / c + noise` with independent `noise ~ N(0, sigma^2)`, so the
//! fused map holds `logit(mean)` plus noise of standard deviation
//! `sigma * sqrt(c)`.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{logit, GridIndex, GridSpec, LayerObservation, LogOdds, Pose, Probability, SemanticGrid};
use crate::io;
use crate::pipeline::Trajectory;

pub const CLASS_NAMES: [&str; 3] = ["ground", "table", "object"];
pub const LAYER_NAMES: [&str; 3] = ["anomaly", "corner", "obstacle"];
pub const GROUND: u8 = 0;
pub const TABLE: u8 = 1;
pub const OBJECT: u8 = 2;

/// Profile coordinates (meters along the approach) of the sampled response.
const PROFILE_X: [f64; 49] = [
    0.0, 0.00999999046325684, 0.0223606582731009, 0.0316227450966835, 0.0412310175597668,
    0.0538515970110893, 0.063245490193367, 0.0728010311722755, 0.0824620351195335,
    0.094868466258049, 0.10440319031477, 0.1140176653862, 0.126491218805313, 0.136014804244041,
    0.145602285861969, 0.158113956451416, 0.167630612850189, 0.177200511097908,
    0.189736738801003, 0.199248656630516, 0.208806186914444, 0.221359491348267,
    0.230867967009544, 0.240416333079338, 0.250000029802322, 0.262488096952438,
    0.272029399871826, 0.281602561473846, 0.294108927249908, 0.303644627332687,
    0.313209265470505, 0.32573002576828, 0.335261136293411, 0.344818830490112, 0.357351392507553,
    0.366878747940063, 0.376430630683899, 0.388973027467728, 0.39849716424942, 0.408044099807739,
    0.417612224817276, 0.430116355419159, 0.439659029245377, 0.449221611022949,
    0.461735904216766, 0.47127491235733, 0.480832636356354, 0.493355870246887, 0.502891659736633,
];

const A: f64 = 0.00035697064595297;
const B: f64 = 0.0566524267196655;
const C: f64 = 0.119202919304371;
const D: f64 = 0.99193799495697;
const E: f64 = 0.88079708814621;
const F: f64 = 0.348645120859146;
const G: f64 = 0.256832003593445;

const ANOMALY_P: [f64; 49] = [
    A, A, A, A, A, A, A, A, A, A, A, A, 0.0159063916653395, 0.0229773707687855, 0.0474258735775948,
    G, G, G, 0.468790620565414, 0.577495336532593, 0.577495336532593, 0.679178714752197,
    0.76629364490509, 0.76629364490509, 0.835483551025391, E, E, 0.874077260494232,
    0.874077260494232, 0.874077260494232, 0.867035746574402, 0.859663724899292, 0.859663724899292,
    0.859663724899292, 0.851952791213989, 0.843895077705383, 0.843895077705383, 0.835483551025391,
    0.835483551025391, 0.817574501037598, 0.817574501037598, 0.808067202568054, 0.798186779022217,
    0.798186779022217, 0.798186779022217, 0.798186779022217, 0.787931203842163, 0.76629364490509,
    0.76629364490509,
];

const CORNER_P: [f64; 49] = [
    B, B, B, B, B, B, B, B, B, B, B, A, A, A, A, 0.5, F, F, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5,
    0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5,
    0.5, 0.5, 0.5, 0.5,
];

const OBSTACLE_P: [f64; 49] = [
    C, C, C, C, C, C, C, C, C, C, C, D, D, D, D, 0.5, F, A, A, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5,
    0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5,
    0.5, 0.5, 0.5, 0.5,
];

/// Profile position of an object's front edge (first obstacle peak sample).
pub const PROFILE_FRONT_X: f64 = 0.1140176653862;

/// Ground response per layer: the anomaly plateau, corner and obstacle
/// unknown.
pub const GROUND_P: [f64; 3] = [E, 0.5, 0.5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: (f64, f64),
    pub max: (f64, f64),
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min.0 && x <= self.max.0 && y >= self.min.1 && y <= self.max.1
    }

    fn contains_disc(&self, d: &Disc) -> bool {
        let (x, y) = d.center;
        x - d.radius >= self.min.0
            && x + d.radius <= self.max.0
            && y - d.radius >= self.min.1
            && y + d.radius <= self.max.1
    }

    /// Parameter interval `[t0, t1]` where `p + t u` lies inside.
    fn clip_line(&self, p: (f64, f64), u: (f64, f64)) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for (p, u, lo, hi) in [(p.0, u.0, self.min.0, self.max.0), (p.1, u.1, self.min.1, self.max.1)] {
            if u.abs() < 1e-12 {
                if p < lo || p > hi {
                    return None;
                }
                continue;
            }
            let (a, b) = ((lo - p) / u, (hi - p) / u);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub center: (f64, f64),
    pub radius: f64,
}

impl Disc {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub table: Rect,
    pub objects: Vec<Disc>,
    pub grid: GridSpec,
    /// Direction, in radians, from which the robot approaches objects.
    pub approach_heading: f64,
    pub rng_seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let t = &self.table;
        if !(t.min.0 < t.max.0 && t.min.1 < t.max.1) {
            return Err(Error::invalid("table rectangle is empty"));
        }
        let g = &self.grid;
        let extent = Rect {
            min: g.origin,
            max: (
                g.origin.0 + g.width as f64 * g.resolution,
                g.origin.1 + g.height as f64 * g.resolution,
            ),
        };
        if !(extent.contains(t.min.0, t.min.1) && extent.contains(t.max.0, t.max.1)) {
            return Err(Error::invalid("grid does not cover the table"));
        }
        for (i, d) in self.objects.iter().enumerate() {
            if !(d.radius > 0.0) {
                return Err(Error::invalid(format!("object {i} has a nonpositive radius")));
            }
            if !t.contains_disc(d) {
                return Err(Error::invalid(format!("object {i} is not fully on the table")));
            }
        }
        if !self.approach_heading.is_finite() {
            return Err(Error::invalid("approach heading must be finite"));
        }
        Ok(())
    }

    fn approach_dir(&self) -> (f64, f64) {
        (self.approach_heading.cos(), self.approach_heading.sin())
    }
}

/// Per-cell class ids (`CLASS_NAMES` order), row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthGrid {
    pub spec: GridSpec,
    pub labels: Vec<u8>,
}

impl GroundTruthGrid {
    pub fn label_at(&self, idx: GridIndex) -> u8 {
        self.labels[self.spec.offset(idx)]
    }

    pub fn count(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }
}

/// Crisp labels at cell centers: object discs over table over ground.
pub fn generate_scene(spec: &SceneSpec) -> Result<GroundTruthGrid> {
    spec.validate()?;
    let g = &spec.grid;
    let labels = (0..g.num_cells())
        .map(|off| {
            let (x, y) = g.cell_center(g.at_offset(off));
            if spec.objects.iter().any(|d| d.contains(x, y)) {
                OBJECT
            } else if spec.table.contains(x, y) {
                TABLE
            } else {
                GROUND
            }
        })
        .collect();
    Ok(GroundTruthGrid {
        spec: g.clone(),
        labels,
    })
}

/// Position of a cell on the approach profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProfileZone {
    Ground,
    Profile(f64),
}

/// Profile position of every cell: `PROFILE_FRONT_X` plus the distance past
/// the front edge of the nearest object ahead, measured along the approach
/// heading within the object's width. Cells inside a disc use that disc;
/// cells not lined up with any object sit on the open-table plateau at 0.
pub fn profile_zones(scene: &SceneSpec, truth: &GroundTruthGrid) -> Vec<ProfileZone> {
    let g = &truth.spec;
    let u = scene.approach_dir();
    // distance past the front edge of `d`, if the cell is lined up with it
    let past_front = |d: &Disc, x: f64, y: f64| {
        let (dx, dy) = (x - d.center.0, y - d.center.1);
        let across = (dx * u.1 - dy * u.0).abs();
        (across < d.radius).then(|| dx * u.0 + dy * u.1 + (d.radius * d.radius - across * across).sqrt())
    };
    (0..g.num_cells())
        .map(|off| {
            let (x, y) = g.cell_center(g.at_offset(off));
            let s = match truth.labels[off] {
                GROUND => return ProfileZone::Ground,
                OBJECT => scene
                    .objects
                    .iter()
                    .find(|d| d.contains(x, y))
                    .and_then(|d| past_front(d, x, y))
                    .map(|s| s.max(0.0)),
                _ => {
                    let mut behind = f64::INFINITY;
                    let mut ahead = f64::NEG_INFINITY;
                    for s in scene.objects.iter().filter_map(|d| past_front(d, x, y)) {
                        if s >= 0.0 {
                            behind = behind.min(s);
                        } else {
                            ahead = ahead.max(s);
                        }
                    }
                    if behind.is_finite() {
                        Some(behind)
                    } else if ahead.is_finite() {
                        Some(ahead)
                    } else {
                        None
                    }
                }
            };
            ProfileZone::Profile(s.map_or(0.0, |s| (PROFILE_FRONT_X + s).max(0.0)))
        })
        .collect()
}

/// Mean response of one classifier layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierCurve {
    pub layer_name: String,
    /// Mean probability on ground cells.
    pub ground: f64,
    /// `(profile x, mean probability)`, x ascending; linear in between and
    /// held constant beyond the ends.
    pub knots: Vec<(f64, f64)>,
    /// Standard deviation of the logit noise on each observation.
    pub noise_sigma: f64,

    /// Chance that one observation reports a given cell in range.
    #[serde(default = "one")]
    pub hit_rate: f64,
}

fn one() -> f64 {
    1.0
}

impl ClassifierCurve {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |p: f64| p > 0.0 && p < 1.0;
        if self.knots.is_empty() {
            return Err(Error::invalid(format!("curve {} has no knots", self.layer_name)));
        }
        if self.knots.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::invalid(format!(
                "curve {} knots are not strictly ascending",
                self.layer_name
            )));
        }
        if !in_unit(self.ground) || self.knots.iter().any(|k| !in_unit(k.1)) {
            return Err(Error::invalid(format!(
                "curve {} has a mean outside (0, 1)",
                self.layer_name
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be a nonnegative number"));
        }
        if !(self.hit_rate > 0.0 && self.hit_rate <= 1.0) {
            return Err(Error::invalid("hit_rate must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn mean_at(&self, zone: ProfileZone) -> f64 {
        match zone {
            ProfileZone::Ground => self.ground,
            ProfileZone::Profile(x) => interpolate(&self.knots, x),
        }
    }
}

fn interpolate(knots: &[(f64, f64)], x: f64) -> f64 {
    let i = knots.partition_point(|k| k.0 <= x);
    if i == 0 {
        return knots[0].1;
    }
    if i == knots.len() {
        return knots[i - 1].1;
    }
    let (x0, p0) = knots[i - 1];
    let (x1, p1) = knots[i];
    p0 + (p1 - p0) * (x - x0) / (x1 - x0)
}

/// The three layer templates with a common noise level and every cell in
/// range reported.
pub fn default_curves(noise_sigma: f64) -> Vec<ClassifierCurve> {
    layer_curves(noise_sigma, 1.0, GROUND_P)
}

/// The three layer templates with a common noise level and hit rate.
pub fn layer_curves(noise_sigma: f64, hit_rate: f64, ground: [f64; 3]) -> Vec<ClassifierCurve> {
    [ANOMALY_P, CORNER_P, OBSTACLE_P]
        .iter()
        .zip(LAYER_NAMES)
        .zip(ground)
        .map(|((ps, name), ground)| ClassifierCurve {
            layer_name: name.to_string(),

            ground,
            knots: PROFILE_X.iter().copied().zip(ps.iter().copied()).collect(),
            noise_sigma,
            hit_rate,
        })
        .collect()
}

/// Profile position used as the object's manual mean: the obstacle peak.
const MANUAL_OBJECT_X: f64 = 0.13;

/// Hand-set logit-space class means: the ground response, the open table
/// and an object's front. Rows follow `CLASS_NAMES`, columns
/// `LAYER_NAMES`.
pub fn manual_class_means(curves: &[ClassifierCurve]) -> Result<Vec<Vec<f64>>> {
    let layers = curves_by_layer(curves)?;
    Ok([ProfileZone::Ground, ProfileZone::Profile(0.0), ProfileZone::Profile(MANUAL_OBJECT_X)]
        .iter()
        .map(|&z| {
            layers
                .iter()
                .map(|c| logit(Probability::new(c.mean_at(z))).get())
                .collect()
        })
        .collect())
}

fn curves_by_layer(curves: &[ClassifierCurve]) -> Result<Vec<&ClassifierCurve>> {
    for c in curves {
        c.validate()?;
        if !LAYER_NAMES.contains(&c.layer_name.as_str()) {
            return Err(Error::invalid(format!("no layer named {:?}", c.layer_name)));
        }
    }
    LAYER_NAMES
        .iter()
        .map(|name| {
            let mut matching = curves.iter().filter(|c| c.layer_name == *name);
            match (matching.next(), matching.next()) {
                (Some(c), None) => Ok(c),
                (None, _) => Err(Error::invalid(format!("missing classifier curve for layer {name:?}"))),
                _ => Err(Error::invalid(format!("more than one curve for layer {name:?}"))),
            }
        })
        .collect()
}

/// Cells whose centers lie within `range` of the pose, row-major.
fn cells_in_range(spec: &GridSpec, pose: &Pose, range: f64) -> Vec<GridIndex> {
    let r = range / spec.resolution;
    let cx = (pose.x - spec.origin.0) / spec.resolution - 0.5;
    let cy = (pose.y - spec.origin.1) / spec.resolution - 0.5;
    let x0 = (cx - r).floor().max(0.0) as usize;
    let y0 = (cy - r).floor().max(0.0) as usize;
    let x1 = ((cx + r).ceil().max(-1.0) as i64).min(spec.width as i64 - 1);
    let y1 = ((cy + r).ceil().max(-1.0) as i64).min(spec.height as i64 - 1);
    let mut out = Vec::new();
    for y in y0 as i64..=y1 {
        for x in x0 as i64..=x1 {
            let idx = GridIndex::new(x as usize, y as usize);
            let (wx, wy) = spec.cell_center(idx);
            if (wx - pose.x).powi(2) + (wy - pose.y).powi(2) <= range * range {
                out.push(idx);
            }
        }
    }
    out
}

/// One observation per pose and layer (layers in `LAYER_NAMES` order) over
/// the cells within `sensor_range` of the pose.
pub fn simulate_classifiers(
    scene: &SceneSpec,
    truth: &GroundTruthGrid,
    curves: &[ClassifierCurve],
    poses: &[Pose],
    sensor_range: f64,
    rng_seed: u64,
) -> Result<Vec<LayerObservation>> {
    let layers = curves_by_layer(curves)?;
    if !(sensor_range > 0.0) {
        return Err(Error::invalid("sensor_range must be positive"));
    }
    if truth.spec != scene.grid || truth.labels.len() != scene.grid.num_cells() {
        return Err(Error::invalid("ground truth does not match the scene grid"));
    }
    if poses.is_empty() {
        return Ok(Vec::new());
    }
    let spec = &truth.spec;
    let zones = profile_zones(scene, truth);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let target: Vec<Vec<f64>> = layers
        .iter()
        .map(|curve| {
            zones
                .iter()
                .map(|&z| logit(Probability::new(curve.mean_at(z))).get())
                .collect()
        })
        .collect();

    let visible: Vec<Vec<GridIndex>> = poses.iter().map(|p| cells_in_range(spec, p, sensor_range)).collect();
    // hits[pose][layer][k]: whether the observation reports visible cell k
    let hits: Vec<Vec<Vec<bool>>> = visible
        .iter()
        .map(|cells| {
            layers
                .iter()
                .map(|c| cells.iter().map(|_| c.hit_rate >= 1.0 || rng.random::<f64>() < c.hit_rate).collect())
                .collect()
        })
        .collect();
    let mut coverage = vec![vec![0u32; spec.num_cells()]; layers.len()];
    for (cells, pose_hits) in visible.iter().zip(&hits) {
        for (l, layer_hits) in pose_hits.iter().enumerate() {
            for (idx, _) in cells.iter().zip(layer_hits).filter(|(_, &h)| h) {
                coverage[l][spec.offset(*idx)] += 1;
            }
        }
    }

    let mut out = Vec::with_capacity(poses.len() * layers.len());
    for (cells, pose_hits) in visible.iter().zip(&hits) {
        for (l, curve) in layers.iter().enumerate() {
            let obs = cells
                .iter()
                .zip(&pose_hits[l])
                .filter(|(_, &h)| h)
                .map(|(&idx, _)| {
                    let off = spec.offset(idx);
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    (idx, LogOdds(target[l][off] / coverage[l][off] as f64 + curve.noise_sigma * noise))
                })
                .collect();
            out.push(LayerObservation {
                layer: curve.layer_name.clone(),
                cells: obs,
            });
        }
    }
    Ok(out)
}

/// Sensor sweep and evaluation geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraversalPlan {
    pub sensor_range: f64,
    /// Spacing of sweep lanes and of poses along a lane, meters.
    pub sweep_spacing: f64,
    /// How far evaluation trajectories extend beyond the table edge, meters.
    pub ground_margin: f64,
}

impl Default for TraversalPlan {
    fn default() -> Self {
        TraversalPlan {
            sensor_range: 0.3,
            sweep_spacing: 0.1,
            ground_margin: 0.08,
        }
    }
}

impl TraversalPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.sensor_range > 0.0 && self.sweep_spacing > 0.0 && self.ground_margin >= 0.0) {
            return Err(Error::invalid(
                "sensor_range and sweep_spacing must be positive, ground_margin nonnegative",
            ));
        }
        Ok(())
    }
}

/// Lawnmower sweep over the table, lanes parallel to the approach heading.
pub fn sweep_poses(scene: &SceneSpec, spacing: f64) -> Vec<Pose> {
    let u = scene.approach_dir();
    let v = (-u.1, u.0);
    let t = &scene.table;
    let corners = [t.min, (t.max.0, t.min.1), t.max, (t.min.0, t.max.1)];
    let proj = |a: (f64, f64), b: (f64, f64)| a.0 * b.0 + a.1 * b.1;
    let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for c in corners {
        u0 = u0.min(proj(c, u));
        u1 = u1.max(proj(c, u));
        v0 = v0.min(proj(c, v));
        v1 = v1.max(proj(c, v));
    }
    let mut poses = Vec::new();
    let mut b = v0 + spacing / 2.0;
    while b <= v1 {
        let mut a = u0 + spacing / 2.0;
        while a <= u1 {
            let (x, y) = (a * u.0 + b * v.0, a * u.1 + b * v.1);
            if t.contains(x, y) {
                poses.push(Pose::new(x, y, scene.approach_heading));
            }
            a += spacing;
        }
        b += spacing;
    }
    poses
}

/// One straight trajectory per object, through its center along the
/// approach heading, from ground in front of the table to ground behind it.
/// A scene without objects gets one trajectory through the table center.
pub fn evaluation_trajectories(scene: &SceneSpec, ground_margin: f64) -> Vec<Trajectory> {
    let u = scene.approach_dir();
    let g = &scene.grid;
    let res = g.resolution;
    // stay half a cell inside the grid
    let inner = Rect {
        min: (g.origin.0 + res / 2.0, g.origin.1 + res / 2.0),
        max: (
            g.origin.0 + (g.width as f64 - 0.5) * res,
            g.origin.1 + (g.height as f64 - 0.5) * res,
        ),
    };
    let t = &scene.table;
    let centers: Vec<(f64, f64)> = if scene.objects.is_empty() {
        vec![((t.min.0 + t.max.0) / 2.0, (t.min.1 + t.max.1) / 2.0)]
    } else {
        scene.objects.iter().map(|d| d.center).collect()
    };
    centers
        .into_iter()
        .filter_map(|c| {
            let (a, b) = t.clip_line(c, u)?;
            let (lo, hi) = inner.clip_line(c, u)?;
            let start = (a - ground_margin).max(lo);
            let end = (b + ground_margin).min(hi);
            let at = |s: f64| Pose::new(c.0 + s * u.0, c.1 + s * u.1, scene.approach_heading);
            Some(Trajectory {
                waypoints: vec![at(start), at(end)],
                step: res,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneData {
    pub scene: SceneSpec,
    pub grid: SemanticGrid,
    pub truth: GroundTruthGrid,
    pub trajectories: Vec<Trajectory>,
}

/// Ground truth, fused map and evaluation trajectories of one scene.
pub fn build_scene(scene: &SceneSpec, curves: &[ClassifierCurve], plan: &TraversalPlan) -> Result<SceneData> {
    plan.validate()?;
    let truth = generate_scene(scene)?;
    let poses = sweep_poses(scene, plan.sweep_spacing);
    let observations = simulate_classifiers(scene, &truth, curves, &poses, plan.sensor_range, scene.rng_seed)?;
    let mut grid = SemanticGrid::new(scene.grid.clone(), &LAYER_NAMES)?;
    for obs in &observations {
        grid.apply_observation(obs)?;
    }
    Ok(SceneData {
        scene: scene.clone(),
        grid,
        truth,
        trajectories: evaluation_trajectories(scene, plan.ground_margin),
    })
}

/// Scenes are built in parallel; results keep the order of `specs`.
pub fn build_dataset(specs: &[SceneSpec], curves: &[ClassifierCurve], plan: &TraversalPlan) -> Result<Vec<SceneData>> {
    if specs.is_empty() {
        return Err(Error::invalid("no scenes to build"));
    }
    specs.par_iter().map(|s| build_scene(s, curves, plan)).collect()
}

/// Parameters of the random scene generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub num_scenes: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    /// Chance that one observation reports a given cell in range.
    pub hit_rate: f64,
    /// Mean probability per layer on ground cells.
    pub ground_response: [f64; 3],
    /// Meters per cell.
    pub resolution: f64,
    pub table_size_min: (f64, f64),
    pub table_size_max: (f64, f64),
    pub objects_min: usize,
    pub objects_max: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Minimum gap between objects and between an object and the table edge.
    pub clearance: f64,
    /// Ground border around the table, meters.
    pub grid_margin: f64,
    pub plan: TraversalPlan,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            num_scenes: 20,
            seed: 0,
            noise_sigma: 0.5,
            hit_rate: 1.0,
            ground_response: GROUND_P,
            resolution: 0.005,
            table_size_min: (0.6, 0.45),
            table_size_max: (0.9, 0.65),
            objects_min: 1,
            objects_max: 3,
            radius_min: 0.045,
            radius_max: 0.08,
            clearance: 0.03,
            grid_margin: 0.12,
            plan: TraversalPlan::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        let ok = self.num_scenes >= 1
            && self.resolution > 0.0
            && self.table_size_min.0 > 0.0
            && self.table_size_min.1 > 0.0
            && self.table_size_min.0 <= self.table_size_max.0
            && self.table_size_min.1 <= self.table_size_max.1
            && self.objects_min <= self.objects_max
            && self.radius_min > 0.0
            && self.radius_min <= self.radius_max
            && self.clearance >= 0.0
            && self.grid_margin >= 0.0
            && self.noise_sigma >= 0.0
            && self.hit_rate > 0.0
            && self.hit_rate <= 1.0;
        if !ok {
            return Err(Error::invalid("inconsistent scenario parameters"));
        }
        if self.plan.ground_margin > self.grid_margin {
            return Err(Error::invalid("ground_margin must not exceed grid_margin"));
        }
        if 2.0 * (self.radius_max + self.clearance) > self.table_size_min.0.min(self.table_size_min.1) {
            return Err(Error::invalid("objects do not fit on the smallest table"));
        }
        Ok(())
    }

    pub fn curves(&self) -> Vec<ClassifierCurve> {
        layer_curves(self.noise_sigma, self.hit_rate, self.ground_response)
    }
}

const PLACEMENT_ATTEMPTS: usize = 1000;

/// Scene `index` of the generator, seeded with `seed + index`.
pub fn random_scene(config: &ScenarioConfig, index: usize) -> Result<SceneSpec> {
    config.validate()?;
    let seed = config.seed.wrapping_add(index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let w = uniform(&mut rng, config.table_size_min.0, config.table_size_max.0);
    let h = uniform(&mut rng, config.table_size_min.1, config.table_size_max.1);
    let m = config.grid_margin;
    let table = Rect {
        min: (m, m),
        max: (m + w, m + h),
    };
    let res = config.resolution;
    let grid = GridSpec::new(
        ((w + 2.0 * m) / res).ceil() as usize,
        ((h + 2.0 * m) / res).ceil() as usize,
        res,
        (0.0, 0.0),
    )?;
    let count = rng.random_range(config.objects_min..=config.objects_max);
    let mut objects: Vec<Disc> = Vec::with_capacity(count);
    let mut attempts = 0;
    while objects.len() < count {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPTS {
            return Err(Error::invalid(format!(
                "could not place {count} objects on a {w:.3} x {h:.3} m table"
            )));
        }
        let r = uniform(&mut rng, config.radius_min, config.radius_max);
        let pad = r + config.clearance;
        let cx = uniform(&mut rng, table.min.0 + pad, table.max.0 - pad);
        let cy = uniform(&mut rng, table.min.1 + pad, table.max.1 - pad);
        let clear = objects.iter().all(|o| {
            let d = ((o.center.0 - cx).powi(2) + (o.center.1 - cy).powi(2)).sqrt();
            d >= o.radius + r + config.clearance
        });
        if clear {
            objects.push(Disc { center: (cx, cy), radius: r });
        }
    }
    let heading = rng.random_range(-PI..PI);
    let spec = SceneSpec {
        table,
        objects,
        grid,
        approach_heading: heading,
        rng_seed: seed,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn random_scenes(config: &ScenarioConfig) -> Result<Vec<SceneSpec>> {
    (0..config.num_scenes).map(|i| random_scene(config, i)).collect()
}

/// Writes `<name>.json` plus layer blobs (the grid), `<name>.labels.u8`,
/// `<name>.classes.json`, `<name>.scene.json` and `<name>.trajectories.json`.
pub fn write_scene(dir: &Path, name: &str, data: &SceneData) -> Result<()> {
    io::write_grid(dir, name, &data.grid)?;
    io::write_u8_blob(&dir.join(format!("{name}.labels.u8")), &data.truth.labels)?;
    io::write_json(&dir.join(format!("{name}.classes.json")), &CLASS_NAMES)?;
    io::write_json(&dir.join(format!("{name}.scene.json")), &data.scene)?;
    io::write_json(&dir.join(format!("{name}.trajectories.json")), &data.trajectories)
}

pub fn read_scene(dir: &Path, name: &str) -> Result<SceneData> {
    let grid = io::read_grid(dir, name)?;
    let scene: SceneSpec = io::read_json(&dir.join(format!("{name}.scene.json")))?;
    let classes: Vec<String> = io::read_json(&dir.join(format!("{name}.classes.json")))?;
    if classes != CLASS_NAMES {
        return Err(Error::invalid(format!("unexpected class table {classes:?}")));
    }
    let labels = io::read_u8_blob(&dir.join(format!("{name}.labels.u8")))?;
    if labels.len() != grid.spec().num_cells() {
        return Err(Error::DimensionError {
            expected: grid.spec().num_cells(),
            found: labels.len(),
        });
    }
    let trajectories = io::read_json(&dir.join(format!("{name}.trajectories.json")))?;
    Ok(SceneData {
        truth: GroundTruthGrid {
            spec: grid.spec().clone(),
            labels,
        },
        scene,
        grid,
        trajectories,
    })
}
