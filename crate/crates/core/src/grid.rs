//! Semantical occupancy grids.
//!
//! A [`SemanticGrid`] holds `N` named probability layers over one shared
//! [`GridSpec`]. Cells are stored as natural-log odds so that Bayesian fusion
//! of independent observations is plain addition. Unobserved cells hold
//! log-odds `0`, i.e. probability exactly `0.5`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Saturation bound for stored probabilities.
pub const EPS: f64 = 1e-6;

/// Largest representable log-odds magnitude, `logit(1 - EPS)`.
pub fn max_log_odds() -> f64 {
    ((1.0 - EPS) / EPS).ln()
}

/// A probability clamped to `[EPS, 1 - EPS]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Probability(f64);

impl Probability {
    pub const UNKNOWN: Probability = Probability(0.5);

    /// Clamps `p` into `[EPS, 1 - EPS]`. NaN maps to `0.5`.
    pub fn new(p: f64) -> Self {
        if p.is_nan() {
            return Self::UNKNOWN;
        }
        Probability(p.clamp(EPS, 1.0 - EPS))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Natural-log odds `ln(p / (1 - p))`.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogOdds(pub f64);

impl LogOdds {
    pub fn get(self) -> f64 {
        self.0
    }

    /// Clamps to the log-odds range matching `[EPS, 1 - EPS]`.
    pub fn saturate(self) -> Self {
        let m = max_log_odds();
        LogOdds(self.0.clamp(-m, m))
    }
}

pub fn logit(p: Probability) -> LogOdds {
    let p = p.get();
    LogOdds((p / (1.0 - p)).ln())
}

pub fn inverse_logit(l: LogOdds) -> Probability {
    let l = l.get();
    // Evaluate on the side that keeps exp() bounded.
    let p = if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    };
    Probability::new(p)
}

/// Log-odds fusion of a prior with one inverse-sensor-model term.
pub fn update_cell(prior: LogOdds, observation: LogOdds) -> LogOdds {
    LogOdds(prior.0 + observation.0).saturate()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Meters per cell.
    pub resolution: f64,
    /// World position of the lower-left corner of cell (0, 0), in meters.
    pub origin: (f64, f64),
}

impl GridSpec {
    pub fn new(width: usize, height: usize, resolution: f64, origin: (f64, f64)) -> Result<Self> {
        let spec = GridSpec {
            width,
            height,
            resolution,
            origin,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid(format!(
                "grid must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::invalid(format!(
                "grid resolution must be positive, got {}",
                self.resolution
            )));
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn index(&self, x: i64, y: i64) -> Result<GridIndex> {
        if self.contains(x, y) {
            Ok(GridIndex::new(x as usize, y as usize))
        } else {
            Err(self.out_of_bounds(x, y))
        }
    }

    pub fn check(&self, idx: GridIndex) -> Result<()> {
        self.index(idx.x as i64, idx.y as i64).map(|_| ())
    }

    pub(crate) fn out_of_bounds(&self, x: i64, y: i64) -> Error {
        Error::IndexOutOfBounds {
            x,
            y,
            width: self.width,
            height: self.height,
        }
    }

    /// Row-major offset. The index must be in bounds.
    #[inline]
    pub fn offset(&self, idx: GridIndex) -> usize {
        idx.y * self.width + idx.x
    }

    #[inline]
    pub fn at_offset(&self, offset: usize) -> GridIndex {
        GridIndex::new(offset % self.width, offset / self.width)
    }

    /// Cell containing the world point, or an error if it falls outside.
    pub fn world_to_cell(&self, x: f64, y: f64) -> Result<GridIndex> {
        let cx = ((x - self.origin.0) / self.resolution).floor();
        let cy = ((y - self.origin.1) / self.resolution).floor();
        if !cx.is_finite() || !cy.is_finite() {
            return Err(Error::invalid("non-finite world coordinate"));
        }
        self.index(cx as i64, cy as i64)
    }

    /// World coordinates of the cell center.
    pub fn cell_center(&self, idx: GridIndex) -> (f64, f64) {
        (
            self.origin.0 + (idx.x as f64 + 0.5) * self.resolution,
            self.origin.1 + (idx.y as f64 + 0.5) * self.resolution,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridIndex {
    pub x: usize,
    pub y: usize,
}

impl GridIndex {
    pub const fn new(x: usize, y: usize) -> Self {
        GridIndex { x, y }
    }
}

impl fmt::Display for GridIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Observer pose. The heading is kept in `(-pi, pi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }
}

pub fn normalize_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Inverse sensor model output of one frame for one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerObservation {
    pub layer: String,
    pub cells: Vec<(GridIndex, LogOdds)>,
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    name: String,
    log_odds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticGrid {
    spec: GridSpec,
    layers: Vec<Layer>,
}

impl SemanticGrid {
    /// A grid with every cell of every layer unobserved (`p = 0.5`).
    pub fn new<S: AsRef<str>>(spec: GridSpec, layer_names: &[S]) -> Result<Self> {
        spec.validate()?;
        if layer_names.is_empty() {
            return Err(Error::invalid("a semantic grid needs at least one layer"));
        }
        let mut layers: Vec<Layer> = Vec::with_capacity(layer_names.len());
        for name in layer_names {
            let name = name.as_ref();
            if layers.iter().any(|l| l.name == name) {
                return Err(Error::invalid(format!("duplicate layer name `{name}`")));
            }
            layers.push(Layer {
                name: name.to_string(),
                log_odds: vec![0.0; spec.num_cells()],
            });
        }
        Ok(SemanticGrid { spec, layers })
    }

    /// Builds a grid from dense row-major probability layers.
    pub fn from_probabilities(spec: GridSpec, layers: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let names: Vec<&str> = layers.iter().map(|(n, _)| n.as_str()).collect();
        let mut grid = SemanticGrid::new(spec, &names)?;
        for (i, (_, probs)) in layers.iter().enumerate() {
            if probs.len() != grid.spec.num_cells() {
                return Err(Error::DimensionError {
                    expected: grid.spec.num_cells(),
                    found: probs.len(),
                });
            }
            for (dst, &p) in grid.layers[i].log_odds.iter_mut().zip(probs) {
                *dst = logit(Probability::new(p)).get();
            }
        }
        Ok(grid)
    }

    /// Builds a grid from dense row-major log-odds layers (saturated on entry).
    pub fn from_log_odds(spec: GridSpec, layers: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let names: Vec<&str> = layers.iter().map(|(n, _)| n.as_str()).collect();
        let mut grid = SemanticGrid::new(spec, &names)?;
        for (i, (_, values)) in layers.iter().enumerate() {
            if values.len() != grid.spec.num_cells() {
                return Err(Error::DimensionError {
                    expected: grid.spec.num_cells(),
                    found: values.len(),
                });
            }
            for (dst, &l) in grid.layers[i].log_odds.iter_mut().zip(values) {
                if !l.is_finite() {
                    return Err(Error::invalid("log-odds must be finite"));
                }
                *dst = LogOdds(l).saturate().get();
            }
        }
        Ok(grid)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.layers.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    /// Row-major log-odds of one layer.
    pub fn layer_log_odds(&self, layer: usize) -> &[f64] {
        &self.layers[layer].log_odds
    }

    /// Row-major probabilities of one layer.
    pub fn layer_probabilities(&self, layer: usize) -> Vec<f64> {
        self.layers[layer]
            .log_odds
            .iter()
            .map(|&l| inverse_logit(LogOdds(l)).get())
            .collect()
    }

    pub fn log_odds(&self, layer: usize, idx: GridIndex) -> Result<LogOdds> {
        self.spec.check(idx)?;
        Ok(LogOdds(self.layers[layer].log_odds[self.spec.offset(idx)]))
    }

    pub fn probability(&self, layer: usize, idx: GridIndex) -> Result<Probability> {
        self.log_odds(layer, idx).map(inverse_logit)
    }

    /// `P(m) = (P_1(m), ..., P_N(m))` in layer order.
    pub fn probability_vector(&self, idx: GridIndex) -> Result<Vec<Probability>> {
        self.spec.check(idx)?;
        let off = self.spec.offset(idx);
        Ok(self
            .layers
            .iter()
            .map(|l| inverse_logit(LogOdds(l.log_odds[off])))
            .collect())
    }

    /// Per-layer log-odds of one cell, in layer order.
    pub fn logit_vector(&self, idx: GridIndex) -> Result<Vec<f64>> {
        self.spec.check(idx)?;
        let off = self.spec.offset(idx);
        Ok(self.layers.iter().map(|l| l.log_odds[off]).collect())
    }

    /// Fuses one observation in place.
    ///
    /// The observation is validated before any cell is touched, so an error
    /// leaves the grid unchanged.
    pub fn apply_observation(&mut self, obs: &LayerObservation) -> Result<()> {
        let layer = self.layer_index(&obs.layer)?;
        for (idx, _) in &obs.cells {
            self.spec.check(*idx)?;
        }
        let spec = &self.spec;
        let data = &mut self.layers[layer].log_odds;
        for (idx, l) in &obs.cells {
            let off = spec.offset(*idx);
            data[off] = update_cell(LogOdds(data[off]), *l).get();
        }
        Ok(())
    }

    /// Pure variant of [`apply_observation`](Self::apply_observation).
    pub fn integrate_observation(&self, obs: &LayerObservation) -> Result<SemanticGrid> {
        let mut next = self.clone();
        next.apply_observation(obs)?;
        Ok(next)
    }
}

pub fn integrate_observation(grid: &SemanticGrid, obs: &LayerObservation) -> Result<SemanticGrid> {
    grid.integrate_observation(obs)
}

pub fn probability_vector(grid: &SemanticGrid, idx: GridIndex) -> Result<Vec<Probability>> {
    grid.probability_vector(idx)
}
