//! Left-right (Bakis) property models.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::gmm::GmmParams;
use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-9;

/// A single HMM `(A, Pi, emissions)` with a fixed transition topology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyModel {
    pub transition: Vec<Vec<f64>>,
    pub start: Vec<f64>,
    pub emissions: Vec<GmmParams>,
    pub topology_mask: Vec<Vec<bool>>,
    /// Distribution of the state a sequence ends in; `None` lets it end
    /// anywhere at no cost.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_probs: Option<Vec<f64>>,
}

/// `mask[i][j]` is set iff `0 <= j - i <= 1 + skip`.
pub fn bakis_mask(num_states: usize, skip: usize) -> Vec<Vec<bool>> {
    (0..num_states)
        .map(|i| (0..num_states).map(|j| j >= i && j - i <= 1 + skip).collect())
        .collect()
}

/// Bakis model with uniform transitions over allowed successors, all mass of
/// `Pi` on state 0, and standard-normal placeholder emissions of dimension `dim`.
pub fn make_bakis(num_states: usize, skip: usize, dim: usize) -> Result<PropertyModel> {
    if num_states == 0 {
        return Err(Error::invalid("a Bakis model needs at least one state"));
    }
    if dim == 0 {
        return Err(Error::invalid("emission dimension must be >= 1"));
    }
    let topology_mask = bakis_mask(num_states, skip);
    let transition = uniform_rows(&topology_mask);
    let mut start = vec![0.0; num_states];
    start[0] = 1.0;
    Ok(PropertyModel {
        transition,
        start,
        emissions: vec![GmmParams::single(vec![0.0; dim], 1.0); num_states],
        topology_mask,
        final_probs: None,
    })
}

pub(crate) fn uniform_rows(mask: &[Vec<bool>]) -> Vec<Vec<f64>> {
    mask.iter()
        .map(|row| {
            let n = row.iter().filter(|&&m| m).count().max(1) as f64;
            row.iter().map(|&m| if m { 1.0 / n } else { 0.0 }).collect()
        })
        .collect()
}

impl PropertyModel {
    pub fn new(
        transition: Vec<Vec<f64>>,
        start: Vec<f64>,
        emissions: Vec<GmmParams>,
        topology_mask: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let m = PropertyModel {
            transition,
            start,
            emissions,
            topology_mask,
            final_probs: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn num_states(&self) -> usize {
        self.start.len()
    }

    pub fn dim(&self) -> usize {
        self.emissions.first().map_or(0, GmmParams::dim)
    }

    pub fn with_emissions(mut self, emissions: Vec<GmmParams>) -> Result<Self> {
        self.emissions = emissions;
        self.validate()?;
        Ok(self)
    }

    /// All end mass on the last state, so every path traverses the whole
    /// left-right chain.
    pub fn ending_in_last_state(mut self) -> Self {
        let s = self.num_states();
        self.final_probs = Some((0..s).map(|i| if i + 1 == s { 1.0 } else { 0.0 }).collect());
        self
    }

    /// Uniform end distribution, to be re-estimated in training.
    pub fn ending_anywhere(mut self) -> Self {
        let s = self.num_states();
        self.final_probs = Some(vec![1.0 / s as f64; s]);
        self
    }

    pub fn with_final_probs(mut self, final_probs: Option<Vec<f64>>) -> Result<Self> {
        self.final_probs = final_probs;
        self.validate()?;
        Ok(self)
    }

    /// Fewest frames of any sequence with nonzero probability, or `None`
    /// when no accepting state is reachable.
    pub fn min_duration(&self) -> Option<usize> {
        let s = self.num_states();
        let accept = |i: usize| self.final_probs.as_ref().is_none_or(|f| f[i] > 0.0);
        let mut reached: Vec<bool> = self.start.iter().map(|&p| p > 0.0).collect();
        for len in 1..=s {
            if (0..s).any(|i| reached[i] && accept(i)) {
                return Some(len);
            }
            let mut next = reached.clone();
            for i in (0..s).filter(|&i| reached[i]) {
                for j in 0..s {
                    if self.transition[i][j] > 0.0 {
                        next[j] = true;
                    }
                }
            }
            reached = next;
        }
        None
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.num_states();
        if s == 0 {
            return Err(Error::invalid("a property model needs at least one state"));
        }
        if !square(s, &self.transition) || !square(s, &self.topology_mask) {
            return Err(Error::DimensionError {
                expected: s,
                found: self.transition.len(),
            });
        }
        if self.emissions.len() != s {
            return Err(Error::DimensionError {
                expected: s,
                found: self.emissions.len(),
            });
        }
        if let Some(f) = &self.final_probs {
            if f.len() != s {
                return Err(Error::DimensionError {
                    expected: s,
                    found: f.len(),
                });
            }
            check_distribution(f, "final distribution")?;
        }
        check_distribution(&self.start, "start distribution")?;
        for (i, (row, mask)) in self.transition.iter().zip(&self.topology_mask).enumerate() {
            check_distribution(row, &format!("transition row {i}"))?;
            if row.iter().zip(mask).any(|(&a, &m)| !m && a != 0.0) {
                return Err(Error::invalid(format!(
                    "transition row {i} puts mass on a masked entry"
                )));
            }
        }
        let n = self.dim();
        for e in &self.emissions {
            e.validate()?;
            if e.dim() != n {
                return Err(Error::DimensionError {
                    expected: n,
                    found: e.dim(),
                });
            }
        }
        Ok(())
    }

    /// Draw a state path and frames of length `len`.
    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> (Vec<usize>, Vec<Vec<f64>>) {
        let mut states = Vec::with_capacity(len);
        let mut frames = Vec::with_capacity(len);
        let mut state = categorical(&self.start, rng);
        for t in 0..len {
            if t > 0 {
                state = categorical(&self.transition[state], rng);
            }
            let g = &self.emissions[state];
            let k = categorical(&g.weights, rng);
            let frame = g.means[k]
                .iter()
                .zip(&g.variances[k])
                .map(|(m, v)| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + v.sqrt() * z
                })
                .collect();
            states.push(state);
            frames.push(frame);
        }
        (states, frames)
    }
}

fn square<T>(m: usize, rows: &[Vec<T>]) -> bool {
    rows.len() == m && rows.iter().all(|r| r.len() == m)
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::invalid(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::invalid(format!("{what} sums to {total}, expected 1")));
    }
    Ok(())
}

fn categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let mut u: f64 = rng.random();
    for (i, &w) in p.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // rounding: fall back to the last state with mass
    p.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}
