//! Hierarchical property model: a prior over path classes and one Bakis HMM
//! with diagonal GMM emissions per class, all in logit space.

mod gmm;
mod hierarchical;
mod inference;
mod init;
mod model;
mod serial;
mod training;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::RepresentationTag;

pub use gmm::{emission_logpdf, log_sum_exp, GmmParams, VAR_FLOOR};
pub use hierarchical::{
    train_hierarchical, DecodeConfig, EndStates, HierarchicalModel, HierarchicalTrainingConfig, InitStrategy, TrainingMode,
    TrainingReport,
};
pub use inference::{forward_backward, log_likelihood, viterbi, Posteriors, ViterbiPath};
pub use init::{init_emissions, EmissionInit, InitConfig};
pub use model::{bakis_mask, make_bakis, PropertyModel};
pub use serial::{model_from_json, model_to_json, read_model, write_model};
pub use training::{baum_welch, TrainingConfig, TrainingOutcome};

/// Logit-space frames sampled along a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSequence {
    pub frames: Vec<Vec<f64>>,
    #[serde(default)]
    pub source: RepresentationTag,
}

impl ObservationSequence {
    pub fn new(frames: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_source(frames, RepresentationTag::default())
    }

    pub fn with_source(frames: Vec<Vec<f64>>, source: RepresentationTag) -> Result<Self> {
        let s = ObservationSequence { frames, source };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.frames.is_empty() {
            return Err(Error::EmptySequence);
        }
        if n == 0 {
            return Err(Error::invalid("observation frames must have dimension >= 1"));
        }
        for f in &self.frames {
            if f.len() != n {
                return Err(Error::DimensionError {
                    expected: n,
                    found: f.len(),
                });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("observation frame has a non-finite value".into()));
            }
        }
        Ok(())
    }

    /// Frames `[start, end)` as a new sequence with the same source.
    pub fn slice(&self, start: usize, end: usize) -> ObservationSequence {
        ObservationSequence {
            frames: self.frames[start..end].to_vec(),
            source: self.source,
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::Rng;

    /// Random Bakis model with every allowed transition strictly positive.
    pub fn random_bakis<R: Rng>(s: usize, skip: usize, n: usize, rng: &mut R) -> PropertyModel {
        let mut m = make_bakis(s, skip, n).unwrap();
        for (row, mask) in m.transition.iter_mut().zip(&m.topology_mask) {
            let raw: Vec<f64> = mask.iter().map(|&a| if a { rng.random_range(0.1..1.0) } else { 0.0 }).collect();
            let total: f64 = raw.iter().sum();
            *row = raw.into_iter().map(|v| v / total).collect();
        }
        m.emissions = (0..s)
            .map(|_| GmmParams {
                weights: vec![1.0],
                means: vec![(0..n).map(|_| rng.random_range(-2.0..2.0)).collect()],
                variances: vec![(0..n).map(|_| rng.random_range(0.3..1.5)).collect()],
            })
            .collect();
        m.validate().unwrap();
        m
    }

    pub fn random_frames<R: Rng>(t: usize, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..t).map(|_| (0..n).map(|_| rng.random_range(-2.5..2.5)).collect()).collect()
    }

    /// Brute force over all `S^T` state paths: (log path-sum, max log-prob,
    /// reverse-lexicographically smallest maximizing path).
    pub fn enumerate_paths(m: &PropertyModel, frames: &[Vec<f64>]) -> (f64, f64, Vec<usize>) {
        let s = m.num_states();
        let t_len = frames.len();
        let lb: Vec<Vec<f64>> = frames
            .iter()
            .map(|f| m.emissions.iter().map(|e| emission_logpdf(e, f).unwrap()).collect())
            .collect();
        let ln = |x: f64| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY };
        let mut all = Vec::new();
        let mut best = f64::NEG_INFINITY;
        let mut best_path = vec![0; t_len];
        let mut path = vec![0usize; t_len];
        for code in 0..s.pow(t_len as u32) {
            let mut c = code;
            for p in path.iter_mut() {
                *p = c % s;
                c /= s;
            }
            let mut score = ln(m.start[path[0]]) + lb[0][path[0]];
            for t in 1..t_len {
                score = score + ln(m.transition[path[t - 1]][path[t]]) + lb[t][path[t]];
            }
            if let Some(f) = &m.final_probs {
                score += ln(f[path[t_len - 1]]);
            }
            if score == f64::NEG_INFINITY {
                continue;
            }
            all.push(score);
            let rev_less = path.iter().rev().lt(best_path.iter().rev());
            if score > best || (score == best && rev_less) {
                best = score;
                best_path.clone_from(&path);
            }
        }
        (log_sum_exp(&all), best, best_path)
    }

    #[test]
    fn sequence_validation() {
        assert!(ObservationSequence::new(vec![vec![0.0], vec![0.0, 1.0]]).is_err());
        assert!(ObservationSequence::new(vec![vec![f64::NAN]]).is_err());
        assert!(ObservationSequence::new(vec![vec![]]).is_err());
        let s = ObservationSequence::new(vec![vec![1.0, 2.0]; 4]).unwrap();
        assert_eq!(s.slice(1, 3).len(), 2);
    }
}
