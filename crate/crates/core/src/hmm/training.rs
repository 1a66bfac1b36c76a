//! Baum-Welch re-estimation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gmm::{GmmParams, VAR_FLOOR};
use super::inference::{check_frames, log_emissions, posteriors_from, LogTransitions};
use super::model::PropertyModel;
use super::ObservationSequence;
use crate::error::{Error, Result};

/// States whose total posterior occupancy falls below this keep their
/// previous parameters.
const MIN_OCCUPANCY: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub max_iters: usize,
    /// Relative log-likelihood improvement below which training stops.
    pub tol: f64,
    pub var_floor: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            max_iters: 100,
            tol: 1e-4,
            var_floor: VAR_FLOOR,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("tol must be nonnegative"));
        }
        if !(self.var_floor >= VAR_FLOOR) {
            return Err(Error::invalid(format!("var_floor must be >= {VAR_FLOOR}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingOutcome {
    pub model: PropertyModel,
    /// Total log-likelihood of the training set before each M-step.
    pub trace: Vec<f64>,
    pub converged: bool,
}

/// Sufficient statistics of one E-step.
struct Stats {
    ll: f64,
    start: Vec<f64>,
    end: Vec<f64>,
    trans: Vec<Vec<f64>>,
    /// Per state, per component: occupancy, weighted sum, weighted squares.
    occ: Vec<Vec<f64>>,
    sum: Vec<Vec<Vec<f64>>>,
    sq: Vec<Vec<Vec<f64>>>,
}

impl Stats {
    fn zeros(model: &PropertyModel) -> Self {
        let s = model.num_states();
        let n = model.dim();
        let ks: Vec<usize> = model.emissions.iter().map(GmmParams::num_components).collect();
        Stats {
            ll: 0.0,
            start: vec![0.0; s],
            end: vec![0.0; s],
            trans: vec![vec![0.0; s]; s],
            occ: ks.iter().map(|&k| vec![0.0; k]).collect(),
            sum: ks.iter().map(|&k| vec![vec![0.0; n]; k]).collect(),
            sq: ks.iter().map(|&k| vec![vec![0.0; n]; k]).collect(),
        }
    }

    fn add(&mut self, other: &Stats) {
        self.ll += other.ll;
        add_into(&mut self.start, &other.start);
        add_into(&mut self.end, &other.end);
        for (a, b) in self.trans.iter_mut().zip(&other.trans) {
            add_into(a, b);
        }
        for (a, b) in self.occ.iter_mut().zip(&other.occ) {
            add_into(a, b);
        }
        for (x, y) in [(&mut self.sum, &other.sum), (&mut self.sq, &other.sq)] {
            for (a, b) in x.iter_mut().zip(y) {
                for (u, v) in a.iter_mut().zip(b) {
                    add_into(u, v);
                }
            }
        }
    }
}

fn add_into(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

fn e_step(model: &PropertyModel, lt: &LogTransitions, frames: &[Vec<f64>]) -> Result<Stats> {
    let log_b = log_emissions(model, frames);
    let post = posteriors_from(lt, &log_b)?;
    let mut st = Stats::zeros(model);
    st.ll = post.log_likelihood;
    st.start.clone_from(&post.gamma[0]);
    st.end.clone_from(post.gamma.last().unwrap());
    for xi in &post.xi {
        for (a, b) in st.trans.iter_mut().zip(xi) {
            add_into(a, b);
        }
    }
    let mut terms = Vec::new();
    for (t, frame) in frames.iter().enumerate() {
        for (i, e) in model.emissions.iter().enumerate() {
            let g = post.gamma[t][i];
            if g == 0.0 {
                continue;
            }
            let k = e.num_components();
            terms.resize(k, 0.0);
            if k == 1 {
                terms[0] = 1.0;
            } else {
                e.component_log_terms(frame, &mut terms);
                let total = log_b[t][i];
                terms.iter_mut().for_each(|v| *v = (*v - total).exp());
            }
            for (c, &r) in terms.iter().enumerate() {
                let w = g * r;
                st.occ[i][c] += w;
                for ((s, q), &x) in st.sum[i][c].iter_mut().zip(st.sq[i][c].iter_mut()).zip(frame) {
                    *s += w * x;
                    *q += w * x * x;
                }
            }
        }
    }
    Ok(st)
}

fn accumulate(model: &PropertyModel, sequences: &[ObservationSequence]) -> Result<Stats> {
    let lt = LogTransitions::new(model);
    let per_seq: Vec<Result<Stats>> = sequences
        .par_iter()
        .map(|s| e_step(model, &lt, &s.frames))
        .collect();
    // summed in sequence order so the result does not depend on scheduling
    let mut total = Stats::zeros(model);
    for st in per_seq {
        total.add(&st?);
    }
    Ok(total)
}

fn m_step(model: &PropertyModel, st: &Stats, var_floor: f64) -> PropertyModel {
    let mut next = model.clone();

    let start_total: f64 = st.start.iter().sum();
    if start_total > 0.0 {
        next.start = st.start.iter().map(|v| v / start_total).collect();
    }
    let end_total: f64 = st.end.iter().sum();
    if let Some(f) = next.final_probs.as_mut() {
        if end_total > 0.0 {
            *f = st.end.iter().map(|v| v / end_total).collect();
        }
    }

    for (i, row) in next.transition.iter_mut().enumerate() {
        let mask = &model.topology_mask[i];
        let total: f64 = st.trans[i].iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v).sum();
        if total > MIN_OCCUPANCY {
            for (j, a) in row.iter_mut().enumerate() {
                *a = if mask[j] { st.trans[i][j] / total } else { 0.0 };
            }
        }
    }

    for (i, e) in next.emissions.iter_mut().enumerate() {
        let occ_total: f64 = st.occ[i].iter().sum();
        if occ_total <= MIN_OCCUPANCY {
            continue;
        }
        for c in 0..e.num_components() {
            let r = st.occ[i][c];
            e.weights[c] = r / occ_total;
            if r <= MIN_OCCUPANCY {
                continue;
            }
            for d in 0..e.means[c].len() {
                let mean = st.sum[i][c][d] / r;
                let var = st.sq[i][c][d] / r - mean * mean;
                e.means[c][d] = mean;
                e.variances[c][d] = var.max(var_floor);
            }
        }
        let wsum: f64 = e.weights.iter().sum();
        e.weights.iter_mut().for_each(|w| *w /= wsum);
    }
    next
}

pub fn baum_welch(
    model: &PropertyModel,
    sequences: &[ObservationSequence],
    config: &TrainingConfig,
) -> Result<TrainingOutcome> {
    if sequences.is_empty() {
        return Err(Error::EmptySequence);
    }
    model.validate()?;
    config.validate()?;
    for s in sequences {
        check_frames(model, &s.frames)?;
    }

    let mut current = model.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iters {
        let st = accumulate(&current, sequences)?;
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if st.ll - prev < config.tol * prev.abs() {
                trace.push(st.ll);
                converged = true;
                break;
            }
        }
        trace.push(st.ll);
        current = m_step(&current, &st, config.var_floor);
    }
    log::debug!(
        "baum-welch: {} iterations, final log-likelihood {:?}",
        trace.len(),
        trace.last()
    );
    Ok(TrainingOutcome {
        model: current,
        trace,
        converged,
    })
}
