//! Forward-backward and Viterbi in the log domain.
//!
//! Emission densities with floored variances can differ by hundreds of nats
//! between states, which underflows scaled-linear recursions whenever the
//! dominant state is unreachable. All recursions therefore run on log values.

use super::gmm::log_sum_exp;
use super::model::PropertyModel;
use super::ObservationSequence;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Posteriors {
    pub log_likelihood: f64,
    /// `T x S` state posteriors.
    pub gamma: Vec<Vec<f64>>,
    /// `(T-1) x S x S` pair posteriors.
    pub xi: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViterbiPath {
    pub states: Vec<usize>,
    pub log_prob: f64,
}

pub(crate) fn check_frames(model: &PropertyModel, frames: &[Vec<f64>]) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::EmptySequence);
    }
    let n = model.dim();
    for f in frames {
        if f.len() != n {
            return Err(Error::DimensionError {
                expected: n,
                found: f.len(),
            });
        }
        if f.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("observation frame has a non-finite value".into()));
        }
    }
    Ok(())
}

/// `T x S` table of `log b_i(o_t)`.
pub(crate) fn log_emissions(model: &PropertyModel, frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
    frames
        .iter()
        .map(|f| model.emissions.iter().map(|e| e.log_pdf_unchecked(f)).collect())
        .collect()
}

pub(crate) fn ln(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Log transition matrix and, per target state, the sources with nonzero mass.
pub(crate) struct LogTransitions {
    pub log_a: Vec<Vec<f64>>,
    pub preds: Vec<Vec<usize>>,
    pub succs: Vec<Vec<usize>>,
    pub log_start: Vec<f64>,
    /// Log final distribution, all 0 when the model has none.
    pub log_end: Vec<f64>,
}

impl LogTransitions {
    pub fn new(model: &PropertyModel) -> Self {
        let s = model.num_states();
        let log_a: Vec<Vec<f64>> = model
            .transition
            .iter()
            .map(|row| row.iter().map(|&a| ln(a)).collect())
            .collect();
        let preds = (0..s)
            .map(|j| (0..s).filter(|&i| model.transition[i][j] > 0.0).collect())
            .collect();
        let succs = (0..s)
            .map(|i| (0..s).filter(|&j| model.transition[i][j] > 0.0).collect())
            .collect();
        LogTransitions {
            log_a,
            preds,
            succs,
            log_start: model.start.iter().map(|&p| ln(p)).collect(),
            log_end: match &model.final_probs {
                Some(f) => f.iter().map(|&p| ln(p)).collect(),
                None => vec![0.0; s],
            },
        }
    }
}

fn forward_table(lt: &LogTransitions, log_b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let s = lt.log_start.len();
    let mut alpha = Vec::with_capacity(log_b.len());
    alpha.push((0..s).map(|i| lt.log_start[i] + log_b[0][i]).collect::<Vec<_>>());
    let mut terms = Vec::with_capacity(s);
    for b in &log_b[1..] {
        let prev = alpha.last().unwrap();
        let row = (0..s)
            .map(|j| {
                terms.clear();
                terms.extend(lt.preds[j].iter().map(|&i| prev[i] + lt.log_a[i][j]));
                log_sum_exp(&terms) + b[j]
            })
            .collect();
        alpha.push(row);
    }
    alpha
}

fn backward_table(lt: &LogTransitions, log_b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let s = lt.log_start.len();
    let t_len = log_b.len();
    let mut beta = vec![vec![0.0; s]; t_len];
    beta[t_len - 1].clone_from(&lt.log_end);
    let mut terms = Vec::with_capacity(s);
    for t in (0..t_len - 1).rev() {
        for i in 0..s {
            terms.clear();
            terms.extend(
                lt.succs[i]
                    .iter()
                    .map(|&j| lt.log_a[i][j] + log_b[t + 1][j] + beta[t + 1][j]),
            );
            beta[t][i] = log_sum_exp(&terms);
        }
    }
    beta
}

/// Sequence log-likelihood from the forward pass alone.
pub fn log_likelihood(model: &PropertyModel, obs: &ObservationSequence) -> Result<f64> {
    check_frames(model, &obs.frames)?;
    let lt = LogTransitions::new(model);
    let log_b = log_emissions(model, &obs.frames);
    let alpha = forward_table(&lt, &log_b);
    finite_ll(final_ll(&lt, alpha.last().unwrap()))
}

fn final_ll(lt: &LogTransitions, alpha_last: &[f64]) -> f64 {
    let ends: Vec<f64> = alpha_last.iter().zip(&lt.log_end).map(|(a, e)| a + e).collect();
    log_sum_exp(&ends)
}

fn finite_ll(ll: f64) -> Result<f64> {
    if ll.is_finite() {
        Ok(ll)
    } else {
        Err(Error::Numerical(format!(
            "sequence has log-likelihood {ll} under the model (no allowed state path)"
        )))
    }
}

pub fn forward_backward(model: &PropertyModel, obs: &ObservationSequence) -> Result<Posteriors> {
    check_frames(model, &obs.frames)?;
    let lt = LogTransitions::new(model);
    let log_b = log_emissions(model, &obs.frames);
    posteriors_from(&lt, &log_b)
}

pub(crate) fn posteriors_from(lt: &LogTransitions, log_b: &[Vec<f64>]) -> Result<Posteriors> {
    let s = lt.log_start.len();
    let t_len = log_b.len();
    let alpha = forward_table(lt, log_b);
    let ll = finite_ll(final_ll(lt, alpha.last().unwrap()))?;
    let beta = backward_table(lt, log_b);

    let gamma: Vec<Vec<f64>> = (0..t_len)
        .map(|t| {
            let mut row: Vec<f64> = (0..s).map(|i| (alpha[t][i] + beta[t][i] - ll).exp()).collect();
            normalize(&mut row);
            row
        })
        .collect();

    let xi = (0..t_len.saturating_sub(1))
        .map(|t| {
            let mut m = vec![vec![0.0; s]; s];
            for i in 0..s {
                for &j in &lt.succs[i] {
                    m[i][j] = (alpha[t][i] + lt.log_a[i][j] + log_b[t + 1][j] + beta[t + 1][j] - ll).exp();
                }
            }
            // tie each row to gamma so that sum_j xi_t(i, j) = gamma_t(i)
            for (i, row) in m.iter_mut().enumerate() {
                let total: f64 = row.iter().sum();
                if total > 0.0 {
                    let scale = gamma[t][i] / total;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
            }
            m
        })
        .collect();

    Ok(Posteriors {
        log_likelihood: ll,
        gamma,
        xi,
    })
}

fn normalize(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    if total > 0.0 {
        row.iter_mut().for_each(|v| *v /= total);
    }
}

pub fn viterbi(model: &PropertyModel, obs: &ObservationSequence) -> Result<ViterbiPath> {
    check_frames(model, &obs.frames)?;
    let lt = LogTransitions::new(model);
    let log_b = log_emissions(model, &obs.frames);
    viterbi_from(&lt, &log_b)
}

pub(crate) fn viterbi_from(lt: &LogTransitions, log_b: &[Vec<f64>]) -> Result<ViterbiPath> {
    let s = lt.log_start.len();
    let t_len = log_b.len();
    let mut delta: Vec<f64> = (0..s).map(|i| lt.log_start[i] + log_b[0][i]).collect();
    let mut back = vec![vec![0usize; s]; t_len];
    let mut next = vec![f64::NEG_INFINITY; s];
    for t in 1..t_len {
        for j in 0..s {
            let mut best = f64::NEG_INFINITY;
            let mut arg = lt.preds[j].first().copied().unwrap_or(0);
            // preds are ascending, so a strict comparison keeps the lower index
            for &i in &lt.preds[j] {
                let v = delta[i] + lt.log_a[i][j];
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            next[j] = best + log_b[t][j];
            back[t][j] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut last = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, (&d, &e)) in delta.iter().zip(&lt.log_end).enumerate() {
        let d = d + e;
        if d > best {
            best = d;
            last = i;
        }
    }
    let log_prob = finite_ll(best)?;
    let mut states = vec![last; t_len];
    for t in (1..t_len).rev() {
        states[t - 1] = back[t][states[t]];
    }
    Ok(ViterbiPath { states, log_prob })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::gmm::{emission_logpdf, GmmParams};
    use crate::hmm::model::make_bakis;
    use crate::hmm::tests::{enumerate_paths, random_bakis, random_frames};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(frames: Vec<Vec<f64>>) -> ObservationSequence {
        ObservationSequence::new(frames).unwrap()
    }

    #[test]
    fn single_state_sums_emissions() {
        let m = make_bakis(1, 0, 1)
            .unwrap()
            .with_emissions(vec![GmmParams::single(vec![0.5], 0.3)])
            .unwrap();
        let frames = vec![vec![0.1], vec![1.0], vec![-0.4]];
        let expected: f64 = frames.iter().map(|f| emission_logpdf(&m.emissions[0], f).unwrap()).sum();
        let fb = forward_backward(&m, &seq(frames)).unwrap();
        assert!((fb.log_likelihood - expected).abs() < 1e-12);
    }

    #[test]
    fn single_frame_mixes_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = random_bakis(3, 1, 2, &mut rng);
        m.start = vec![0.2, 0.5, 0.3];
        let frame = vec![0.3, -0.2];
        let expected = (0..3)
            .map(|i| m.start[i] * emission_logpdf(&m.emissions[i], &frame).unwrap().exp())
            .sum::<f64>()
            .ln();
        let fb = forward_backward(&m, &seq(vec![frame])).unwrap();
        assert!((fb.log_likelihood - expected).abs() < 1e-12);
    }

    #[test]
    fn forward_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = random_bakis(3, 1, 2, &mut rng);
            let frames = random_frames(6, 2, &mut rng);
            let (sum, _, _) = enumerate_paths(&m, &frames);
            let fb = forward_backward(&m, &seq(frames)).unwrap();
            assert!((fb.log_likelihood - sum).abs() < 1e-9);
        }
    }

    #[test]
    fn viterbi_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let m = random_bakis(3, 1, 1, &mut rng);
            let frames = random_frames(8, 1, &mut rng);
            let (_, max, path) = enumerate_paths(&m, &frames);
            let v = viterbi(&m, &seq(frames)).unwrap();
            assert!((v.log_prob - max).abs() < 1e-9);
            assert_eq!(v.states, path);
        }
    }

    #[test]
    fn final_distribution_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for k in 0..20 {
            let m = random_bakis(4, 1, 2, &mut rng);
            let mut f: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            f[k % 3] = 0.0;
            let total: f64 = f.iter().sum();
            f.iter_mut().for_each(|v| *v /= total);
            let m = m.with_final_probs(Some(f)).unwrap();
            let frames = random_frames(6, 2, &mut rng);
            let (sum, max, path) = enumerate_paths(&m, &frames);
            let fb = forward_backward(&m, &seq(frames.clone())).unwrap();
            assert!((fb.log_likelihood - sum).abs() < 1e-9);
            let v = viterbi(&m, &seq(frames)).unwrap();
            assert!((v.log_prob - max).abs() < 1e-9);
            assert_eq!(v.states, path);
            for row in &fb.gamma {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn last_state_end_forces_full_chain() {
        let m = make_bakis(3, 0, 1).unwrap().ending_in_last_state();
        let v = viterbi(&m, &seq(vec![vec![0.0]; 4])).unwrap();
        assert_eq!(*v.states.last().unwrap(), 2);
        assert!(matches!(log_likelihood(&m, &seq(vec![vec![0.0]; 2])), Err(Error::Numerical(_))));
    }

    #[test]
    fn separable_switch() {
        let m = make_bakis(2, 0, 1)
            .unwrap()
            .with_emissions(vec![GmmParams::single(vec![-5.0], 0.1), GmmParams::single(vec![5.0], 0.1)])
            .unwrap();
        let frames: Vec<Vec<f64>> = (0..10).map(|t| vec![if t < 5 { -5.0 } else { 5.0 }]).collect();
        let v = viterbi(&m, &seq(frames)).unwrap();
        assert_eq!(v.states, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn single_state_path_is_zero() {
        let m = make_bakis(1, 0, 1).unwrap();
        let v = viterbi(&m, &seq(vec![vec![1.0]; 4])).unwrap();
        assert_eq!(v.states, vec![0; 4]);
    }

    #[test]
    fn ties_prefer_lower_states() {
        // identical emissions: every monotone path has equal probability
        // under uniform rows only if lengths match, so use a 2-state chain
        // where staying and moving are equally likely at every step
        let m = make_bakis(2, 0, 1).unwrap();
        let mut m = m;
        m.transition[1] = vec![0.0, 1.0];
        let v = viterbi(&m, &seq(vec![vec![0.0]; 3])).unwrap();
        let (_, max, path) = enumerate_paths(&m, &vec![vec![0.0]; 3]);
        assert!((v.log_prob - max).abs() < 1e-12);
        assert_eq!(v.states, path);
    }

    #[test]
    fn posterior_rows_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = random_bakis(4, 1, 3, &mut rng);
        let frames = random_frames(30, 3, &mut rng);
        let fb = forward_backward(&m, &seq(frames)).unwrap();
        for (t, g) in fb.gamma.iter().enumerate() {
            assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            if t + 1 < fb.gamma.len() {
                for i in 0..4 {
                    let row: f64 = fb.xi[t][i].iter().sum();
                    assert!((row - g[i]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn errors() {
        let m = make_bakis(2, 0, 2).unwrap();
        assert!(matches!(ObservationSequence::new(vec![]), Err(Error::EmptySequence)));
        let bad = ObservationSequence {
            frames: vec![],
            source: Default::default(),
        };
        assert!(matches!(forward_backward(&m, &bad), Err(Error::EmptySequence)));
        assert!(matches!(viterbi(&m, &bad), Err(Error::EmptySequence)));
        let wrong = seq(vec![vec![0.0]]);
        assert!(matches!(forward_backward(&m, &wrong), Err(Error::DimensionError { .. })));
    }

    #[test]
    fn unreachable_dominant_state_stays_finite() {
        // the data sit on state 1's mean but the chain is forced into state 0
        let mut m = make_bakis(2, 0, 1)
            .unwrap()
            .with_emissions(vec![
                GmmParams::single(vec![-10.0], 1e-4),
                GmmParams::single(vec![10.0], 1e-4),
            ])
            .unwrap();
        m.transition[0] = vec![1.0, 0.0];
        let fb = forward_backward(&m, &seq(vec![vec![10.0]; 5])).unwrap();
        assert!(fb.log_likelihood.is_finite());
        assert!(fb.log_likelihood < -1e6);
    }
}
