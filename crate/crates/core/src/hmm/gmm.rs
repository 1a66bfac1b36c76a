//! Diagonal-covariance Gaussian mixtures over logit-space frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound for every emission variance (logit units squared).
pub const VAR_FLOOR: f64 = 1e-4;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub weights: Vec<f64>,
    /// `K x N` component means.
    pub means: Vec<Vec<f64>>,
    /// `K x N` diagonal variances.
    pub variances: Vec<Vec<f64>>,
}

impl GmmParams {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let gmm = GmmParams {
            weights,
            means,
            variances,
        };
        gmm.validate()?;
        Ok(gmm)
    }

    /// One component with the same variance in every dimension.
    pub fn single(mean: Vec<f64>, variance: f64) -> Self {
        let n = mean.len();
        GmmParams {
            weights: vec![1.0],
            means: vec![mean],
            variances: vec![vec![variance; n]],
        }
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 {
            return Err(Error::invalid("a mixture needs at least one component"));
        }
        if self.means.len() != k || self.variances.len() != k {
            return Err(Error::DimensionError {
                expected: k,
                found: self.means.len().min(self.variances.len()),
            });
        }
        let n = self.dim();
        if n == 0 {
            return Err(Error::invalid("emission dimension must be >= 1"));
        }
        for (m, v) in self.means.iter().zip(&self.variances) {
            if m.len() != n || v.len() != n {
                return Err(Error::DimensionError {
                    expected: n,
                    found: if m.len() != n { m.len() } else { v.len() },
                });
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("mixture means must be finite"));
            }
            if v.iter().any(|x| !x.is_finite() || *x < VAR_FLOOR * (1.0 - 1e-12)) {
                return Err(Error::invalid(format!(
                    "mixture variances must be finite and >= {VAR_FLOOR}"
                )));
            }
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    /// Log-density of one frame. The frame dimension must match.
    pub(crate) fn log_pdf_unchecked(&self, frame: &[f64]) -> f64 {
        if self.weights.len() == 1 {
            return diag_log_normal(frame, &self.means[0], &self.variances[0]);
        }
        let mut terms = [f64::NEG_INFINITY; 8];
        let mut heap = Vec::new();
        let buf: &mut [f64] = if self.weights.len() <= terms.len() {
            &mut terms[..self.weights.len()]
        } else {
            heap.resize(self.weights.len(), f64::NEG_INFINITY);
            &mut heap
        };
        self.component_log_terms(frame, buf);
        log_sum_exp(buf)
    }

    /// `log w_k + log N_k(frame)` for every component.
    pub(crate) fn component_log_terms(&self, frame: &[f64], out: &mut [f64]) {
        for (k, slot) in out.iter_mut().enumerate() {
            let w = self.weights[k];
            *slot = if w > 0.0 {
                w.ln() + diag_log_normal(frame, &self.means[k], &self.variances[k])
            } else {
                f64::NEG_INFINITY
            };
        }
    }
}

#[inline]
fn diag_log_normal(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((x, m), v) in x.iter().zip(mean).zip(var) {
        let d = x - m;
        acc += LN_2PI + v.ln() + d * d / v;
    }
    -0.5 * acc
}

/// `log sum exp(xs)`, with `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn emission_logpdf(gmm: &GmmParams, frame: &[f64]) -> Result<f64> {
    if frame.len() != gmm.dim() {
        return Err(Error::DimensionError {
            expected: gmm.dim(),
            found: frame.len(),
        });
    }
    Ok(gmm.log_pdf_unchecked(frame))
}
