//! Initial emission parameters.

use serde::{Deserialize, Serialize};

use super::gmm::{GmmParams, VAR_FLOOR};
use crate::error::{Error, Result};
use crate::kmeans::kmeans;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionInit {
    /// One mean per state, taken from a user-provided table.
    ManualMeans(Vec<Vec<f64>>),
    /// Seeded k-means over the pooled training frames.
    KMeans,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    pub init_var: f64,
    pub var_floor: f64,
    /// Mixture components per state.
    pub num_components: usize,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            init_var: 0.1,
            var_floor: VAR_FLOOR,
            num_components: 1,
            seed: 0,
        }
    }
}

/// Spread of the component means around a manual state mean, in standard
/// deviations of `init_var`. Identical components would never separate under EM.
const COMPONENT_SPREAD: f64 = 0.5;

/// Emissions for `num_states` states.
///
/// With manual means, the table has either one row per state or a single row
/// shared by every state.
pub fn init_emissions(
    strategy: &EmissionInit,
    data: &[Vec<f64>],
    num_states: usize,
    config: &InitConfig,
) -> Result<Vec<GmmParams>> {
    if num_states == 0 {
        return Err(Error::invalid("num_states must be >= 1"));
    }
    if config.num_components == 0 {
        return Err(Error::invalid("num_components must be >= 1"));
    }
    if !(config.init_var >= config.var_floor) {
        return Err(Error::invalid("init_var must be >= var_floor"));
    }
    match strategy {
        EmissionInit::ManualMeans(table) => manual(table, num_states, config),
        EmissionInit::KMeans => from_kmeans(data, num_states, config),
    }
}

fn manual(table: &[Vec<f64>], num_states: usize, config: &InitConfig) -> Result<Vec<GmmParams>> {
    if table.is_empty() {
        return Err(Error::invalid("manual_means initialization needs a mean table"));
    }
    if table.len() != 1 && table.len() != num_states {
        return Err(Error::invalid(format!(
            "mean table has {} rows; expected 1 or {num_states}",
            table.len()
        )));
    }
    let n = table[0].len();
    if n == 0 || table.iter().any(|r| r.len() != n) {
        return Err(Error::invalid("mean table rows must share a nonzero dimension"));
    }
    let k = config.num_components;
    let spread = COMPONENT_SPREAD * config.init_var.sqrt();
    Ok((0..num_states)
        .map(|s| {
            let mean = &table[if table.len() == 1 { 0 } else { s }];
            let means = (0..k)
                .map(|c| {
                    // symmetric offsets around the table mean, zero for K = 1
                    let off = spread * (c as f64 - (k - 1) as f64 / 2.0);
                    mean.iter().map(|m| m + off).collect()
                })
                .collect();
            GmmParams {
                weights: vec![1.0 / k as f64; k],
                means,
                variances: vec![vec![config.init_var; n]; k],
            }
        })
        .collect())
}

fn from_kmeans(data: &[Vec<f64>], num_states: usize, config: &InitConfig) -> Result<Vec<GmmParams>> {
    if data.is_empty() {
        return Err(Error::invalid("kmeans initialization needs pooled training frames"));
    }
    let k_states = num_states.min(data.len());
    let fit = kmeans(data, k_states, 100, config.seed)?;

    // order clusters by the mean position of their members so that the
    // left-right topology sees them in temporal order
    let mut position = vec![(0.0, 0usize); k_states];
    for (t, &l) in fit.labels.iter().enumerate() {
        position[l].0 += t as f64;
        position[l].1 += 1;
    }
    let mut order: Vec<usize> = (0..k_states).collect();
    order.sort_by(|&a, &b| {
        let pa = position[a].0 / position[a].1.max(1) as f64;
        let pb = position[b].0 / position[b].1.max(1) as f64;
        pa.total_cmp(&pb).then(a.cmp(&b))
    });

    let mut states = Vec::with_capacity(num_states);
    for &c in &order {
        let members: Vec<Vec<f64>> = data
            .iter()
            .zip(&fit.labels)
            .filter(|(_, &l)| l == c)
            .map(|(x, _)| x.clone())
            .collect();
        states.push(cluster_gmm(&members, &fit.centroids[c], config)?);
    }
    // fewer frames than states: repeat the last cluster
    while states.len() < num_states {
        states.push(states.last().unwrap().clone());
    }
    Ok(states)
}

fn cluster_gmm(members: &[Vec<f64>], centroid: &[f64], config: &InitConfig) -> Result<GmmParams> {
    let k = config.num_components;
    if k == 1 || members.len() < k {
        let means = if members.is_empty() {
            centroid.to_vec()
        } else {
            column_means(members)
        };
        let var = scatter(members, &means, config.var_floor);
        return Ok(GmmParams {
            weights: vec![1.0 / k as f64; k],
            means: vec![means; k],
            variances: vec![var; k],
        });
    }
    let sub = kmeans(members, k, 100, config.seed ^ 0x5bd1_e995)?;
    let mut weights = vec![0.0; k];
    let mut means = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for c in 0..k {
        let part: Vec<Vec<f64>> = members
            .iter()
            .zip(&sub.labels)
            .filter(|(_, &l)| l == c)
            .map(|(x, _)| x.clone())
            .collect();
        weights[c] = part.len() as f64 / members.len() as f64;
        let m = if part.is_empty() { sub.centroids[c].clone() } else { column_means(&part) };
        variances.push(scatter(&part, &m, config.var_floor));
        means.push(m);
    }
    // an empty sub-cluster still needs positive weight to be a valid mixture
    if weights.contains(&0.0) {
        weights = vec![1.0 / k as f64; k];
    }
    GmmParams::new(weights, means, variances)
}

fn column_means(xs: &[Vec<f64>]) -> Vec<f64> {
    let n = xs[0].len();
    let mut m = vec![0.0; n];
    for x in xs {
        for (a, b) in m.iter_mut().zip(x) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|v| *v /= xs.len() as f64);
    m
}

fn scatter(xs: &[Vec<f64>], mean: &[f64], floor: f64) -> Vec<f64> {
    if xs.is_empty() {
        return vec![floor; mean.len()];
    }
    (0..mean.len())
        .map(|d| {
            let v = xs.iter().map(|x| (x[d] - mean[d]).powi(2)).sum::<f64>() / xs.len() as f64;
            v.max(floor)
        })
        .collect()
}
