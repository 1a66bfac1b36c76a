//! Class prior plus one Bakis sub-model per class, trained per class or on a
//! pooled composite, and decoded by a boundary DP over segments.

use serde::{Deserialize, Serialize};

use super::gmm::GmmParams;
use super::inference::{check_frames, ln, log_emissions, posteriors_from, LogTransitions};
use super::init::{init_emissions, EmissionInit, InitConfig};
use super::model::{bakis_mask, make_bakis, PropertyModel};
use super::training::{baum_welch, TrainingConfig};
use super::ObservationSequence;
use crate::error::{Error, Result};

const PRIOR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalModel {
    pub classes: Vec<String>,
    pub prior: Vec<f64>,
    pub submodels: Vec<PropertyModel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub min_segment_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { min_segment_len: 3 }
    }
}

impl HierarchicalModel {
    pub fn new(classes: Vec<String>, prior: Vec<f64>, submodels: Vec<PropertyModel>) -> Result<Self> {
        let m = HierarchicalModel {
            classes,
            prior,
            submodels,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.classes.len();
        if c == 0 {
            return Err(Error::invalid("a hierarchical model needs at least one class"));
        }
        if self.prior.len() != c || self.submodels.len() != c {
            return Err(Error::DimensionError {
                expected: c,
                found: if self.prior.len() != c { self.prior.len() } else { self.submodels.len() },
            });
        }
        for (i, a) in self.classes.iter().enumerate() {
            if self.classes[..i].contains(a) {
                return Err(Error::invalid(format!("duplicate class name {a:?}")));
            }
        }
        if self.prior.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::invalid("class prior has a negative entry"));
        }
        let total: f64 = self.prior.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("class prior sums to {total}, expected 1")));
        }
        let n = self.dim();
        for m in &self.submodels {
            m.validate()?;
            if m.dim() != n {
                return Err(Error::DimensionError {
                    expected: n,
                    found: m.dim(),
                });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.submodels.first().map_or(0, PropertyModel::dim)
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    /// `sum_i log P(w_i) + log P(segment_i | lambda_{w_i})`.
    pub fn joint_logprob<S: AsRef<str>>(&self, segments: &[ObservationSequence], properties: &[S]) -> Result<f64> {
        if segments.is_empty() {
            return Err(Error::EmptySequence);
        }
        if segments.len() != properties.len() {
            return Err(Error::DimensionError {
                expected: segments.len(),
                found: properties.len(),
            });
        }
        let mut total = 0.0;
        for (seg, w) in segments.iter().zip(properties) {
            let c = self.class_index(w.as_ref())?;
            total += ln(self.prior[c]) + super::inference::log_likelihood(&self.submodels[c], seg)?;
        }
        Ok(total)
    }

    /// Per-frame class indices from the best partition into contiguous
    /// segments of at least `min_segment_len` frames.
    ///
    /// A segment scores `log P(w) + ` its Viterbi log-probability under
    /// `lambda_w`. Neighboring segments carry different classes, since two
    /// adjacent segments of one class are the same property. Sequences
    /// shorter than the minimum length form a single segment. If the
    /// sub-models' end states admit no partition at all, ends are relaxed to
    /// any state.
    pub fn decode_path(&self, obs: &ObservationSequence, config: &DecodeConfig) -> Result<Vec<usize>> {
        if obs.is_empty() {
            return Err(Error::EmptySequence);
        }
        let mut lts: Vec<LogTransitions> = self.submodels.iter().map(LogTransitions::new).collect();
        let mut log_b = Vec::with_capacity(self.classes.len());
        for m in &self.submodels {
            check_frames(m, &obs.frames)?;
            log_b.push(log_emissions(m, &obs.frames));
        }
        if let Some(labels) = self.segment_dp(&lts, &log_b, config) {
            return Ok(labels);
        }
        if self.submodels.iter().any(|m| m.final_probs.is_some()) {
            log::debug!("no partition ends every segment in a final state; relaxing end states");
            lts.iter_mut().for_each(|lt| lt.log_end.fill(0.0));
            if let Some(labels) = self.segment_dp(&lts, &log_b, config) {
                return Ok(labels);
            }
        }
        Err(Error::Numerical("no segmentation of the sequence has finite probability".into()))
    }

    fn segment_dp(&self, lts: &[LogTransitions], log_b: &[Vec<Vec<f64>>], config: &DecodeConfig) -> Option<Vec<usize>> {
        let c_count = self.classes.len();
        let t_len = log_b[0].len();
        let min_len = config.min_segment_len.max(1).min(t_len);
        let log_prior: Vec<f64> = self.prior.iter().map(|&p| ln(p)).collect();

        let neg = f64::NEG_INFINITY;
        // best[t][c]: best score of frames [0, t) with the last segment of
        // class c; column c_count marks the empty prefix
        let mut best = vec![vec![neg; c_count + 1]; t_len + 1];
        let mut back = vec![vec![(0usize, 0usize); c_count]; t_len + 1];
        best[0][c_count] = 0.0;

        let mut delta = Vec::new();
        let mut next = Vec::new();
        for s in 0..t_len {
            for c in 0..c_count {
                let mut pred = (neg, 0usize);
                for (cp, &v) in best[s].iter().enumerate() {
                    if cp != c && v > pred.0 {
                        pred = (v, cp);
                    }
                }
                if pred.0 == neg || log_prior[c] == neg {
                    continue;
                }
                let lt = &lts[c];
                let lb = &log_b[c];
                let states = lt.log_start.len();
                delta.clear();
                delta.extend((0..states).map(|i| lt.log_start[i] + lb[s][i]));
                for e in s + 1..=t_len {
                    if e > s + 1 {
                        next.clear();
                        next.extend((0..states).map(|j| {
                            let m = lt.preds[j]
                                .iter()
                                .map(|&i| delta[i] + lt.log_a[i][j])
                                .fold(neg, f64::max);
                            m + lb[e - 1][j]
                        }));
                        std::mem::swap(&mut delta, &mut next);
                    }
                    if e - s < min_len {
                        continue;
                    }
                    let seg = delta.iter().zip(&lt.log_end).map(|(d, z)| d + z).fold(neg, f64::max);
                    let v = pred.0 + log_prior[c] + seg;
                    if v > best[e][c] {
                        best[e][c] = v;
                        back[e][c] = (s, pred.1);
                    }
                }
            }
        }

        let mut c = (0..c_count)
            .fold((neg, usize::MAX), |acc, c| if best[t_len][c] > acc.0 { (best[t_len][c], c) } else { acc })
            .1;
        if c == usize::MAX {
            return None;
        }
        let mut labels = vec![0; t_len];
        let mut e = t_len;
        while e > 0 {
            let (s, prev) = back[e][c];
            labels[s..e].iter_mut().for_each(|l| *l = c);
            e = s;
            c = prev;
        }
        Some(labels)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// One Baum-Welch run per class on that class's labeled segments.
    #[default]
    PerClass,
    /// One composite model over whole sequences, labels unused; blocks are
    /// tied to classes afterwards by nearest manual mean.
    Pooled,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    #[default]
    ManualMeans,
    Kmeans,
}

/// Where a property sub-model may end a segment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndStates {
    /// Any state, at no cost.
    Any,
    /// Only the last state of the chain.
    #[default]
    Last,
    /// A final-state distribution re-estimated with the other parameters,
    /// starting uniform.
    Learned,
}

impl EndStates {
    fn apply(self, m: PropertyModel) -> PropertyModel {
        match self {
            EndStates::Any => m,
            EndStates::Last => m.ending_in_last_state(),
            EndStates::Learned => m.ending_anywhere(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierarchicalTrainingConfig {
    /// Bakis length: states per class sub-model.
    pub num_states: usize,
    pub skip: usize,
    pub num_components: usize,
    pub init: InitStrategy,
    /// One logit-space mean per class, in class order.
    pub manual_means: Option<Vec<Vec<f64>>>,
    pub init_var: f64,
    pub mode: TrainingMode,
    pub end_states: EndStates,
    pub training: TrainingConfig,
    pub seed: u64,
}

impl Default for HierarchicalTrainingConfig {
    fn default() -> Self {
        HierarchicalTrainingConfig {
            num_states: 10,
            skip: 1,
            num_components: 1,
            init: InitStrategy::ManualMeans,
            manual_means: None,
            init_var: 0.1,
            mode: TrainingMode::PerClass,
            end_states: EndStates::default(),
            training: TrainingConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub mode: TrainingMode,
    /// Log-likelihood trace per trained model (one per class, or one for
    /// the pooled composite).
    pub traces: Vec<Vec<f64>>,
    /// Composite block tied to each class (pooled mode only).
    pub block_of_class: Option<Vec<usize>>,
    pub mapping_rule: String,
}

/// Train a hierarchical model from labeled sequences (`labels[t]` is a class
/// index into `classes`).
pub fn train_hierarchical(
    classes: &[String],
    data: &[(ObservationSequence, Vec<usize>)],
    config: &HierarchicalTrainingConfig,
) -> Result<(HierarchicalModel, TrainingReport)> {
    if classes.is_empty() {
        return Err(Error::invalid("no classes to train"));
    }
    if data.is_empty() {
        return Err(Error::EmptySequence);
    }
    if config.num_states == 0 {
        return Err(Error::invalid("num_states must be >= 1"));
    }
    for (obs, labels) in data {
        obs.validate()?;
        if obs.len() != labels.len() {
            return Err(Error::DimensionError {
                expected: obs.len(),
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes.len()) {
            return Err(Error::UnknownClass(format!("class index {bad}")));
        }
    }
    let dim = data[0].0.dim();
    if let Some(means) = &config.manual_means {
        if means.len() != classes.len() || means.iter().any(|m| m.len() != dim) {
            return Err(Error::invalid(format!(
                "manual_means must have one {dim}-vector per class ({} classes)",
                classes.len()
            )));
        }
    }
    if config.init == InitStrategy::ManualMeans && config.manual_means.is_none() {
        return Err(Error::invalid("manual_means initialization needs a mean table"));
    }
    match config.mode {
        TrainingMode::PerClass => train_per_class(classes, data, dim, config),
        TrainingMode::Pooled => train_pooled(classes, data, dim, config),
    }
}

fn init_config(config: &HierarchicalTrainingConfig, salt: u64) -> InitConfig {
    InitConfig {
        init_var: config.init_var,
        var_floor: config.training.var_floor,
        num_components: config.num_components,
        seed: config.seed.wrapping_add(salt),
    }
}

/// Maximal runs of equal labels as `(class, start, end)`.
pub(crate) fn label_runs(labels: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0;
    for t in 1..=labels.len() {
        if t == labels.len() || labels[t] != labels[start] {
            runs.push((labels[start], start, t));
            start = t;
        }
    }
    runs
}

fn train_per_class(
    classes: &[String],
    data: &[(ObservationSequence, Vec<usize>)],
    dim: usize,
    config: &HierarchicalTrainingConfig,
) -> Result<(HierarchicalModel, TrainingReport)> {
    let c_count = classes.len();
    let mut segments: Vec<Vec<ObservationSequence>> = vec![Vec::new(); c_count];
    for (obs, labels) in data {
        for (c, s, e) in label_runs(labels) {
            segments[c].push(obs.slice(s, e));
        }
    }
    let total_segments: usize = segments.iter().map(Vec::len).sum();

    let base = config.end_states.apply(make_bakis(config.num_states, config.skip, dim)?);
    let min_len = base.min_duration().unwrap_or(1);

    let mut submodels = Vec::with_capacity(c_count);
    let mut traces = Vec::with_capacity(c_count);
    for (c, all) in segments.iter().enumerate() {
        let segs: Vec<ObservationSequence> = all.iter().filter(|s| s.len() >= min_len).cloned().collect();
        if segs.len() < all.len() {
            log::warn!(
                "class {:?}: skipping {} of {} segments shorter than {min_len} frames",
                classes[c],
                all.len() - segs.len(),
                all.len()
            );
        }
        if segs.is_empty() {
            return Err(Error::invalid(format!(
                "class {:?} has no training segments of at least {min_len} frames",
                classes[c]
            )));
        }
        let segs = &segs[..];
        let emissions = match config.init {
            InitStrategy::ManualMeans => {
                let row = config.manual_means.as_ref().unwrap()[c].clone();
                init_emissions(&EmissionInit::ManualMeans(vec![row]), &[], config.num_states, &init_config(config, c as u64))?
            }
            InitStrategy::Kmeans => {
                let pooled: Vec<Vec<f64>> = segs.iter().flat_map(|s| s.frames.iter().cloned()).collect();
                let e = init_emissions(&EmissionInit::KMeans, &pooled, config.num_states, &init_config(config, c as u64))?;
                order_by_progress(e, segs)
            }
        };
        let outcome = baum_welch(&base.clone().with_emissions(emissions)?, segs, &config.training)?;
        log::info!(
            "class {:?}: {} segments, {} iterations, log-likelihood {:.4}",
            classes[c],
            segs.len(),
            outcome.trace.len(),
            outcome.trace.last().copied().unwrap_or(f64::NAN)
        );
        submodels.push(outcome.model);
        traces.push(outcome.trace);
    }
    let prior = segments.iter().map(|s| s.len() as f64 / total_segments as f64).collect();
    let model = HierarchicalModel::new(classes.to_vec(), prior, submodels)?;
    Ok((
        model,
        TrainingReport {
            mode: TrainingMode::PerClass,
            traces,
            block_of_class: None,
            mapping_rule: "per-class training: sub-model c is trained on segments labeled c".into(),
        },
    ))
}

/// Reorder k-means states by the mean relative position (0 at a segment's
/// start, 1 at its end) of the frames they explain best.
fn order_by_progress(emissions: Vec<GmmParams>, segments: &[ObservationSequence]) -> Vec<GmmParams> {
    let s = emissions.len();
    let mut acc = vec![(0.0, 0usize); s];
    for seg in segments {
        let denom = (seg.len().max(2) - 1) as f64;
        for (t, f) in seg.frames.iter().enumerate() {
            let mut best = (f64::NEG_INFINITY, 0);
            for (i, e) in emissions.iter().enumerate() {
                let v = e.log_pdf_unchecked(f);
                if v > best.0 {
                    best = (v, i);
                }
            }
            acc[best.1].0 += t as f64 / denom;
            acc[best.1].1 += 1;
        }
    }
    let mut order: Vec<usize> = (0..s).collect();
    let key = |i: usize| if acc[i].1 == 0 { f64::INFINITY } else { acc[i].0 / acc[i].1 as f64 };
    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    order.into_iter().map(|i| emissions[i].clone()).collect()
}

/// Share of each composite row reserved for leaving the block at start.
const INITIAL_EXIT_MASS: f64 = 0.1;

fn train_pooled(
    classes: &[String],
    data: &[(ObservationSequence, Vec<usize>)],
    dim: usize,
    config: &HierarchicalTrainingConfig,
) -> Result<(HierarchicalModel, TrainingReport)> {
    let means = config.manual_means.as_ref().ok_or_else(|| {
        Error::invalid("pooled training maps blocks to classes by manual means; provide manual_means")
    })?;
    let c_count = classes.len();
    let s = config.num_states;
    let total = c_count * s;
    let block_mask = bakis_mask(s, config.skip);

    let mut mask = vec![vec![false; total]; total];
    let mut transition = vec![vec![0.0; total]; total];
    for b in 0..c_count {
        for i in 0..s {
            let row = b * s + i;
            let inner: Vec<usize> = (0..s).filter(|&j| block_mask[i][j]).collect();
            let exits: Vec<usize> = if config.end_states == EndStates::Last && i + 1 < s {
                Vec::new()
            } else {
                (0..c_count).filter(|&o| o != b).map(|o| o * s).collect()
            };
            let exit_mass = if exits.is_empty() { 0.0 } else { INITIAL_EXIT_MASS };
            for &j in &inner {
                mask[row][b * s + j] = true;
                transition[row][b * s + j] = (1.0 - exit_mass) / inner.len() as f64;
            }
            for &j in &exits {
                mask[row][j] = true;
                transition[row][j] = exit_mass / exits.len() as f64;
            }
        }
    }
    let mut start = vec![0.0; total];
    for b in 0..c_count {
        start[b * s] = 1.0 / c_count as f64;
    }

    let sequences: Vec<ObservationSequence> = data.iter().map(|(o, _)| o.clone()).collect();
    let mut emissions = Vec::with_capacity(total);
    match config.init {
        InitStrategy::ManualMeans => {
            for (b, row) in means.iter().enumerate() {
                emissions.extend(init_emissions(
                    &EmissionInit::ManualMeans(vec![row.clone()]),
                    &[],
                    s,
                    &init_config(config, b as u64),
                )?);
            }
        }
        InitStrategy::Kmeans => {
            let pooled: Vec<Vec<f64>> = sequences.iter().flat_map(|o| o.frames.iter().cloned()).collect();
            let per_block = init_emissions(&EmissionInit::KMeans, &pooled, c_count, &init_config(config, 0))?;
            for g in per_block {
                emissions.extend(std::iter::repeat_n(g, s));
            }
        }
    }
    let final_probs = match config.end_states {
        EndStates::Any => None,
        EndStates::Last => Some((0..total).map(|k| if k % s == s - 1 { 1.0 / c_count as f64 } else { 0.0 }).collect()),
        EndStates::Learned => Some(vec![1.0 / total as f64; total]),
    };
    let composite = PropertyModel::new(transition, start, emissions, mask)?.with_final_probs(final_probs)?;
    let outcome = baum_welch(&composite, &sequences, &config.training)?;
    let trained = outcome.model;

    // tie blocks to classes: minimize the summed squared distance between
    // block mean emissions and the manual class means
    let centers: Vec<Vec<f64>> = (0..c_count)
        .map(|b| {
            let mut m = vec![0.0; dim];
            for e in &trained.emissions[b * s..(b + 1) * s] {
                for (w, mean) in e.weights.iter().zip(&e.means) {
                    for (a, v) in m.iter_mut().zip(mean) {
                        *a += w * v / s as f64;
                    }
                }
            }
            m
        })
        .collect();
    let block_of_class = best_assignment(&centers, means);

    // expected number of entries into each block
    let lt = LogTransitions::new(&trained);
    let mut entries = vec![0.0; c_count];
    for seq in &sequences {
        let post = posteriors_from(&lt, &log_emissions(&trained, &seq.frames))?;
        for b in 0..c_count {
            entries[b] += post.gamma[0][b * s];
            for xi in &post.xi {
                for (i, row) in xi.iter().enumerate() {
                    if i / s != b {
                        entries[b] += row[b * s];
                    }
                }
            }
        }
    }

    let mut submodels = Vec::with_capacity(c_count);
    let mut prior = Vec::with_capacity(c_count);
    for &b in &block_of_class {
        let mut sub = make_bakis(s, config.skip, dim)?;
        for i in 0..s {
            let row = &trained.transition[b * s + i][b * s..(b + 1) * s];
            let mass: f64 = row.iter().sum();
            if mass > 0.0 {
                sub.transition[i] = row.iter().map(|v| v / mass).collect();
            }
        }
        sub.emissions = trained.emissions[b * s..(b + 1) * s].to_vec();
        // composite end mass only records where whole sequences stop, which
        // says nothing about segment ends, so learned ends restart uniform
        sub = config.end_states.apply(sub);
        sub.validate()?;
        submodels.push(sub);
        prior.push(entries[b].max(PRIOR_FLOOR));
    }
    let prior_total: f64 = prior.iter().sum();
    prior.iter_mut().for_each(|p| *p /= prior_total);

    let model = HierarchicalModel::new(classes.to_vec(), prior, submodels)?;
    Ok((
        model,
        TrainingReport {
            mode: TrainingMode::Pooled,
            traces: vec![outcome.trace],
            block_of_class: Some(block_of_class),
            mapping_rule: "pooled training: composite blocks assigned to classes by nearest manual mean \
                           (minimum total squared distance over assignments)"
                .into(),
        },
    ))
}

/// `result[c]` is the block assigned to class `c`, minimizing the total
/// squared distance; exhaustive for up to 8 classes, greedy beyond.
fn best_assignment(centers: &[Vec<f64>], means: &[Vec<f64>]) -> Vec<usize> {
    let n = means.len();
    let cost = |c: usize, b: usize| crate::kmeans::sq_dist(&centers[b], &means[c]);
    if n <= 8 {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = (f64::INFINITY, perm.clone());
        permute(&mut perm, 0, &mut |p| {
            let total: f64 = p.iter().enumerate().map(|(c, &b)| cost(c, b)).sum();
            if total < best.0 {
                best = (total, p.to_vec());
            }
        });
        best.1
    } else {
        let mut used = vec![false; n];
        (0..n)
            .map(|c| {
                let b = (0..n)
                    .filter(|&b| !used[b])
                    .min_by(|&x, &y| cost(c, x).total_cmp(&cost(c, y)))
                    .unwrap();
                used[b] = true;
                b
            })
            .collect()
    }
}

/// Visit permutations in lexicographic order of generation.
fn permute(p: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::inference::log_likelihood;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const MEANS: [[f64; 2]; 3] = [[-3.0, -3.0], [2.0, -1.0], [1.0, 3.0]];

    fn names() -> Vec<String> {
        ["ground", "table", "object"].iter().map(|s| s.to_string()).collect()
    }

    fn simple_model(prior: Vec<f64>) -> HierarchicalModel {
        let subs = MEANS
            .iter()
            .map(|m| {
                make_bakis(2, 0, 2)
                    .unwrap()
                    .with_emissions(vec![GmmParams::single(m.to_vec(), 0.5); 2])
                    .unwrap()
            })
            .collect();
        HierarchicalModel::new(names(), prior, subs).unwrap()
    }

    fn frames_for(labels: &[usize]) -> ObservationSequence {
        ObservationSequence::new(labels.iter().map(|&c| MEANS[c].to_vec()).collect()).unwrap()
    }

    #[test]
    fn joint_single_segment() {
        let m = simple_model(vec![0.2, 0.5, 0.3]);
        let seg = frames_for(&[1, 1, 1, 1]);
        let j = m.joint_logprob(&[seg.clone()], &["table"]).unwrap();
        let direct = 0.5f64.ln() + log_likelihood(&m.submodels[1], &seg).unwrap();
        assert!((j - direct).abs() < 1e-12);
    }

    #[test]
    fn uniform_prior_adds_constant() {
        let m = simple_model(vec![1.0 / 3.0; 3]);
        let segs = [frames_for(&[0, 0, 0]), frames_for(&[2, 2])];
        let j = m.joint_logprob(&segs, &["ground", "object"]).unwrap();
        let raw = log_likelihood(&m.submodels[0], &segs[0]).unwrap() + log_likelihood(&m.submodels[2], &segs[1]).unwrap();
        assert!((j - raw - 2.0 * (1.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn joint_factorizes() {
        let m = simple_model(vec![0.3, 0.3, 0.4]);
        let a = frames_for(&[0, 0, 1]);
        let b = frames_for(&[1, 1, 2, 2]);
        let both = m.joint_logprob(&[a.clone(), b.clone()], &["ground", "table"]).unwrap();
        let sep = m.joint_logprob(&[a], &["ground"]).unwrap() + m.joint_logprob(&[b], &["table"]).unwrap();
        assert!((both - sep).abs() < 1e-12);
    }

    #[test]
    fn unknown_class() {
        let m = simple_model(vec![1.0 / 3.0; 3]);
        assert!(matches!(
            m.joint_logprob(&[frames_for(&[0])], &["chair"]),
            Err(Error::UnknownClass(_))
        ));
    }

    #[test]
    fn all_table_frames() {
        let m = simple_model(vec![1.0 / 3.0; 3]);
        let labels = m.decode_path(&frames_for(&[1; 12]), &DecodeConfig::default()).unwrap();
        assert_eq!(labels, vec![1; 12]);
    }

    #[test]
    fn recovers_segment_boundaries() {
        let m = simple_model(vec![1.0 / 3.0; 3]);
        let mut truth = Vec::new();
        for (c, n) in [(0, 8), (1, 10), (2, 6), (1, 9), (0, 7)] {
            truth.extend(std::iter::repeat(c).take(n));
        }
        let labels = m.decode_path(&frames_for(&truth), &DecodeConfig::default()).unwrap();
        let bounds = |l: &[usize]| (1..l.len()).filter(|&t| l[t] != l[t - 1]).collect::<Vec<_>>();
        let (a, b) = (bounds(&truth), bounds(&labels));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!((*x as i64 - *y as i64).abs() <= 1);
        }
    }

    #[test]
    fn short_blip_is_absorbed() {
        let m = simple_model(vec![1.0 / 3.0; 3]);
        let truth = [1, 1, 1, 1, 1, 2, 1, 1, 1, 1, 1];
        let labels = m.decode_path(&frames_for(&truth), &DecodeConfig::default()).unwrap();
        assert_eq!(labels, vec![1; 11]);
        // with no minimum the blip survives
        let free = m.decode_path(&frames_for(&truth), &DecodeConfig { min_segment_len: 1 }).unwrap();
        assert_eq!(free, truth.to_vec());
    }

    #[test]
    fn short_sequence_is_one_segment() {
        let m = simple_model(vec![1.0 / 3.0; 3]);
        let labels = m.decode_path(&frames_for(&[2, 0]), &DecodeConfig::default()).unwrap();
        assert_eq!(labels.len(), 2);
        assert_eq!(labels[0], labels[1]);
    }

    fn ending_last(mut m: HierarchicalModel) -> HierarchicalModel {
        m.submodels = m.submodels.into_iter().map(PropertyModel::ending_in_last_state).collect();
        m
    }

    #[test]
    fn decode_matches_enumerated_partitions() {
        check_against_partitions(simple_model(vec![0.25, 0.35, 0.4]), 8);
    }

    #[test]
    fn end_constrained_decode_matches_enumerated_partitions() {
        check_against_partitions(ending_last(simple_model(vec![0.25, 0.35, 0.4])), 9);
    }

    #[test]
    fn infeasible_ends_are_relaxed() {
        // two-state chains without skips cannot end in their last state
        // after a single frame
        let m = ending_last(simple_model(vec![1.0 / 3.0; 3]));
        let labels = m.decode_path(&frames_for(&[1]), &DecodeConfig::default()).unwrap();
        assert_eq!(labels, vec![1]);
    }

    fn check_against_partitions(m: HierarchicalModel, seed: u64) {
        // brute force over every labeling whose runs respect the rules
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.5).unwrap();
        for _ in 0..5 {
            let t_len = 9;
            let frames: Vec<Vec<f64>> = (0..t_len)
                .map(|t| MEANS[t / 3].iter().map(|v| v + noise.sample(&mut rng)).collect())
                .collect();
            let obs = ObservationSequence::new(frames).unwrap();
            let cfg = DecodeConfig { min_segment_len: 2 };
            let mut best = (f64::NEG_INFINITY, Vec::new());
            for code in 0..3usize.pow(t_len as u32) {
                let mut c = code;
                let labels: Vec<usize> = (0..t_len).map(|_| { let v = c % 3; c /= 3; v }).collect();
                let runs = label_runs(&labels);
                if runs.iter().any(|&(_, s, e)| e - s < 2) {
                    continue;
                }
                let score: f64 = runs
                    .iter()
                    .map(|&(c, s, e)| {
                        let v = crate::hmm::viterbi(&m.submodels[c], &obs.slice(s, e));
                        m.prior[c].ln() + v.map_or(f64::NEG_INFINITY, |v| v.log_prob)
                    })
                    .sum();
                if score > best.0 + 1e-12 {
                    best = (score, labels);
                }
            }
            assert_eq!(m.decode_path(&obs, &cfg).unwrap(), best.1);
        }
    }

    #[test]
    fn empty_sequence() {
        let m = simple_model(vec![1.0 / 3.0; 3]);
        let empty = ObservationSequence { frames: vec![], source: Default::default() };
        assert!(matches!(m.decode_path(&empty, &DecodeConfig::default()), Err(Error::EmptySequence)));
    }

    fn labeled_data(count: usize, seed: u64) -> Vec<(ObservationSequence, Vec<usize>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        (0..count)
            .map(|_| {
                let mut labels = Vec::new();
                for (c, n) in [(0, 10), (1, 12), (2, 6), (1, 12), (0, 10)] {
                    labels.extend(std::iter::repeat(c).take(n));
                }
                let frames = labels
                    .iter()
                    .map(|&c| MEANS[c].iter().map(|v| v + noise.sample(&mut rng)).collect())
                    .collect();
                (ObservationSequence::new(frames).unwrap(), labels)
            })
            .collect()
    }

    fn manual_cfg(mode: TrainingMode) -> HierarchicalTrainingConfig {
        HierarchicalTrainingConfig {
            num_states: 3,
            manual_means: Some(MEANS.iter().map(|m| m.to_vec()).collect()),
            mode,
            ..Default::default()
        }
    }

    #[test]
    fn per_class_training_decodes_held_out() {
        let (model, report) = train_hierarchical(&names(), &labeled_data(6, 1), &manual_cfg(TrainingMode::PerClass)).unwrap();
        assert_eq!(report.traces.len(), 3);
        // 2 ground, 2 table, 1 object segment per sequence
        assert!((model.prior[2] - 0.2).abs() < 1e-12);
        for (obs, truth) in labeled_data(3, 99) {
            let pred = model.decode_path(&obs, &DecodeConfig::default()).unwrap();
            let errors = pred.iter().zip(&truth).filter(|(a, b)| a != b).count();
            assert!(errors <= 2, "{errors} errors");
        }
    }

    #[test]
    fn pooled_training_maps_blocks() {
        let mut cfg = manual_cfg(TrainingMode::Pooled);
        // hand the blocks over in shuffled order; the mapping must undo it
        cfg.manual_means = Some(MEANS.iter().map(|m| m.to_vec()).collect());
        let (model, report) = train_hierarchical(&names(), &labeled_data(6, 2), &cfg).unwrap();
        assert_eq!(report.block_of_class, Some(vec![0, 1, 2]));
        for (c, sub) in model.submodels.iter().enumerate() {
            let m = &sub.emissions[0].means[0];
            assert!(crate::kmeans::sq_dist(m, &MEANS[c]) < 0.5, "{m:?}");
        }
        for (obs, truth) in labeled_data(2, 98) {
            let pred = model.decode_path(&obs, &DecodeConfig::default()).unwrap();
            let errors = pred.iter().zip(&truth).filter(|(a, b)| a != b).count();
            assert!(errors <= 3, "{errors} errors");
        }
    }

    #[test]
    fn assignment_undoes_permutation() {
        let centers = vec![MEANS[2].to_vec(), MEANS[0].to_vec(), MEANS[1].to_vec()];
        let means: Vec<Vec<f64>> = MEANS.iter().map(|m| m.to_vec()).collect();
        assert_eq!(best_assignment(&centers, &means), vec![1, 2, 0]);
    }

    #[test]
    fn kmeans_init_trains() {
        let cfg = HierarchicalTrainingConfig {
            num_states: 2,
            init: InitStrategy::Kmeans,
            ..Default::default()
        };
        let (model, _) = train_hierarchical(&names(), &labeled_data(4, 3), &cfg).unwrap();
        model.validate().unwrap();
    }

    #[test]
    fn chains_longer_than_a_class_fail_or_learn_ends() {
        // object runs have 6 frames; an 8-state chain without skips needs 8
        let mut cfg = manual_cfg(TrainingMode::PerClass);
        cfg.num_states = 8;
        cfg.skip = 0;
        assert!(matches!(
            train_hierarchical(&names(), &labeled_data(3, 4), &cfg),
            Err(Error::InvalidParams(_))
        ));
        cfg.end_states = EndStates::Learned;
        let (model, _) = train_hierarchical(&names(), &labeled_data(3, 4), &cfg).unwrap();
        for sub in &model.submodels {
            let f = sub.final_probs.as_ref().unwrap();
            assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn any_end_leaves_no_final_distribution() {
        let mut cfg = manual_cfg(TrainingMode::PerClass);
        cfg.end_states = EndStates::Any;
        let (model, _) = train_hierarchical(&names(), &labeled_data(2, 5), &cfg).unwrap();
        assert!(model.submodels.iter().all(|m| m.final_probs.is_none()));
        cfg.end_states = EndStates::Last;
        let (model, _) = train_hierarchical(&names(), &labeled_data(2, 5), &cfg).unwrap();
        assert!(model.submodels.iter().all(|m| m.final_probs == Some(vec![0.0, 0.0, 1.0])));
    }

    #[test]
    fn missing_mean_table() {
        let cfg = HierarchicalTrainingConfig::default();
        assert!(matches!(
            train_hierarchical(&names(), &labeled_data(1, 0), &cfg),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn runs() {
        assert_eq!(label_runs(&[0, 0, 1, 1, 1, 0]), vec![(0, 0, 2), (1, 2, 5), (0, 5, 6)]);
        assert_eq!(label_runs(&[]), vec![]);
    }
}
