//! Baseline classifiers and the macro-F1 metric.
//!
//! Labels are class indices into an ordered class list.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::{kmeans, nearest_centroid, KMeansFit};

/// Frame-wise classifier over logit-space frames.
pub trait Classifier {
    /// Labels for one sequence. `stream` distinguishes sequences for
    /// randomized classifiers so results do not depend on call order.
    fn predict(&self, frames: &[Vec<f64>], stream: u64) -> Vec<usize>;
}

fn class_counts(labels: &[usize], num_classes: usize) -> Result<Vec<usize>> {
    if labels.is_empty() {
        return Err(Error::invalid("training labels are empty"));
    }
    let mut counts = vec![0; num_classes];
    for &l in labels {
        *counts.get_mut(l).ok_or_else(|| Error::UnknownClass(format!("class index {l}")))? += 1;
    }
    Ok(counts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MajorityClassifier {
    pub class: usize,
}

impl MajorityClassifier {
    /// Most frequent training class; ties go to the lexicographically smaller name.
    pub fn fit<S: AsRef<str>>(train_labels: &[usize], classes: &[S]) -> Result<Self> {
        let counts = class_counts(train_labels, classes.len())?;
        let mut best = 0;
        for c in 1..classes.len() {
            let more = counts[c] > counts[best];
            let tie = counts[c] == counts[best] && classes[c].as_ref() < classes[best].as_ref();
            if more || tie {
                best = c;
            }
        }
        Ok(MajorityClassifier { class: best })
    }
}

impl Classifier for MajorityClassifier {
    fn predict(&self, frames: &[Vec<f64>], _stream: u64) -> Vec<usize> {
        vec![self.class; frames.len()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomClassifier {
    /// Empirical class distribution of the training labels.
    pub distribution: Vec<f64>,
    pub seed: u64,
}

impl RandomClassifier {
    pub fn fit(train_labels: &[usize], num_classes: usize, seed: u64) -> Result<Self> {
        let counts = class_counts(train_labels, num_classes)?;
        let n = train_labels.len() as f64;
        Ok(RandomClassifier {
            distribution: counts.into_iter().map(|c| c as f64 / n).collect(),
            seed,
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        let mut u: f64 = rng.random();
        for (c, &p) in self.distribution.iter().enumerate() {
            if u < p {
                return c;
            }
            u -= p;
        }
        self.distribution.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

impl Classifier for RandomClassifier {
    fn predict(&self, frames: &[Vec<f64>], stream: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        frames.iter().map(|_| self.draw(&mut rng)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansClassifier {
    pub centroids: Vec<Vec<f64>>,
    /// Majority training label of each cluster.
    pub cluster_labels: Vec<usize>,
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

impl KMeansClassifier {
    pub fn fit(
        train_frames: &[Vec<f64>],
        train_labels: &[usize],
        num_classes: usize,
        k: usize,
        seed: u64,
    ) -> Result<Self> {
        if train_frames.len() != train_labels.len() {
            return Err(Error::invalid(format!(
                "{} training frames but {} labels",
                train_frames.len(),
                train_labels.len()
            )));
        }
        let overall = class_counts(train_labels, num_classes)?;
        if k < num_classes {
            return Err(Error::invalid(format!(
                "k = {k} is smaller than the {num_classes} classes"
            )));
        }
        if k > train_frames.len() {
            return Err(Error::invalid(format!(
                "k = {k} exceeds the {} training frames",
                train_frames.len()
            )));
        }
        let KMeansFit {
            centroids,
            labels,
            objective_trace,
        } = kmeans(train_frames, k, 300, seed)?;
        let mut votes = vec![vec![0usize; num_classes]; k];
        for (&cluster, &label) in labels.iter().zip(train_labels) {
            votes[cluster][label] += 1;
        }
        let fallback = argmax(&overall);
        let cluster_labels = votes
            .iter()
            .map(|v| if v.iter().all(|&n| n == 0) { fallback } else { argmax(v) })
            .collect();
        Ok(KMeansClassifier {
            centroids,
            cluster_labels,
            objective_trace,
        })
    }
}

/// First index of the maximum.
fn argmax(v: &[usize]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl Classifier for KMeansClassifier {
    fn predict(&self, frames: &[Vec<f64>], _stream: u64) -> Vec<usize> {
        frames
            .iter()
            .map(|f| self.cluster_labels[nearest_centroid(&self.centroids, f)])
            .collect()
    }
}

/// Rows are truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new<S: AsRef<str>>(classes: &[S]) -> Self {
        let n = classes.len();
        ConfusionMatrix {
            classes: classes.iter().map(|s| s.as_ref().to_string()).collect(),
            counts: vec![vec![0; n]; n],
        }
    }

    /// Add index-labeled frames.
    pub fn add(&mut self, truth: &[usize], predictions: &[usize]) -> Result<()> {
        check_lengths(truth.len(), predictions.len())?;
        let n = self.classes.len();
        if let Some(&bad) = truth.iter().chain(predictions).find(|&&l| l >= n) {
            return Err(Error::invalid(format!("label index {bad} is outside the {n} classes")));
        }
        for (&t, &p) in truth.iter().zip(predictions) {
            self.counts[t][p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::invalid("confusion matrices have different class lists"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Per-class F1; a class with no truth and no predictions scores 0.
    pub fn per_class_f1(&self) -> Vec<f64> {
        let n = self.classes.len();
        (0..n)
            .map(|c| {
                let tp = self.counts[c][c] as f64;
                let truth: u64 = self.counts[c].iter().sum();
                let pred: u64 = (0..n).map(|r| self.counts[r][c]).sum();
                if truth == 0 && pred == 0 {
                    log::warn!("class {:?} absent from truth and predictions; F1 set to 0", self.classes[c]);
                    return 0.0;
                }
                // 2PR / (P + R) == 2 TP / (|truth| + |pred|)
                2.0 * tp / (truth + pred) as f64
            })
            .collect()
    }

    pub fn macro_f1(&self) -> f64 {
        let f = self.per_class_f1();
        if f.is_empty() {
            return 0.0;
        }
        f.iter().sum::<f64>() / f.len() as f64
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!(
            "truth has {a} labels but predictions have {b}"
        )));
    }
    Ok(())
}

fn indices<T: PartialEq>(labels: &[T], classes: &[T]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|l| {
            classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| Error::invalid("label is not one of the classes"))
        })
        .collect()
}

pub fn confusion<T: PartialEq + AsRef<str>>(truth: &[T], predictions: &[T], classes: &[T]) -> Result<ConfusionMatrix> {
    check_lengths(truth.len(), predictions.len())?;
    let mut m = ConfusionMatrix::new(classes);
    m.add(&indices(truth, classes)?, &indices(predictions, classes)?)?;
    Ok(m)
}

/// Unweighted mean of per-class F1, computed directly from the label lists.
pub fn macro_f1<T: PartialEq>(truth: &[T], predictions: &[T], classes: &[T]) -> Result<f64> {
    check_lengths(truth.len(), predictions.len())?;
    let t = indices(truth, classes)?;
    let p = indices(predictions, classes)?;
    if classes.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for c in 0..classes.len() {
        let tp = t.iter().zip(&p).filter(|(&a, &b)| a == c && b == c).count() as f64;
        let n_truth = t.iter().filter(|&&a| a == c).count() as f64;
        let n_pred = p.iter().filter(|&&b| b == c).count() as f64;
        if n_truth == 0.0 && n_pred == 0.0 {
            log::warn!("class {c} absent from truth and predictions; F1 set to 0");
            continue;
        }
        let precision = if n_pred > 0.0 { tp / n_pred } else { 0.0 };
        let recall = if n_truth > 0.0 { tp / n_truth } else { 0.0 };
        if precision + recall > 0.0 {
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(total / classes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn majority_picks_most_frequent() {
        let m = MajorityClassifier::fit(&[0, 0, 1], &["a", "b"]).unwrap();
        assert_eq!(m.predict(&vec![vec![0.0]; 4], 0), vec![0; 4]);
    }

    #[test]
    fn majority_ties_by_name() {
        let m = MajorityClassifier::fit(&[0, 1, 1, 0], &["table", "ground"]).unwrap();
        assert_eq!(m.class, 1);
    }

    #[test]
    fn empty_training_is_rejected() {
        assert!(matches!(MajorityClassifier::fit(&[], &["a"]), Err(Error::InvalidParams(_))));
        assert!(matches!(RandomClassifier::fit(&[], 2, 0), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn constant_predictor_on_balanced_labels() {
        let truth = ["a", "a", "b", "b", "c", "c"];
        let pred = ["a"; 6];
        let f = macro_f1(&truth, &pred, &["a", "b", "c"]).unwrap();
        // class a: P = 1/3, R = 1, F1 = 1/2; the others score 0
        assert!((f - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn random_single_class_is_constant() {
        let r = RandomClassifier::fit(&[2, 2, 2], 3, 9).unwrap();
        assert_eq!(r.predict(&vec![vec![0.0]; 50], 0), vec![2; 50]);
    }

    #[test]
    fn random_frequencies_match_training() {
        let r = RandomClassifier::fit(&[0, 1, 2], 3, 4).unwrap();
        let p = r.predict(&vec![vec![0.0]; 10_000], 0);
        for c in 0..3 {
            let freq = p.iter().filter(|&&x| x == c).count() as f64 / 1e4;
            assert!((freq - 1.0 / 3.0).abs() < 0.02, "{freq}");
        }
        assert_eq!(p, r.predict(&vec![vec![0.0]; 10_000], 0));
        assert_ne!(p, r.predict(&vec![vec![0.0]; 10_000], 1));
    }

    #[test]
    fn kmeans_separable_blobs() {
        let centers = [[-4.0, 0.0], [4.0, 0.0], [0.0, 5.0]];
        let mut frames = Vec::new();
        let mut labels = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for i in 0..30 {
                let d = (i % 7) as f64 * 0.05 - 0.15;
                frames.push(vec![ctr[0] + d, ctr[1] - d]);
                labels.push(c);
            }
        }
        let k = KMeansClassifier::fit(&frames, &labels, 3, 3, 1).unwrap();
        let test: Vec<Vec<f64>> = centers.iter().map(|c| c.to_vec()).collect();
        assert_eq!(k.predict(&test, 0), vec![0, 1, 2]);
        for w in k.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        assert!(KMeansClassifier::fit(&frames[..2], &labels[..2], 3, 3, 1).is_err());
        assert!(KMeansClassifier::fit(&frames, &labels, 3, 2, 1).is_err());
    }

    #[test]
    fn hand_computed_macro_f1() {
        let truth = ["a", "a", "b", "b", "c", "c"];
        let pred = ["a", "b", "b", "c", "c", "c"];
        let f = macro_f1(&truth, &pred, &["a", "b", "c"]).unwrap();
        assert!((f - (2.0 / 3.0 + 0.5 + 0.8) / 3.0).abs() < 1e-12);
        assert!((f - 0.6556).abs() < 1e-4);
    }

    #[test]
    fn perfect_and_all_wrong() {
        let t = ["x", "y", "y"];
        assert_eq!(macro_f1(&t, &t, &["x", "y"]).unwrap(), 1.0);
        assert_eq!(macro_f1(&["x", "y"], &["y", "x"], &["x", "y"]).unwrap(), 0.0);
    }

    #[test]
    fn absent_class_scores_zero() {
        let f = macro_f1(&["a", "a"], &["a", "a"], &["a", "b"]).unwrap();
        assert_eq!(f, 0.5);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(macro_f1(&["a"], &[], &["a"]), Err(Error::InvalidParams(_))));
        assert!(matches!(confusion(&["a"], &[], &["a"]), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn confusion_basics() {
        let m = confusion(&["a", "b"], &["a", "b"], &["a", "b"]).unwrap();
        assert_eq!(m.counts, vec![vec![1, 0], vec![0, 1]]);
        let one = confusion(&["b"], &["a"], &["a", "b"]).unwrap();
        assert_eq!(one.total(), 1);
        assert_eq!(one.counts[1][0], 1);
    }

    const NAMES: [&str; 4] = ["p", "q", "r", "s"];

    fn labels(n: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (1..n).prop_flat_map(|len| (prop::collection::vec(0..4usize, len), prop::collection::vec(0..4usize, len)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn matrix_f1_matches_direct((t, p) in labels(60)) {
            let tn: Vec<&str> = t.iter().map(|&i| NAMES[i]).collect();
            let pn: Vec<&str> = p.iter().map(|&i| NAMES[i]).collect();
            let direct = macro_f1(&tn, &pn, &NAMES).unwrap();
            let m = confusion(&tn, &pn, &NAMES).unwrap();
            prop_assert_eq!(m.total(), t.len() as u64);
            prop_assert!((m.macro_f1() - direct).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&direct));
        }

        #[test]
        fn relabeling_invariance((t, p) in labels(60), perm in Just([0usize, 1, 2, 3]).prop_shuffle()) {
            let tn: Vec<&str> = t.iter().map(|&i| NAMES[i]).collect();
            let pn: Vec<&str> = p.iter().map(|&i| NAMES[i]).collect();
            let tr: Vec<&str> = t.iter().map(|&i| NAMES[perm[i]]).collect();
            let pr: Vec<&str> = p.iter().map(|&i| NAMES[perm[i]]).collect();
            let a = macro_f1(&tn, &pn, &NAMES).unwrap();
            let b = macro_f1(&tr, &pr, &NAMES).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn one_iff_equal_when_all_present(t in prop::collection::vec(0..4usize, 4..40), flip in 0..40usize) {
            let mut t = t;
            t[..4].copy_from_slice(&[0, 1, 2, 3]);
            let tn: Vec<&str> = t.iter().map(|&i| NAMES[i]).collect();
            prop_assert_eq!(macro_f1(&tn, &tn, &NAMES).unwrap(), 1.0);
            let mut pn = tn.clone();
            let i = flip % pn.len();
            pn[i] = if pn[i] == "p" { "q" } else { "p" };
            prop_assert!(macro_f1(&tn, &pn, &NAMES).unwrap() < 1.0);
        }
    }
}
