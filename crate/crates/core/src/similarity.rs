//! Producers of pairwise targets: ground truth from class labels, a rate-controlled noisy
//! oracle, binarized pseudo-similarity, augmentation pairs and logical-OR fusion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::perturb;
use crate::error::{Error, Result};
use crate::losses::{enumerate_pairs, PairIndexList, PairwiseLabelSet, SimilarityPrediction};

/// Threshold above which a predicted similarity becomes a must-link.
pub const PSEUDO_THRESHOLD: f64 = 0.5;

/// Allowed gap between requested and implied precisions.
pub const PRECISION_TOLERANCE: f64 = 0.05;

/// Position of pair `(i, j)`, `i < j`, in [`enumerate_pairs`]`(batch)`.
pub fn pair_index(batch: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < batch);
    i * (2 * batch - i - 1) / 2 + (j - i - 1)
}

pub fn similarity_from_labels(labels: &[usize], pairs: &PairIndexList) -> Result<PairwiseLabelSet> {
    if labels.len() != pairs.batch_size() {
        return Err(Error::contract(format!(
            "{} labels for a batch of {}",
            labels.len(),
            pairs.batch_size()
        )));
    }
    let values = pairs
        .pairs()
        .iter()
        .map(|&(i, j)| if labels[i] == labels[j] { 1.0 } else { 0.0 })
        .collect();
    PairwiseLabelSet::dense(pairs.clone(), values)
}

/// Error rates of a simulated similarity predictor.
///
/// Noise is driven by the two recalls; precisions follow from the base rate of similar pairs.
/// Optional target precisions are checked against that base rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub similar_recall: f64,
    pub dissimilar_recall: f64,
    #[serde(default)]
    pub similar_precision: Option<f64>,
    #[serde(default)]
    pub dissimilar_precision: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn from_recalls(similar_recall: f64, dissimilar_recall: f64, seed: u64) -> Self {
        Self {
            similar_recall,
            dissimilar_recall,
            similar_precision: None,
            dissimilar_precision: None,
            seed,
        }
    }

    pub fn noiseless(seed: u64) -> Self {
        Self::from_recalls(1.0, 1.0, seed)
    }

    /// `(similar precision, dissimilar precision)` produced by the recalls at `base_rate`.
    pub fn implied_precisions(&self, base_rate: f64) -> (f64, f64) {
        let (tp, fn_) = (self.similar_recall * base_rate, (1.0 - self.similar_recall) * base_rate);
        let (tn, fp) = (
            self.dissimilar_recall * (1.0 - base_rate),
            (1.0 - self.dissimilar_recall) * (1.0 - base_rate),
        );
        let ratio = |a: f64, b: f64| if a + b > 0.0 { a / (a + b) } else { 1.0 };
        (ratio(tp, fp), ratio(tn, fn_))
    }

    /// Checks the rates against the fraction of truly similar pairs.
    pub fn validate(&self, base_rate: f64) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} = {v} is outside [0, 1]")))
            }
        };
        unit("similar recall", self.similar_recall)?;
        unit("dissimilar recall", self.dissimilar_recall)?;
        unit("base rate", base_rate)?;
        let (implied_sim, implied_dis) = self.implied_precisions(base_rate);

        if let Some(p) = self.similar_precision {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::config(format!("similar precision {p} is outside (0, 1]")));
            }
            let tp = self.similar_recall * base_rate;
            let false_pos = tp * (1.0 - p) / p;
            if false_pos > 1.0 - base_rate + 1e-12 {
                return Err(Error::config(format!(
                    "similar precision {p} needs more false must-links than there are dissimilar pairs"
                )));
            }
            if (implied_sim - p).abs() > PRECISION_TOLERANCE {
                return Err(Error::config(format!(
                    "similar precision {p} is inconsistent with the recalls at base rate {base_rate:.4} (implied {implied_sim:.4})"
                )));
            }
        }
        if let Some(p) = self.dissimilar_precision {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::config(format!("dissimilar precision {p} is outside (0, 1]")));
            }
            let tn = self.dissimilar_recall * (1.0 - base_rate);
            let false_neg = tn * (1.0 - p) / p;
            if false_neg > base_rate + 1e-12 {
                return Err(Error::config(format!(
                    "dissimilar precision {p} needs more false cannot-links than there are similar pairs"
                )));
            }
            if (implied_dis - p).abs() > PRECISION_TOLERANCE {
                return Err(Error::config(format!(
                    "dissimilar precision {p} is inconsistent with the recalls at base rate {base_rate:.4} (implied {implied_dis:.4})"
                )));
            }
        }
        Ok(())
    }
}

fn base_rate(s: &PairwiseLabelSet) -> f64 {
    let defined = s.defined_count();
    if defined == 0 {
        return 0.0;
    }
    let similar = s
        .values()
        .iter()
        .zip(s.mask())
        .filter(|(v, m)| **m && **v == 1.0)
        .count();
    similar as f64 / defined as f64
}

fn flip_with(true_s: &PairwiseLabelSet, spec: &NoiseSpec, rng: &mut impl Rng) -> Result<PairwiseLabelSet> {
    let values = true_s
        .values()
        .iter()
        .zip(true_s.mask())
        .map(|(v, m)| {
            if !*m {
                return *v;
            }
            // One draw per defined pair keeps the stream aligned regardless of labels.
            let u: f64 = rng.random();
            if *v == 1.0 {
                if u < spec.similar_recall { 1.0 } else { 0.0 }
            } else if u < spec.dissimilar_recall {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    PairwiseLabelSet::new(true_s.pair_list().clone(), values, true_s.mask().to_vec())
}

/// Reports each truly similar pair as similar with probability `similar_recall` and each
/// truly dissimilar pair as dissimilar with probability `dissimilar_recall`.
pub fn noisy_oracle(true_s: &PairwiseLabelSet, spec: &NoiseSpec) -> Result<PairwiseLabelSet> {
    if !true_s.is_binary() {
        return Err(Error::contract("the noisy oracle needs binary ground truth"));
    }
    spec.validate(base_rate(true_s))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    flip_with(true_s, spec, &mut rng)
}

/// `1` where `ŝ > 0.5`, else `0` (ties go to dissimilar). Every pair is defined.
pub fn pseudo_similarity(predictions: &SimilarityPrediction) -> Result<PairwiseLabelSet> {
    let values = predictions
        .values()
        .iter()
        .map(|s| if *s > PSEUDO_THRESHOLD { 1.0 } else { 0.0 })
        .collect();
    PairwiseLabelSet::dense(predictions.pair_list().clone(), values)
}

/// Appends a jittered copy of every row. Pairs `(i, n + i)` are defined similar; all other
/// pairs of the doubled batch are undefined.
pub fn augmentation_pairs(
    batch: &[f64],
    dim: usize,
    scale: f64,
    seed: u64,
) -> Result<(Vec<f64>, PairwiseLabelSet)> {
    if dim == 0 || batch.len() % dim != 0 || batch.is_empty() {
        return Err(Error::contract("batch must hold at least one row of width dim"));
    }
    let n = batch.len() / dim;
    let jittered = perturb(batch, scale, seed)?;
    let mut augmented = batch.to_vec();
    augmented.extend_from_slice(&jittered);
    let pairs = enumerate_pairs(2 * n)?;
    let mut values = vec![0.0; pairs.len()];
    let mut mask = vec![false; pairs.len()];
    for i in 0..n {
        let idx = pair_index(2 * n, i, n + i);
        values[idx] = 1.0;
        mask[idx] = true;
    }
    Ok((augmented, PairwiseLabelSet::new(pairs, values, mask)?))
}

/// Pairwise logical OR. A pair is defined if either input defines it; undefined counts as 0.
pub fn combine_or(a: &PairwiseLabelSet, b: &PairwiseLabelSet) -> Result<PairwiseLabelSet> {
    if a.pair_list() != b.pair_list() {
        return Err(Error::contract("combine_or needs identical pair lists"));
    }
    if !a.is_binary() || !b.is_binary() {
        return Err(Error::contract("combine_or needs binary inputs"));
    }
    let mut values = Vec::with_capacity(a.len());
    let mut mask = Vec::with_capacity(a.len());
    for idx in 0..a.len() {
        let (x, y) = (a.get(idx), b.get(idx));
        mask.push(x.is_some() || y.is_some());
        values.push(if x == Some(1.0) || y == Some(1.0) { 1.0 } else { 0.0 });
    }
    PairwiseLabelSet::new(a.pair_list().clone(), values, mask)
}

/// Source of pairwise targets for a minibatch, given the dataset indices of its members.
pub trait SimilaritySource {
    fn similarity(&mut self, indices: &[usize], pairs: &PairIndexList) -> Result<PairwiseLabelSet>;
}

/// Stand-in for a learned similarity predictor: ground truth passed through [`NoiseSpec`].
#[derive(Clone, Debug)]
pub struct LabelOracle {
    labels: Vec<usize>,
    noise: NoiseSpec,
    rng: ChaCha8Rng,
}

impl LabelOracle {
    pub fn new(labels: Vec<usize>, noise: NoiseSpec) -> Result<Self> {
        let mut counts = std::collections::HashMap::<usize, usize>::new();
        for y in &labels {
            *counts.entry(*y).or_default() += 1;
        }
        let n = labels.len() as f64;
        let similar: f64 = counts.values().map(|c| (*c as f64) * (*c as f64 - 1.0) / 2.0).sum();
        let total = n * (n - 1.0) / 2.0;
        let rate = if total > 0.0 { similar / total } else { 0.0 };
        noise.validate(rate)?;
        let rng = ChaCha8Rng::seed_from_u64(noise.seed);
        Ok(Self { labels, noise, rng })
    }

    pub fn noiseless(labels: Vec<usize>) -> Result<Self> {
        Self::new(labels, NoiseSpec::noiseless(0))
    }
}

impl SimilaritySource for LabelOracle {
    fn similarity(&mut self, indices: &[usize], pairs: &PairIndexList) -> Result<PairwiseLabelSet> {
        let labels: Vec<usize> = indices
            .iter()
            .map(|&i| {
                self.labels
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::contract(format!("oracle has no sample {i}")))
            })
            .collect::<Result<_>>()?;
        let truth = similarity_from_labels(&labels, pairs)?;
        if self.noise.similar_recall == 1.0 && self.noise.dissimilar_recall == 1.0 {
            return Ok(truth);
        }
        flip_with(&truth, &self.noise, &mut self.rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::predicted_similarity;

    fn set(values: &[f64], mask: &[bool], batch: usize) -> PairwiseLabelSet {
        PairwiseLabelSet::new(enumerate_pairs(batch).unwrap(), values.to_vec(), mask.to_vec()).unwrap()
    }

    #[test]
    fn pair_index_matches_enumeration() {
        for b in 2..9 {
            for (idx, &(i, j)) in enumerate_pairs(b).unwrap().pairs().iter().enumerate() {
                assert_eq!(pair_index(b, i, j), idx);
            }
        }
    }

    #[test]
    fn labels_to_similarity() {
        let pairs = enumerate_pairs(3).unwrap();
        let s = similarity_from_labels(&[0, 0, 1], &pairs).unwrap();
        assert_eq!(s.values(), &[1.0, 0.0, 0.0]);
        assert!(s.mask().iter().all(|m| *m));
        let s = similarity_from_labels(&[2, 2, 2], &pairs).unwrap();
        assert_eq!(s.values(), &[1.0; 3]);

        let pairs = enumerate_pairs(4).unwrap();
        let s = similarity_from_labels(&[0, 1, 2, 0], &pairs).unwrap();
        let similar: Vec<(usize, usize)> = pairs
            .pairs()
            .iter()
            .zip(s.values())
            .filter(|(_, v)| **v == 1.0)
            .map(|(p, _)| *p)
            .collect();
        assert_eq!(similar, vec![(0, 3)]);
        assert!(similarity_from_labels(&[0, 1], &pairs).is_err());
    }

    #[test]
    fn oracle_extremes() {
        let truth = similarity_from_labels(&[0, 1, 0, 2, 1], &enumerate_pairs(5).unwrap()).unwrap();
        let same = noisy_oracle(&truth, &NoiseSpec::from_recalls(1.0, 1.0, 3)).unwrap();
        assert_eq!(same, truth);
        let flipped = noisy_oracle(&truth, &NoiseSpec::from_recalls(0.0, 0.0, 3)).unwrap();
        for (a, b) in flipped.values().iter().zip(truth.values()) {
            assert_eq!(*a, 1.0 - b);
        }
    }

    #[test]
    fn oracle_recalls_match_in_frequency() {
        // 448 samples over 4 balanced classes gives 100 128 pairs.
        let labels: Vec<usize> = (0..448).map(|i| i % 4).collect();
        let pairs = enumerate_pairs(labels.len()).unwrap();
        assert!(pairs.len() >= 100_000);
        let truth = similarity_from_labels(&labels, &pairs).unwrap();
        let noisy = noisy_oracle(&truth, &NoiseSpec::from_recalls(0.655, 0.992, 5)).unwrap();
        let (mut sim, mut sim_kept, mut dis, mut dis_kept) = (0usize, 0usize, 0usize, 0usize);
        for (t, n) in truth.values().iter().zip(noisy.values()) {
            if *t == 1.0 {
                sim += 1;
                sim_kept += usize::from(*n == 1.0);
            } else {
                dis += 1;
                dis_kept += usize::from(*n == 0.0);
            }
        }
        assert!((sim_kept as f64 / sim as f64 - 0.655).abs() < 0.01);
        assert!((dis_kept as f64 / dis as f64 - 0.992).abs() < 0.01);
        // Deterministic under a fixed seed.
        assert_eq!(noisy, noisy_oracle(&truth, &NoiseSpec::from_recalls(0.655, 0.992, 5)).unwrap());
    }

    #[test]
    fn oracle_precision_checks() {
        let mut spec = NoiseSpec::from_recalls(0.655, 0.992, 0);
        let (ps, pd) = spec.implied_precisions(0.25);
        spec.similar_precision = Some(ps);
        spec.dissimilar_precision = Some(pd);
        assert!(spec.validate(0.25).is_ok());
        // Precisions measured on a different base rate do not fit this one.
        spec.similar_precision = Some(0.812);
        assert!(matches!(spec.validate(0.25), Err(Error::Config(_))));
        // A precision demanding more false positives than dissimilar pairs exist.
        let impossible = NoiseSpec {
            similar_precision: Some(0.05),
            ..NoiseSpec::from_recalls(1.0, 0.0, 0)
        };
        assert!(matches!(impossible.validate(0.9), Err(Error::Config(_))));
        assert!(NoiseSpec::from_recalls(1.2, 1.0, 0).validate(0.5).is_err());
    }

    #[test]
    fn pseudo_threshold() {
        let pairs = enumerate_pairs(4).unwrap();
        let pred = SimilarityPrediction::new(pairs, vec![0.74, 0.5, 0.0, 0.500001, 1.0, 0.2]).unwrap();
        let s = pseudo_similarity(&pred).unwrap();
        assert_eq!(s.values(), &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(s.defined_count(), 6);
    }

    #[test]
    fn confident_self_similarity_is_pseudo_positive() {
        for p in [vec![0.71, 0.29], vec![0.8, 0.1, 0.1], vec![0.75, 0.05, 0.1, 0.1]] {
            let s = predicted_similarity(&p, &p).unwrap();
            let pairs = enumerate_pairs(2).unwrap();
            let pred = SimilarityPrediction::new(pairs, vec![s]).unwrap();
            assert_eq!(pseudo_similarity(&pred).unwrap().values(), &[1.0]);
        }
    }

    #[test]
    fn augmentation_examples() {
        let batch = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let (aug, s) = augmentation_pairs(&batch, 2, 0.0, 1).unwrap();
        assert_eq!(aug.len(), 12);
        assert_eq!(&aug[6..], &batch[..]);
        assert_eq!(s.pair_list().batch_size(), 6);
        assert_eq!(s.defined_count(), 3);
        let defined: Vec<(usize, usize)> = s
            .pair_list()
            .pairs()
            .iter()
            .zip(s.mask())
            .filter(|(_, m)| **m)
            .map(|(p, _)| *p)
            .collect();
        assert_eq!(defined, vec![(0, 3), (1, 4), (2, 5)]);
        assert!(s.values().iter().zip(s.mask()).all(|(v, m)| !*m || *v == 1.0));
        let (jittered, _) = augmentation_pairs(&batch, 2, 0.5, 1).unwrap();
        assert_ne!(&jittered[6..], &batch[..]);
    }

    #[test]
    fn or_examples() {
        let zeros = set(&[0.0; 3], &[true; 3], 3);
        assert_eq!(combine_or(&zeros, &zeros).unwrap().values(), &[0.0; 3]);

        let a = set(&[1.0], &[true], 2);
        let b = set(&[0.0], &[false], 2);
        let c = combine_or(&a, &b).unwrap();
        assert_eq!((c.values(), c.mask()), (&[1.0][..], &[true][..]));

        let a = set(&[1.0, 0.0, 0.0], &[true, true, false], 3);
        let b = set(&[0.0, 1.0, 0.0], &[true, true, false], 3);
        let c = combine_or(&a, &b).unwrap();
        assert_eq!(&c.values()[..2], &[1.0, 1.0]);
        assert_eq!(c.mask(), &[true, true, false]);

        assert!(combine_or(&a, &set(&[0.0], &[true], 2)).is_err());
        assert!(combine_or(&a, &set(&[0.5, 0.0, 0.0], &[true; 3], 3)).is_err());
    }

    #[test]
    fn label_oracle_noiseless_is_ground_truth() {
        let labels = vec![0, 1, 1, 2, 0, 2];
        let mut oracle = LabelOracle::noiseless(labels.clone()).unwrap();
        let pairs = enumerate_pairs(3).unwrap();
        let got = oracle.similarity(&[4, 0, 2], &pairs).unwrap();
        assert_eq!(got, similarity_from_labels(&[0, 0, 1], &pairs).unwrap());
        assert!(oracle.similarity(&[9, 0, 1], &pairs).is_err());
    }
}
