//! Pair enumeration and the three training criteria: the meta-classification loss (binary
//! cross-entropy on predicted pair similarity), the KL-divergence contrastive baseline, and
//! multi-class cross-entropy.

use std::sync::Arc;

use crate::autodiff::{order_free_dot, order_free_sum, Tape, Var};
use crate::error::{Error, Result};

/// Clamp applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-7;

/// Default hinge margin of the contrastive baseline.
pub const DEFAULT_KCL_MARGIN: f64 = 2.0;

/// All unordered pairs `(i, j)`, `i < j`, of a batch, in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairIndexList {
    batch: usize,
    pairs: Arc<[(usize, usize)]>,
}

impl PairIndexList {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn shared(&self) -> Arc<[(usize, usize)]> {
        Arc::clone(&self.pairs)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn enumerate_pairs(batch: usize) -> Result<PairIndexList> {
    if batch < 2 {
        return Err(Error::contract(format!("pair enumeration needs at least 2 samples, got {batch}")));
    }
    let pairs: Vec<(usize, usize)> = (0..batch)
        .flat_map(|i| (i + 1..batch).map(move |j| (i, j)))
        .collect();
    Ok(PairIndexList {
        batch,
        pairs: pairs.into(),
    })
}

/// Pairwise targets `s_ij ∈ [0, 1]` aligned with a [`PairIndexList`], plus a defined-pair mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseLabelSet {
    pairs: PairIndexList,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl PairwiseLabelSet {
    pub fn new(pairs: PairIndexList, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != pairs.len() || mask.len() != pairs.len() {
            return Err(Error::contract(format!(
                "{} pairs but {} values and {} mask entries",
                pairs.len(),
                values.len(),
                mask.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("pair target {v} outside [0, 1]")));
        }
        Ok(Self { pairs, values, mask })
    }

    /// Every pair defined.
    pub fn dense(pairs: PairIndexList, values: Vec<f64>) -> Result<Self> {
        let mask = vec![true; values.len()];
        Self::new(pairs, values, mask)
    }

    pub fn pair_list(&self) -> &PairIndexList {
        &self.pairs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn defined_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn is_binary(&self) -> bool {
        self.values
            .iter()
            .zip(&self.mask)
            .all(|(v, m)| !*m || *v == 0.0 || *v == 1.0)
    }

    /// Value of a pair if it is defined.
    pub fn get(&self, index: usize) -> Option<f64> {
        self.mask[index].then(|| self.values[index])
    }

    /// Defined pairs and their targets, in pair order.
    fn defined(&self) -> (Vec<(usize, usize)>, Vec<f64>) {
        self.pairs
            .pairs()
            .iter()
            .zip(self.values.iter().zip(&self.mask))
            .filter(|(_, (_, m))| **m)
            .map(|(p, (v, _))| (*p, *v))
            .unzip()
    }

    pub(crate) fn set(&mut self, index: usize, value: f64) {
        self.values[index] = value;
        self.mask[index] = true;
    }
}

/// Predicted similarity `ŝ_ij` for every pair of a list.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityPrediction {
    pairs: PairIndexList,
    values: Vec<f64>,
}

impl SimilarityPrediction {
    pub fn new(pairs: PairIndexList, values: Vec<f64>) -> Result<Self> {
        if values.len() != pairs.len() {
            return Err(Error::contract("one predicted similarity per pair expected"));
        }
        Ok(Self { pairs, values })
    }

    pub fn from_outputs(outputs: &[Vec<f64>], pairs: &PairIndexList) -> Result<Self> {
        if outputs.len() != pairs.batch_size() {
            return Err(Error::contract("output rows differ from the pair list's batch size"));
        }
        let values = pairs
            .pairs()
            .iter()
            .map(|&(i, j)| predicted_similarity(&outputs[i], &outputs[j]))
            .collect::<Result<_>>()?;
        Self::new(pairs.clone(), values)
    }

    pub fn pair_list(&self) -> &PairIndexList {
        &self.pairs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Inner product of two categorical distributions.
pub fn predicted_similarity(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::contract(format!(
            "distributions of length {} and {} differ",
            p.len(),
            q.len()
        )));
    }
    Ok(order_free_dot(p, q))
}

fn check_outputs(tape: &Tape, outputs: Var, batch: usize) -> Result<usize> {
    match tape.value(outputs).shape() {
        [n, k] if *n == batch => Ok(*k),
        s => Err(Error::contract(format!(
            "outputs of shape {s:?} do not match a batch of {batch}"
        ))),
    }
}

/// Mean binary cross-entropy between targets and predicted pair similarity over defined pairs.
///
/// Soft targets in `[0, 1]` are accepted.
pub fn mcl_loss(tape: &mut Tape, outputs: Var, targets: &PairwiseLabelSet) -> Result<Var> {
    check_outputs(tape, outputs, targets.pairs.batch_size())?;
    let (pairs, s) = targets.defined();
    if pairs.is_empty() {
        return Err(Error::contract("every pair is masked out; the loss is empty"));
    }
    let m = pairs.len() as f64;
    let sim = tape.pair_dot(outputs, outputs, pairs)?;
    let sim = tape.clamp(sim, LOG_EPS, 1.0 - LOG_EPS)?;
    let log_sim = tape.log(sim)?;
    let dissim = tape.affine(sim, -1.0, 1.0)?;
    let log_dissim = tape.log(dissim)?;
    let w_pos: Vec<f64> = s.iter().map(|s| -s / m).collect();
    let w_neg: Vec<f64> = s.iter().map(|s| -(1.0 - s) / m).collect();
    let pos = tape.weighted_sum(log_sim, w_pos)?;
    let neg = tape.weighted_sum(log_dissim, w_neg)?;
    tape.add(pos, neg)
}

/// KL-divergence contrastive loss with hinge margin `sigma` on dissimilar pairs.
pub fn kcl_loss(tape: &mut Tape, outputs: Var, targets: &PairwiseLabelSet, sigma: f64) -> Result<Var> {
    if !(sigma > 0.0) {
        return Err(Error::contract(format!("KCL margin must be positive, got {sigma}")));
    }
    if !targets.is_binary() {
        return Err(Error::contract("KCL requires binary pair targets"));
    }
    check_outputs(tape, outputs, targets.pairs.batch_size())?;
    let (pairs, s) = targets.defined();
    if pairs.is_empty() {
        return Err(Error::contract("every pair is masked out; the loss is empty"));
    }
    let m = pairs.len() as f64;
    let firsts: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let seconds: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let pairs: Arc<[(usize, usize)]> = pairs.into();

    let clamped = tape.clamp(outputs, LOG_EPS, f64::INFINITY)?;
    let log_p = tape.log(clamped)?;
    let plogp = tape.mul(outputs, log_p)?;
    let neg_entropy = tape.row_sum(plogp)?;
    let cross_ij = tape.pair_dot(outputs, log_p, Arc::clone(&pairs))?;
    let cross_ji = tape.pair_dot(log_p, outputs, pairs)?;
    let h_i = tape.gather(neg_entropy, firsts)?;
    let h_j = tape.gather(neg_entropy, seconds)?;
    let kl_ij = tape.sub(h_i, cross_ij)?;
    let kl_ji = tape.sub(h_j, cross_ji)?;

    let sym = tape.add(kl_ij, kl_ji)?;
    let margin_ij = tape.affine(kl_ij, -1.0, sigma)?;
    let margin_ji = tape.affine(kl_ji, -1.0, sigma)?;
    let hinge_ij = tape.hinge(margin_ij)?;
    let hinge_ji = tape.hinge(margin_ji)?;
    let hinges = tape.add(hinge_ij, hinge_ji)?;

    let w_pos: Vec<f64> = s.iter().map(|s| s / m).collect();
    let w_neg: Vec<f64> = s.iter().map(|s| (1.0 - s) / m).collect();
    let pos = tape.weighted_sum(sym, w_pos)?;
    let neg = tape.weighted_sum(hinges, w_neg)?;
    tape.add(pos, neg)
}

/// Mean negative log-probability of each sample's label.
pub fn cross_entropy_loss(tape: &mut Tape, outputs: Var, labels: &[usize]) -> Result<Var> {
    let k = check_outputs(tape, outputs, labels.len())?;
    if labels.is_empty() {
        return Err(Error::contract("cross-entropy over an empty batch"));
    }
    if let Some(bad) = labels.iter().find(|y| **y >= k) {
        return Err(Error::contract(format!("label {bad} is not below K = {k}")));
    }
    let picked = tape.pick(outputs, labels.to_vec())?;
    let picked = tape.clamp(picked, LOG_EPS, 1.0)?;
    let logs = tape.log(picked)?;
    let mean = tape.mean(logs)?;
    tape.affine(mean, -1.0, 0.0)
}

/// Cross-entropy averaged over the rows that carry a label; unlabeled rows contribute nothing.
pub fn cross_entropy_subset(tape: &mut Tape, outputs: Var, labels: &[Option<usize>]) -> Result<Var> {
    let k = check_outputs(tape, outputs, labels.len())?;
    let labeled = labels.iter().flatten().count();
    if labeled == 0 {
        return Err(Error::contract("cross-entropy over a batch without labels"));
    }
    if let Some(bad) = labels.iter().flatten().find(|y| **y >= k) {
        return Err(Error::contract(format!("label {bad} is not below K = {k}")));
    }
    let cols: Vec<usize> = labels.iter().map(|y| y.unwrap_or(0)).collect();
    let weights: Vec<f64> = labels
        .iter()
        .map(|y| if y.is_some() { -1.0 / labeled as f64 } else { 0.0 })
        .collect();
    let picked = tape.pick(outputs, cols)?;
    let picked = tape.clamp(picked, LOG_EPS, 1.0)?;
    let logs = tape.log(picked)?;
    tape.weighted_sum(logs, weights)
}

fn check_rows(outputs: &[Vec<f64>], batch: usize) -> Result<usize> {
    let k = outputs.first().map(Vec::len).unwrap_or(0);
    if outputs.len() != batch || outputs.iter().any(|r| r.len() != k) {
        return Err(Error::contract(format!(
            "{} output rows (ragged or not matching a batch of {batch})",
            outputs.len()
        )));
    }
    Ok(k)
}

/// Order-free inner product with the width fixed at compile time; `K = 0` means dynamic.
#[inline(always)]
fn dot<const K: usize>(p: &[f64], q: &[f64]) -> f64 {
    if K == 0 {
        return order_free_dot(p, q);
    }
    let mut terms = [0.0; K];
    for (t, (a, b)) in terms.iter_mut().zip(p.iter().zip(q)) {
        *t = a * b;
    }
    order_free_sum(&mut terms)
}

/// Calls `$f::<K>(args)` with `K` equal to the row width when it is small, else `K = 0`.
macro_rules! by_width {
    ($k:expr, $f:ident($($arg:expr),*)) => {
        match $k {
            2 => $f::<2>($($arg),*),
            3 => $f::<3>($($arg),*),
            4 => $f::<4>($($arg),*),
            5 => $f::<5>($($arg),*),
            6 => $f::<6>($($arg),*),
            8 => $f::<8>($($arg),*),
            10 => $f::<10>($($arg),*),
            _ => $f::<0>($($arg),*),
        }
    };
}

/// Sum of per-pair terms over every pair `(i, j)`, `i < j`, of `n` rows in enumeration order,
/// and the number of pairs that produced a term. The closure receives the pair's index.
#[inline(always)]
fn sum_over_pairs(n: usize, mut term: impl FnMut(usize, usize, usize) -> Option<f64>) -> (f64, usize) {
    let (mut total, mut count, mut idx) = (0.0, 0, 0);
    for i in 0..n {
        for j in i + 1..n {
            if let Some(v) = term(idx, i, j) {
                total += v;
                count += 1;
            }
            idx += 1;
        }
    }
    (total, count)
}

fn mcl_kernel<const K: usize>(
    probs: &[f64],
    k: usize,
    target: &dyn Fn(usize, usize, usize) -> Option<f64>,
) -> (f64, usize) {
    let row = |i: usize| &probs[i * k..(i + 1) * k];
    sum_over_pairs(probs.len() / k, |idx, i, j| {
        let t = target(idx, i, j)?;
        let sim = dot::<K>(row(i), row(j)).clamp(LOG_EPS, 1.0 - LOG_EPS);
        Some(if t == 0.0 || t == 1.0 {
            // One logarithm per hard target.
            -if t == 1.0 { sim } else { 1.0 - sim }.ln()
        } else {
            -(t * sim.ln() + (1.0 - t) * (1.0 - sim).ln())
        })
    })
}

/// Mean MCL over all pairs of row-major `[n, k]` probabilities; `target` yields `None` for
/// undefined pairs.
pub(crate) fn mcl_all_pairs(
    probs: &[f64],
    k: usize,
    target: impl Fn(usize, usize, usize) -> Option<f64>,
) -> Result<f64> {
    let (total, m) = by_width!(k, mcl_kernel(probs, k, &target));
    if m == 0 {
        return Err(Error::contract("every pair is masked out; the loss is empty"));
    }
    Ok(total / m as f64)
}

fn kcl_kernel<const K: usize>(
    probs: &[f64],
    k: usize,
    sigma: f64,
    target: &dyn Fn(usize, usize, usize) -> Option<bool>,
) -> (f64, usize) {
    let n = probs.len() / k;
    let logs: Vec<f64> = probs.iter().map(|p| p.max(LOG_EPS).ln()).collect();
    let p = |i: usize| &probs[i * k..(i + 1) * k];
    let l = |i: usize| &logs[i * k..(i + 1) * k];
    let neg_entropy: Vec<f64> = (0..n).map(|i| dot::<K>(p(i), l(i))).collect();
    sum_over_pairs(n, |idx, i, j| {
        let similar = target(idx, i, j)?;
        let kl_ij = neg_entropy[i] - dot::<K>(p(i), l(j));
        let kl_ji = neg_entropy[j] - dot::<K>(l(i), p(j));
        Some(if similar {
            kl_ij + kl_ji
        } else {
            (sigma - kl_ij).max(0.0) + (sigma - kl_ji).max(0.0)
        })
    })
}

/// Mean KCL over all pairs of row-major `[n, k]` probabilities; see [`mcl_all_pairs`].
pub(crate) fn kcl_all_pairs(
    probs: &[f64],
    k: usize,
    sigma: f64,
    target: impl Fn(usize, usize, usize) -> Option<bool>,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::contract(format!("KCL margin must be positive, got {sigma}")));
    }
    let (total, m) = by_width!(k, kcl_kernel(probs, k, sigma, &target));
    if m == 0 {
        return Err(Error::contract("every pair is masked out; the loss is empty"));
    }
    Ok(total / m as f64)
}

/// [`mcl_loss`] on plain probability rows, computed directly without recording a tape.
pub fn mcl_loss_value(outputs: &[Vec<f64>], targets: &PairwiseLabelSet) -> Result<f64> {
    let k = check_rows(outputs, targets.pairs.batch_size())?;
    mcl_all_pairs(&outputs.concat(), k.max(1), |idx, _, _| targets.get(idx))
}

/// [`kcl_loss`] on plain probability rows, computed directly without recording a tape.
pub fn kcl_loss_value(outputs: &[Vec<f64>], targets: &PairwiseLabelSet, sigma: f64) -> Result<f64> {
    if !targets.is_binary() {
        return Err(Error::contract("KCL requires binary pair targets"));
    }
    let k = check_rows(outputs, targets.pairs.batch_size())?;
    kcl_all_pairs(&outputs.concat(), k.max(1), sigma, |idx, _, _| {
        targets.get(idx).map(|t| t == 1.0)
    })
}

/// [`cross_entropy_loss`] on plain probability rows.
pub fn cross_entropy_value(outputs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let k = check_rows(outputs, labels.len())?;
    if labels.is_empty() {
        return Err(Error::contract("cross-entropy over an empty batch"));
    }
    if let Some(bad) = labels.iter().find(|y| **y >= k) {
        return Err(Error::contract(format!("label {bad} is not below K = {k}")));
    }
    let total: f64 = outputs
        .iter()
        .zip(labels)
        .map(|(row, &y)| row[y].clamp(LOG_EPS, 1.0).ln())
        .sum();
    Ok(-(total / labels.len() as f64))
}
