//! Training loops: supervised (CE or pairwise), transfer through a similarity source, and
//! semi-supervised CE + pseudo-similarity MCL.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{Features, LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::evaluation::evaluate_model;
use crate::losses::{
    cross_entropy_loss, cross_entropy_subset, enumerate_pairs, kcl_loss, mcl_loss, PairIndexList,
    PairwiseLabelSet, SimilarityPrediction, DEFAULT_KCL_MARGIN,
};
use crate::model::Mlp;
use crate::optim::{learning_rate_at, optimizer_step, OptimizerConfig, OptimizerState};
use crate::similarity::{
    augmentation_pairs, combine_or, pair_index, pseudo_similarity, similarity_from_labels, SimilaritySource,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Ce,
    Mcl,
    Kcl,
}

impl Objective {
    pub fn is_pairwise(self) -> bool {
        self != Objective::Ce
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub objective: Objective,
    pub optimizer: OptimizerConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub seed: u64,
    /// Hinge margin, used by KCL only.
    pub sigma: f64,
    /// Semi-supervised runs start from a CE model fit on the labeled part.
    pub warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Mcl,
            optimizer: OptimizerConfig::default(),
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 60,
            decay_epochs: vec![40],
            decay_factor: 0.1,
            seed: 0,
            sigma: DEFAULT_KCL_MARGIN,
            warm_start: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || (self.objective.is_pairwise() && self.batch_size < 2) {
            return Err(Error::config(format!(
                "batch size {} is too small for {:?}",
                self.batch_size, self.objective
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return Err(Error::config(format!("invalid decay factor {}", self.decay_factor)));
        }
        if self.objective == Objective::Kcl && !(self.sigma > 0.0) {
            return Err(Error::config(format!("KCL margin must be positive, got {}", self.sigma)));
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.momentum) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::config("momentum and Adam betas must lie in [0, 1)"));
        }
        if !(o.eps > 0.0) {
            return Err(Error::config("Adam epsilon must be positive"));
        }
        Ok(())
    }

    fn learning_rate(&self, epoch: usize) -> f64 {
        learning_rate_at(self.learning_rate, &self.decay_epochs, self.decay_factor, epoch)
    }
}

/// One row of the training log. Accuracy and NMI are present when a labeled view was monitored.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub nmi: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Mlp,
    pub history: Vec<EpochMetrics>,
}

/// Labeled data scored after every epoch. Only the log reads it.
#[derive(Clone, Copy, Debug)]
pub struct Monitor<'a> {
    pub features: &'a Features,
    pub labels: &'a [usize],
    pub num_classes: usize,
}

impl<'a> Monitor<'a> {
    pub fn of(dataset: &'a LabeledDataset) -> Self {
        Self {
            features: dataset.features(),
            labels: dataset.labels(),
            num_classes: dataset.num_classes(),
        }
    }

    fn score(&self, model: &Mlp) -> Result<(f64, f64)> {
        let e = evaluate_model(model, self.features.as_slice(), self.labels, self.num_classes)?;
        Ok((e.accuracy, e.nmi))
    }
}

struct Stepper<'a> {
    config: &'a TrainConfig,
    state: OptimizerState,
}

impl<'a> Stepper<'a> {
    fn new(config: &'a TrainConfig, model: &Mlp) -> Self {
        Self {
            config,
            state: OptimizerState::new(model.params()),
        }
    }

    /// Forward, backward and one optimizer update on a row-major batch; returns the loss.
    fn step<F>(&mut self, model: &mut Mlp, x: Vec<f64>, lr: f64, loss_fn: F) -> Result<f64>
    where
        F: FnOnce(&mut Tape, Var) -> Result<Var>,
    {
        let d = model.spec().input_dim();
        let mut tape = Tape::new();
        let input = tape.constant(Tensor::matrix(x.len() / d, d, x)?);
        let params = tape.params_from(model.params());
        let out = model.forward(&mut tape, input, &params)?;
        let loss = loss_fn(&mut tape, out)?;
        let value = tape.value(loss).item();
        tape.backward(loss)?;
        let grads = tape.grads_as(&params, model.params())?;
        optimizer_step(model.params_mut(), &grads, &mut self.state, &self.config.optimizer, lr)?;
        Ok(value)
    }
}

fn check_model_data(model: &Mlp, features: &Features) -> Result<()> {
    if features.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if features.dim() != model.spec().input_dim() {
        return Err(Error::config(format!(
            "data has {} features but the model expects {}",
            features.dim(),
            model.spec().input_dim()
        )));
    }
    Ok(())
}

fn log_epoch(
    history: &mut Vec<EpochMetrics>,
    epoch: usize,
    losses: &[f64],
    model: &Mlp,
    monitor: Option<&Monitor>,
) -> Result<()> {
    let loss = if losses.is_empty() {
        f64::NAN
    } else {
        losses.iter().sum::<f64>() / losses.len() as f64
    };
    let (accuracy, nmi) = match monitor {
        Some(m) => {
            let (a, n) = m.score(model)?;
            (Some(a), Some(n))
        }
        None => (None, None),
    };
    history.push(EpochMetrics {
        epoch: epoch + 1,
        loss,
        accuracy,
        nmi,
    });
    Ok(())
}

/// Shared shuffle-and-minibatch loop. `loss_fn` receives the batch's dataset indices.
fn run_epochs<F>(
    mut model: Mlp,
    features: &Features,
    config: &TrainConfig,
    monitor: Option<&Monitor>,
    mut loss_fn: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&mut Tape, Var, &[usize]) -> Result<Var>,
{
    config.validate()?;
    check_model_data(&model, features)?;
    let min_batch = if config.objective.is_pairwise() { 2 } else { 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut stepper = Stepper::new(config, &model);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr = config.learning_rate(epoch);
        let mut losses = Vec::new();
        for batch in order.chunks(config.batch_size) {
            if batch.len() < min_batch {
                continue;
            }
            let x = features.select(batch);
            let loss = stepper.step(&mut model, x, lr, |tape, out| loss_fn(tape, out, batch))?;
            losses.push(loss);
        }
        log_epoch(&mut history, epoch, &losses, &model, monitor)?;
    }
    Ok(TrainOutcome { model, history })
}

/// Caches the pair list for each batch size seen.
#[derive(Default)]
struct PairCache(Vec<Option<PairIndexList>>);

impl PairCache {
    fn get(&mut self, batch: usize) -> Result<PairIndexList> {
        if self.0.len() <= batch {
            self.0.resize(batch + 1, None);
        }
        if self.0[batch].is_none() {
            self.0[batch] = Some(enumerate_pairs(batch)?);
        }
        Ok(self.0[batch].clone().expect("filled above"))
    }
}

fn pairwise_loss(tape: &mut Tape, out: Var, targets: &PairwiseLabelSet, config: &TrainConfig) -> Result<Var> {
    match config.objective {
        Objective::Mcl => mcl_loss(tape, out, targets),
        Objective::Kcl => kcl_loss(tape, out, targets, config.sigma),
        Objective::Ce => Err(Error::config("cross-entropy is not a pairwise objective")),
    }
}

/// Trains on class labels, either directly (CE) or through the pairs they imply (MCL, KCL).
/// The log scores the training set itself.
pub fn train_supervised(model: Mlp, dataset: &LabeledDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    if dataset.num_classes() > model.num_outputs() && config.objective == Objective::Ce {
        return Err(Error::config(format!(
            "{} classes do not fit in {} output nodes",
            dataset.num_classes(),
            model.num_outputs()
        )));
    }
    let labels = dataset.labels();
    let monitor = Monitor::of(dataset);
    let mut cache = PairCache::default();
    run_epochs(model, dataset.features(), config, Some(&monitor), |tape, out, batch| {
        let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
        if config.objective == Objective::Ce {
            return cross_entropy_loss(tape, out, &y);
        }
        let pairs = cache.get(batch.len())?;
        let targets = similarity_from_labels(&y, &pairs)?;
        pairwise_loss(tape, out, &targets, config)
    })
}

/// Trains from pairwise targets supplied per minibatch by `source`. Class labels are never read;
/// `monitor` only feeds the log.
pub fn train_transfer(
    model: Mlp,
    dataset: &UnlabeledDataset,
    source: &mut dyn SimilaritySource,
    config: &TrainConfig,
    monitor: Option<&Monitor>,
) -> Result<TrainOutcome> {
    if !config.objective.is_pairwise() {
        return Err(Error::config("transfer training needs a pairwise objective (mcl or kcl)"));
    }
    let mut cache = PairCache::default();
    run_epochs(model, dataset.features(), config, monitor, |tape, out, batch| {
        let pairs = cache.get(batch.len())?;
        let targets = source.similarity(batch, &pairs)?;
        pairwise_loss(tape, out, &targets, config)
    })
}

/// Weights of the labeled and regularization terms of the semi-supervised loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SslWeights {
    pub alpha: f64,
    pub beta: f64,
}

/// `α = n_l / (n_total + n_l)`, `β = n_total / (n_total + n_l)`.
///
/// The smaller weight is the rounded quotient and the larger one its complement, so
/// `α + β == 1` holds exactly and both stay within one ulp of their quotients.
pub fn ssl_weights(n_labeled: usize, n_total_reg: usize) -> Result<SslWeights> {
    if n_labeled == 0 || n_total_reg == 0 {
        return Err(Error::config(format!(
            "semi-supervised weights need positive counts, got {n_labeled} labeled and {n_total_reg} total"
        )));
    }
    let denom = n_total_reg as f64 + n_labeled as f64;
    let alpha = n_labeled as f64 / denom;
    let beta = n_total_reg as f64 / denom;
    if alpha + beta == 1.0 {
        return Ok(SslWeights { alpha, beta });
    }
    Ok(if alpha <= beta {
        SslWeights { alpha, beta: 1.0 - alpha }
    } else {
        SslWeights { alpha: 1.0 - beta, beta }
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SemiOptions {
    /// Std of the jitter that creates augmentation pairs; `None` disables them.
    pub augmentation_scale: Option<f64>,
    /// Length of the CE warm start; defaults to `epochs`.
    pub warm_start_epochs: Option<usize>,
}

/// Endless reshuffled stream over `0..n`.
struct Cycle {
    order: Vec<usize>,
    pos: usize,
}

impl Cycle {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn take(&mut self, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Cross-entropy on the labeled part plus MCL over every pair of each mixed minibatch.
///
/// Pair targets are ground truth where both members are labeled; elsewhere they are the
/// thresholded similarity of the current (detached) predictions, OR-fused with augmentation
/// pairs. `monitor` only feeds the log; hidden labels of `unlabeled` are never read.
pub fn train_semi_supervised(
    model: Mlp,
    labeled: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    config: &TrainConfig,
    options: &SemiOptions,
    monitor: Option<&Monitor>,
) -> Result<TrainOutcome> {
    if labeled.is_empty() {
        return Err(Error::config("semi-supervised training needs a labeled subset"));
    }
    let mut config = config.clone();
    config.objective = Objective::Mcl;
    config.validate()?;
    check_model_data(&model, labeled.features())?;
    if !unlabeled.is_empty() && unlabeled.features().dim() != labeled.features().dim() {
        return Err(Error::config("labeled and unlabeled features differ in width"));
    }
    if let Some(s) = options.augmentation_scale {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::config(format!("invalid augmentation scale {s}")));
        }
    }
    if labeled.num_classes() > model.num_outputs() {
        return Err(Error::config("more classes than output nodes"));
    }

    let mut model = model;
    if config.warm_start {
        let warm = TrainConfig {
            objective: Objective::Ce,
            epochs: options.warm_start_epochs.unwrap_or(config.epochs),
            ..config.clone()
        };
        model = train_supervised(model, labeled, &warm)?.model;
    }

    let (n_l, n_u) = (labeled.len(), unlabeled.len());
    let n = n_l + n_u;
    let weights = ssl_weights(n_l, n)?;
    let batch = config.batch_size;
    let (b_l, b_u) = if n_u == 0 {
        (batch, 0)
    } else {
        let share = ((batch * n_l) as f64 / n as f64).round() as usize;
        let b_l = share.clamp(1, n_l.min(batch - 1));
        (b_l, batch - b_l)
    };
    let steps = if n_u == 0 { n_l.div_ceil(batch) } else { n_u.div_ceil(b_u) };
    let dim = labeled.features().dim();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xA076_1D64_78BD_642F);
    let mut labeled_stream = Cycle::new(n_l);
    let mut unlabeled_order: Vec<usize> = (0..n_u).collect();
    let mut stepper = Stepper::new(&config, &model);
    let mut cache = PairCache::default();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        unlabeled_order.shuffle(&mut rng);
        let lr = config.learning_rate(epoch);
        let mut losses = Vec::new();
        for t in 0..steps {
            let l_idx = labeled_stream.take(b_l, &mut rng);
            let u_idx = if n_u == 0 {
                &[][..]
            } else {
                &unlabeled_order[t * b_u..((t + 1) * b_u).min(n_u)]
            };
            let originals = l_idx.len() + u_idx.len();
            if originals < 2 {
                continue;
            }
            let mut x = labeled.features().select(&l_idx);
            x.extend(unlabeled.features().select(u_idx));
            let mut known: Vec<Option<usize>> = l_idx.iter().map(|&i| Some(labeled.labels()[i])).collect();
            known.resize(originals, None);

            let mut aug = None;
            if let Some(scale) = options.augmentation_scale {
                let (doubled, pairs) = augmentation_pairs(&x, dim, scale, aug_rng.random())?;
                x = doubled;
                known.extend_from_within(..originals);
                aug = Some(pairs);
            }
            let rows = known.len();
            let pairs = cache.get(rows)?;
            let mut ce_labels = known.clone();
            ce_labels[originals..].iter_mut().for_each(|y| *y = None);

            let loss = stepper.step(&mut model, x, lr, |tape, out| {
                let k = tape.value(out).shape()[1];
                let probs: Vec<Vec<f64>> = tape.value(out).data().chunks(k).map(<[f64]>::to_vec).collect();
                let pseudo = pseudo_similarity(&SimilarityPrediction::from_outputs(&probs, &pairs)?)?;
                let mut targets = match &aug {
                    Some(a) => combine_or(&pseudo, a)?,
                    None => pseudo,
                };
                for &(i, j) in pairs.pairs() {
                    if let (Some(a), Some(b)) = (known[i], known[j]) {
                        targets.set(pair_index(rows, i, j), if a == b { 1.0 } else { 0.0 });
                    }
                }
                let ce = cross_entropy_subset(tape, out, &ce_labels)?;
                let mcl = mcl_loss(tape, out, &targets)?;
                let ce = tape.affine(ce, weights.alpha, 0.0)?;
                let mcl = tape.affine(mcl, weights.beta, 0.0)?;
                tape.add(ce, mcl)
            })?;
            losses.push(loss);
        }
        log_epoch(&mut history, epoch, &losses, &model, monitor)?;
    }
    Ok(TrainOutcome { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_blobs, BlobParams};
    use crate::model::MlpSpec;
    use crate::optim::OptimizerKind;
    use crate::similarity::LabelOracle;

    fn blobs(n_per_class: usize, seed: u64) -> LabeledDataset {
        generate_blobs(&BlobParams {
            classes: 4,
            n_per_class,
            dim: 2,
            separation: 5.0,
            spread: 0.5,
            seed,
        })
        .unwrap()
    }

    fn mlp(k: usize, seed: u64) -> Mlp {
        Mlp::build(MlpSpec::new(vec![2, 16, 16, k], seed)).unwrap()
    }

    fn quick(objective: Objective, epochs: usize) -> TrainConfig {
        TrainConfig {
            objective,
            epochs,
            learning_rate: 1e-2,
            decay_epochs: vec![],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn ssl_weight_examples() {
        let w = ssl_weights(100, 100).unwrap();
        assert_eq!((w.alpha, w.beta), (0.5, 0.5));
        let w = ssl_weights(4000, 50000).unwrap();
        assert!((w.alpha - 4000.0 / 54000.0).abs() < 1e-17);
        assert!((w.alpha - 0.07407).abs() < 1e-5 && (w.beta - 0.92593).abs() < 1e-5);
        assert_eq!(w.alpha + w.beta, 1.0);
        assert!(matches!(ssl_weights(0, 10), Err(Error::Config(_))));
        assert!(matches!(ssl_weights(3, 0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = blobs(20, 3);
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut cfg = quick(Objective::Mcl, 1);
            cfg.learning_rate = 0.0;
            cfg.optimizer.kind = kind;
            let m = mlp(4, 1);
            let out = train_supervised(m.clone(), &data, &cfg).unwrap();
            assert_eq!(out.model.params(), m.params());
            assert_eq!(out.history.len(), 1);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = blobs(30, 2);
        let cfg = quick(Objective::Kcl, 3);
        let a = train_supervised(mlp(4, 5), &data, &cfg).unwrap();
        let b = train_supervised(mlp(4, 5), &data, &cfg).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn mcl_loss_halves_on_blobs() {
        let data = blobs(100, 4);
        let out = train_supervised(mlp(4, 2), &data, &quick(Objective::Mcl, 20)).unwrap();
        let first = out.history.first().unwrap().loss;
        let last = out.history.last().unwrap().loss;
        assert!(last < 0.5 * first, "{first} -> {last}");
        assert!(out.history.last().unwrap().accuracy.unwrap() > 0.95);
    }

    #[test]
    fn noiseless_transfer_matches_supervised() {
        let data = blobs(25, 6);
        let cfg = quick(Objective::Mcl, 3);
        let sup = train_supervised(mlp(4, 9), &data, &cfg).unwrap();
        let mut oracle = LabelOracle::noiseless(data.labels().to_vec()).unwrap();
        let unl = data.clone().into_unlabeled();
        let tr = train_transfer(mlp(4, 9), &unl, &mut oracle, &cfg, Some(&Monitor::of(&data))).unwrap();
        assert_eq!(sup.model.params(), tr.model.params());
        assert_eq!(sup.history, tr.history);
    }

    #[test]
    fn transfer_rejects_cross_entropy() {
        let data = blobs(5, 1);
        let mut oracle = LabelOracle::noiseless(data.labels().to_vec()).unwrap();
        let unl = data.clone().into_unlabeled();
        let r = train_transfer(mlp(4, 1), &unl, &mut oracle, &quick(Objective::Ce, 1), None);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = quick(Objective::Mcl, 1);
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        cfg.objective = Objective::Ce;
        assert!(cfg.validate().is_ok());
        cfg.learning_rate = f64::NAN;
        assert!(cfg.validate().is_err());
        let parsed: Result<TrainConfig, _> = serde_json::from_str(r#"{"objective":"mcl","lr":0.1}"#);
        assert!(parsed.is_err());
        let parsed: TrainConfig = serde_json::from_str(r#"{"objective":"kcl","optimizer":{"kind":"sgd"}}"#).unwrap();
        assert_eq!(parsed.optimizer.kind, OptimizerKind::Sgd);
        assert_eq!(parsed.optimizer.momentum, 0.9);
    }

    #[test]
    fn semi_supervised_requires_labels() {
        let data = blobs(10, 1);
        let empty = data.subset(&[]);
        let unl = data.clone().into_unlabeled();
        let r = train_semi_supervised(mlp(4, 1), &empty, &unl, &quick(Objective::Mcl, 1), &SemiOptions::default(), None);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn semi_supervised_runs_with_and_without_unlabeled_data() {
        let data = blobs(25, 8);
        let (lab, rest) = data.stratified_split(0.2, 1).unwrap();
        let unl = rest.clone().into_unlabeled();
        let opts = SemiOptions {
            augmentation_scale: Some(0.1),
            warm_start_epochs: Some(2),
        };
        let cfg = quick(Objective::Mcl, 2);
        let out = train_semi_supervised(mlp(4, 3), &lab, &unl, &cfg, &opts, Some(&Monitor::of(&rest))).unwrap();
        assert_eq!(out.history.len(), 2);
        assert!(out.history.iter().all(|h| h.loss.is_finite() && h.accuracy.is_some()));
        let again = train_semi_supervised(mlp(4, 3), &lab, &unl, &cfg, &opts, None).unwrap();
        assert_eq!(out.model.params(), again.model.params());

        let all = train_semi_supervised(mlp(4, 3), &data, &data.subset(&[]).into_unlabeled(), &cfg, &opts, None)
            .unwrap();
        assert!(all.history.iter().all(|h| h.loss.is_finite()));
    }

    #[test]
    fn untrained_network_gives_finite_semi_loss() {
        // A zeroed output layer makes every prediction uniform, so no pseudo pair is similar.
        let data = blobs(10, 3);
        let (lab, rest) = data.stratified_split(0.1, 2).unwrap();
        let mut m = mlp(4, 4);
        let last = m.params().groups().len() - 2;
        for g in &mut m.params_mut().groups_mut()[last..] {
            g.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let cfg = TrainConfig {
            warm_start: false,
            learning_rate: 0.0,
            ..quick(Objective::Mcl, 1)
        };
        let out = train_semi_supervised(m, &lab, &rest.into_unlabeled(), &cfg, &SemiOptions::default(), None).unwrap();
        assert!(out.history[0].loss.is_finite());
    }

    #[test]
    fn output_permutation_is_equivariant() {
        let data = blobs(20, 5);
        let base = mlp(4, 11);
        let perm = [2usize, 0, 3, 1];
        let mut permuted = base.clone();
        let groups = permuted.params_mut().groups_mut();
        let last = groups.len() - 2;
        let (w, b) = (base.params().groups()[last].clone(), base.params().groups()[last + 1].clone());
        let width = w.shape()[1];
        for (new, &old) in perm.iter().enumerate() {
            groups[last].data_mut()[new * width..(new + 1) * width]
                .copy_from_slice(&w.data()[old * width..(old + 1) * width]);
            groups[last + 1].data_mut()[new] = b.data()[old];
        }
        let cfg = quick(Objective::Mcl, 3);
        let a = train_supervised(base, &data, &cfg).unwrap().model;
        let b = train_supervised(permuted, &data, &cfg).unwrap().model;
        let pa = a.predict(data.features().as_slice()).unwrap();
        let pb = b.predict(data.features().as_slice()).unwrap();
        for (ra, rb) in pa.iter().zip(&pb) {
            for (new, &old) in perm.iter().enumerate() {
                assert_eq!(rb[new].to_bits(), ra[old].to_bits());
            }
        }
    }
}
