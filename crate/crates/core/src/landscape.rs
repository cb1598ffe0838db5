//! Loss surfaces `f(α, β) = L(θ* + αδ + βη)` over a 2-D grid, with filter-normalized random
//! directions or directions spanned by other solutions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::{cross_entropy_value, kcl_all_pairs, mcl_all_pairs};
use crate::model::Mlp;
use crate::params::ParameterVector;
use crate::train::Objective;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub resolution: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            alpha: [-1.0, 1.0],
            beta: [-1.0, 1.0],
            resolution: 91,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::config(format!("grid resolution {} is below 2", self.resolution)));
        }
        for (name, [lo, hi]) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi && lo <= 0.0 && hi >= 0.0) {
                return Err(Error::config(format!(
                    "{name} range [{lo}, {hi}] must be finite, increasing and contain 0"
                )));
            }
        }
        Ok(())
    }

    fn axis([lo, hi]: [f64; 2], resolution: usize) -> Vec<f64> {
        let last = (resolution - 1) as f64;
        (0..resolution).map(|i| lo + (hi - lo) * i as f64 / last).collect()
    }

    pub fn alphas(&self) -> Vec<f64> {
        Self::axis(self.alpha, self.resolution)
    }

    pub fn betas(&self) -> Vec<f64> {
        Self::axis(self.beta, self.resolution)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    Random,
    Mutual,
}

/// `values[i][j] = f(alphas[i], betas[j])`. Non-finite losses are stored as `+inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceResult {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub loss: Objective,
    pub method: ProjectionMethod,
    pub seed: Option<u64>,
    pub log_scale: bool,
}

impl SurfaceResult {
    /// Natural log of every value, for plotting CE on a logarithmic axis.
    pub fn log_transformed(&self) -> Self {
        let mut out = self.clone();
        if !self.log_scale {
            for row in &mut out.values {
                row.iter_mut().for_each(|v| *v = v.ln());
            }
            out.log_scale = true;
        }
        out
    }

    pub fn at(&self, alpha: f64, beta: f64) -> Option<f64> {
        let i = self.alphas.iter().position(|a| *a == alpha)?;
        let j = self.betas.iter().position(|b| *b == beta)?;
        Some(self.values[i][j])
    }
}

/// Rescales every normalization unit (weight row or bias vector) of `direction` to the norm of
/// the matching unit of `reference`. Zero units of `direction` stay zero.
pub fn filter_normalize(direction: &ParameterVector, reference: &ParameterVector) -> Result<ParameterVector> {
    direction.check_structure(reference)?;
    let mut out = direction.clone();
    for (g, r) in out.groups_mut().iter_mut().zip(reference.groups()) {
        for unit in r.units() {
            let ref_norm = norm(&r.data()[unit.clone()]);
            let d = &mut g.data_mut()[unit];
            let dir_norm = norm(d);
            if dir_norm == 0.0 {
                d.fill(0.0);
            } else {
                let factor = ref_norm / dir_norm;
                d.iter_mut().for_each(|x| *x *= factor);
            }
        }
    }
    Ok(out)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Two seeded standard-normal directions, each filter-normalized against `reference`.
pub fn random_directions(reference: &ParameterVector, seed: u64) -> Result<(ParameterVector, ParameterVector)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = reference.total_len();
    let mut draw = || -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let delta = reference.with_flat(&draw())?;
    let eta = reference.with_flat(&draw())?;
    Ok((filter_normalize(&delta, reference)?, filter_normalize(&eta, reference)?))
}

/// `δ = other1 − origin`, `η = other2 − origin`, unnormalized.
pub fn mutual_directions(
    origin: &ParameterVector,
    other1: &ParameterVector,
    other2: &ParameterVector,
) -> Result<(ParameterVector, ParameterVector)> {
    Ok((other1.sub(origin)?, other2.sub(origin)?))
}

/// Loss of a model on every sample (CE) or every pair (MCL, KCL) of a labeled dataset.
#[derive(Clone, Debug)]
pub struct DatasetLoss<'a> {
    data: &'a LabeledDataset,
    objective: Objective,
    sigma: f64,
}

impl<'a> DatasetLoss<'a> {
    pub fn new(data: &'a LabeledDataset, objective: Objective, sigma: f64) -> Result<Self> {
        if objective.is_pairwise() && data.len() < 2 {
            return Err(Error::contract("a pairwise loss needs at least 2 samples"));
        }
        if objective == Objective::Kcl && !(sigma > 0.0) {
            return Err(Error::contract(format!("KCL margin must be positive, got {sigma}")));
        }
        Ok(Self { data, objective, sigma })
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn evaluate(&self, model: &Mlp) -> Result<f64> {
        let probs = model.predict(self.data.features().as_slice())?;
        let k = model.num_outputs();
        let y = self.data.labels();
        match self.objective {
            Objective::Ce => cross_entropy_value(&probs, y),
            Objective::Mcl => mcl_all_pairs(&probs.concat(), k, |_, i, j| Some(f64::from(y[i] == y[j]))),
            Objective::Kcl => kcl_all_pairs(&probs.concat(), k, self.sigma, |_, i, j| Some(y[i] == y[j])),
        }
    }
}

fn surface<F>(model: &Mlp, grid: &GridSpec, loss: &DatasetLoss, point: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(f64, f64) -> Result<ParameterVector> + Sync,
{
    grid.validate()?;
    let (alphas, betas) = (grid.alphas(), grid.betas());
    let cells: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|a| betas.iter().map(move |b| (*a, *b)))
        .collect();
    let flat = cells
        .par_iter()
        .map(|&(a, b)| {
            let v = loss.evaluate(&model.with_params(point(a, b)?)?)?;
            Ok(if v.is_finite() { v } else { f64::INFINITY })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(flat.chunks(betas.len()).map(<[f64]>::to_vec).collect())
}

/// Evaluates the full-dataset loss at `θ* + (αδ + βη)` for every grid cell. `θ*` is not modified.
pub fn evaluate_surface(
    model: &Mlp,
    theta: &ParameterVector,
    delta: &ParameterVector,
    eta: &ParameterVector,
    grid: &GridSpec,
    loss: &DatasetLoss,
    seed: Option<u64>,
) -> Result<SurfaceResult> {
    theta.check_structure(model.params())?;
    theta.check_structure(delta)?;
    theta.check_structure(eta)?;
    let values = surface(model, grid, loss, |a, b| theta.offset(a, delta, b, eta))?;
    Ok(SurfaceResult {
        alphas: grid.alphas(),
        betas: grid.betas(),
        values,
        loss: loss.objective(),
        method: ProjectionMethod::Random,
        seed,
        log_scale: false,
    })
}

/// The surface spanned by three solutions, parameterized as
/// `(1 − α − β)·origin + (α·other1 + β·other2)`.
///
/// This equals `origin + α(other1 − origin) + β(other2 − origin)`, and reproduces each
/// solution bit-exactly at its corner.
pub fn evaluate_mutual_surface(
    model: &Mlp,
    origin: &ParameterVector,
    other1: &ParameterVector,
    other2: &ParameterVector,
    grid: &GridSpec,
    loss: &DatasetLoss,
) -> Result<SurfaceResult> {
    origin.check_structure(model.params())?;
    origin.check_structure(other1)?;
    origin.check_structure(other2)?;
    let (x, p, q) = (origin.flatten(), other1.flatten(), other2.flatten());
    let values = surface(model, grid, loss, |a, b| {
        let c = 1.0 - (a + b);
        let flat: Vec<f64> = x
            .iter()
            .zip(&p)
            .zip(&q)
            .map(|((x, p), q)| c * x + (a * p + b * q))
            .collect();
        origin.with_flat(&flat)
    })?;
    Ok(SurfaceResult {
        alphas: grid.alphas(),
        betas: grid.betas(),
        values,
        loss: loss.objective(),
        method: ProjectionMethod::Mutual,
        seed: None,
        log_scale: false,
    })
}
