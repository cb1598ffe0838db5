//! Datasets, synthetic Gaussian blobs, additive jitter and the dataset CSV format.
//!
//! Dataset CSV: no header, one row per sample, feature columns followed by an optional
//! non-negative integer label. Features are written with 17 significant digits so that
//! `load(save(x))` reproduces every `f64` exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    data: Vec<f64>,
    dim: usize,
}

impl Features {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::contract("feature dimension must be positive"));
        }
        if data.len() % dim != 0 {
            return Err(Error::contract(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { data, dim })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::contract("ragged feature rows"));
        }
        Self::new(rows.concat(), dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            out.extend_from_slice(self.row(i));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    features: Features,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    /// Infers the class count as `max(label) + 1`.
    pub fn new(features: Features, labels: Vec<usize>) -> Result<Self> {
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        Self::build(features, labels, num_classes)
    }

    /// Declares `num_classes`; every class must have at least one sample.
    pub fn with_classes(features: Features, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let mut seen = vec![false; num_classes];
        for &y in &labels {
            if y >= num_classes {
                return Err(Error::contract(format!("label {y} is not below {num_classes}")));
            }
            seen[y] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::contract(format!("class {c} has no samples")));
        }
        Self::build(features, labels, num_classes)
    }

    fn build(features: Features, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::contract(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Subset keeping the parent's class count.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: Features {
                data: self.features.select(indices),
                dim: self.features.dim,
            },
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Stratified split: in every class, `round(fraction * n_c)` samples (at least one when
    /// `fraction > 0` and the class is non-empty) go to the first part.
    pub fn stratified_split(&self, fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::config(format!("split fraction {fraction} outside [0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut first = Vec::new();
        let mut second = Vec::new();
        for c in 0..self.num_classes {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            idx.shuffle(&mut rng);
            let mut take = (fraction * idx.len() as f64).round() as usize;
            if fraction > 0.0 && take == 0 && !idx.is_empty() {
                take = 1;
            }
            first.extend_from_slice(&idx[..take]);
            second.extend_from_slice(&idx[take..]);
        }
        first.sort_unstable();
        second.sort_unstable();
        Ok((self.subset(&first), self.subset(&second)))
    }

    /// Drops the labels from training view; they stay attached for evaluation only.
    pub fn into_unlabeled(self) -> UnlabeledDataset {
        UnlabeledDataset {
            features: self.features,
            hidden_labels: Some(self.labels),
        }
    }
}

/// Features without training labels. Held-out labels, when present, are only reachable through
/// [`UnlabeledDataset::hidden_labels`] and are meant for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledDataset {
    features: Features,
    hidden_labels: Option<Vec<usize>>,
}

impl UnlabeledDataset {
    pub fn new(features: Features) -> Self {
        Self {
            features,
            hidden_labels: None,
        }
    }

    pub fn with_hidden_labels(features: Features, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != features.len() {
            return Err(Error::contract("one hidden label per row expected"));
        }
        Ok(Self {
            features,
            hidden_labels: Some(labels),
        })
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn hidden_labels(&self) -> Option<&[usize]> {
        self.hidden_labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobParams {
    pub classes: usize,
    pub n_per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub spread: f64,
    pub seed: u64,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self {
            classes: 4,
            n_per_class: 500,
            dim: 2,
            separation: 5.0,
            spread: 0.5,
            seed: 1,
        }
    }
}

impl BlobParams {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("blobs need at least 2 classes"));
        }
        if self.dim == 0 {
            return Err(Error::config("blob dimension must be positive"));
        }
        if !(self.separation > 0.0) || !(self.spread > 0.0) {
            return Err(Error::config("separation and spread must be positive"));
        }
        Ok(())
    }
}

const CENTER_REPULSION_STEPS: usize = 500;

/// Class centers on the sphere of radius `separation`.
///
/// Starts from seeded random directions and runs a fixed number of pairwise repulsion steps
/// (with re-projection onto the unit sphere), which spreads the centers out evenly.
pub fn blob_centers(params: &BlobParams) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    let (c, d) = (params.classes, params.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centers: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            normalize(&mut v);
            v
        })
        .collect();
    for _ in 0..CENTER_REPULSION_STEPS {
        let mut next = centers.clone();
        for i in 0..c {
            let mut force = vec![0.0; d];
            for j in 0..c {
                if i == j {
                    continue;
                }
                let diff: Vec<f64> = centers[i].iter().zip(&centers[j]).map(|(a, b)| a - b).collect();
                let dist2 = diff.iter().map(|x| x * x).sum::<f64>().max(1e-12);
                let inv = 1.0 / (dist2 * dist2.sqrt());
                force.iter_mut().zip(&diff).for_each(|(f, x)| *f += x * inv);
            }
            next[i].iter_mut().zip(&force).for_each(|(x, f)| *x += 0.05 * f);
            normalize(&mut next[i]);
        }
        centers = next;
    }
    for v in &mut centers {
        v.iter_mut().for_each(|x| *x *= params.separation);
    }
    Ok(centers)
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    } else if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
}

/// Isotropic Gaussian blobs around [`blob_centers`], shuffled with the same seed.
pub fn generate_blobs(params: &BlobParams) -> Result<LabeledDataset> {
    let centers = blob_centers(params)?;
    let (c, n, d) = (params.classes, params.n_per_class, params.dim);
    // Separate stream for samples so that centers do not depend on n.
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let noise = Normal::new(0.0, params.spread).map_err(|e| Error::config(e.to_string()))?;
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(c * n);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..n {
            rows.push((center.iter().map(|m| m + noise.sample(&mut rng)).collect(), label));
        }
    }
    rows.shuffle(&mut rng);
    let labels = rows.iter().map(|r| r.1).collect();
    let data = rows.into_iter().flat_map(|r| r.0).collect();
    let features = Features::new(data, d)?;
    if n == 0 {
        return LabeledDataset::build(features, labels, c);
    }
    LabeledDataset::with_classes(features, labels, c)
}

/// `features + N(0, scale²)` noise from a generator seeded with `seed`.
pub fn perturb(features: &[f64], scale: f64, seed: u64) -> Result<Vec<f64>> {
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::contract(format!("perturbation scale must be a finite value >= 0, got {scale}")));
    }
    if scale == 0.0 {
        return Ok(features.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, scale).map_err(|e| Error::contract(e.to_string()))?;
    Ok(features.iter().map(|x| x + noise.sample(&mut rng)).collect())
}

/// Either kind of dataset read from CSV.
#[derive(Clone, Debug, PartialEq)]
pub enum LoadedDataset {
    Labeled(LabeledDataset),
    Unlabeled(UnlabeledDataset),
}

impl LoadedDataset {
    pub fn features(&self) -> &Features {
        match self {
            LoadedDataset::Labeled(d) => d.features(),
            LoadedDataset::Unlabeled(d) => d.features(),
        }
    }
}

pub fn load_csv_dataset(path: impl AsRef<Path>, has_label_column: bool) -> Result<LoadedDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv_dataset(&text, has_label_column)
}

pub fn parse_csv_dataset(text: &str, has_label_column: bool) -> Result<LoadedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut width: Option<usize> = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::format(Some(row), e.to_string()))?;
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::format(
                    Some(row),
                    format!("expected {w} columns, found {}", record.len()),
                ))
            }
            _ => {}
        }
        let n_features = record.len() - usize::from(has_label_column);
        if n_features == 0 {
            return Err(Error::format(Some(row), "row has no feature columns"));
        }
        for cell in record.iter().take(n_features) {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::format(Some(row), format!("non-numeric cell {cell:?}")))?;
            data.push(v);
        }
        if has_label_column {
            let cell = &record[n_features];
            let y: i64 = cell
                .parse()
                .map_err(|_| Error::format(Some(row), format!("label {cell:?} is not an integer")))?;
            if y < 0 {
                return Err(Error::format(Some(row), format!("negative label {y}")));
            }
            labels.push(y as usize);
        }
    }
    let Some(width) = width else {
        return Err(Error::format(None, "empty dataset file"));
    };
    let features = Features::new(data, width - usize::from(has_label_column))?;
    Ok(if has_label_column {
        LoadedDataset::Labeled(LabeledDataset::new(features, labels)?)
    } else {
        LoadedDataset::Unlabeled(UnlabeledDataset::new(features))
    })
}

fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn dataset_csv(features: &Features, labels: Option<&[usize]>) -> Result<String> {
    if let Some(l) = labels {
        if l.len() != features.len() {
            return Err(Error::contract("one label per row expected"));
        }
    }
    let mut out = String::new();
    for i in 0..features.len() {
        let cells: Vec<String> = features.row(i).iter().map(|x| format_f64(*x)).collect();
        out.push_str(&cells.join(","));
        if let Some(l) = labels {
            out.push(',');
            out.push_str(&l[i].to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn save_labeled_csv(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &dataset_csv(dataset.features(), Some(dataset.labels()))?)
}

pub fn save_unlabeled_csv(dataset: &UnlabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &dataset_csv(dataset.features(), None)?)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
