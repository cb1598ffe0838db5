use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use pairlearn::data::{generate_blobs, BlobParams, Features, LabeledDataset};
use pairlearn::evaluation::{self, ContingencyTable};
use pairlearn::losses::{self, enumerate_pairs};
use pairlearn::model::{self, MlpSpec};
use pairlearn::similarity::similarity_from_labels;
use pairlearn::train::{self, TrainConfig};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn flatten(rows: &[Vec<f64>]) -> PyResult<Features> {
    Features::from_rows(rows).map_err(err)
}

/// Gaussian blobs as `(rows, labels)`.
#[pyfunction]
#[pyo3(signature = (classes=4, n_per_class=500, dim=2, separation=5.0, spread=0.5, seed=1))]
fn blobs(
    classes: usize,
    n_per_class: usize,
    dim: usize,
    separation: f64,
    spread: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let params = BlobParams { classes, n_per_class, dim, separation, spread, seed };
    let d = generate_blobs(&params).map_err(err)?;
    let f = d.features();
    Ok(((0..f.len()).map(|i| f.row(i).to_vec()).collect(), d.labels().to_vec()))
}

#[pyclass(name = "Mlp", skip_from_py_object)]
#[derive(Clone)]
struct PyMlp {
    inner: model::Mlp,
}

#[pymethods]
impl PyMlp {
    #[new]
    #[pyo3(signature = (layer_sizes, seed=0))]
    fn new(layer_sizes: Vec<usize>, seed: u64) -> PyResult<Self> {
        let inner = model::Mlp::build(MlpSpec::new(layer_sizes, seed)).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: model::Mlp::load_checkpoint(path).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save_checkpoint(path).map_err(err)
    }

    #[getter]
    fn num_outputs(&self) -> usize {
        self.inner.num_outputs()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.spec().parameter_count()
    }

    /// Softmax outputs, one row per sample.
    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        self.inner.predict(flatten(&rows)?.as_slice()).map_err(err)
    }

    fn predict_nodes(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        self.inner.predict_nodes(flatten(&rows)?.as_slice()).map_err(err)
    }

    /// `(accuracy, nmi, ndc)` against ground-truth labels.
    fn evaluate(&self, rows: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<(f64, f64, usize)> {
        let classes = labels.iter().max().map_or(1, |m| m + 1);
        let e = evaluation::evaluate_model(&self.inner, flatten(&rows)?.as_slice(), &labels, classes)
            .map_err(err)?;
        Ok((e.accuracy, e.nmi, e.ndc))
    }
}

/// All unordered pairs `(i, j)`, `i < j`, of a batch.
#[pyfunction]
fn pairs(batch: usize) -> PyResult<Vec<(usize, usize)>> {
    Ok(enumerate_pairs(batch).map_err(err)?.pairs().to_vec())
}

fn label_targets(labels: &[usize]) -> PyResult<losses::PairwiseLabelSet> {
    let pairs = enumerate_pairs(labels.len()).map_err(err)?;
    similarity_from_labels(labels, &pairs).map_err(err)
}

/// Mean MCL of probability rows against the similarity implied by `labels`.
#[pyfunction]
fn mcl_loss(probs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    losses::mcl_loss_value(&probs, &label_targets(&labels)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (probs, labels, sigma=2.0))]
fn kcl_loss(probs: Vec<Vec<f64>>, labels: Vec<usize>, sigma: f64) -> PyResult<f64> {
    losses::kcl_loss_value(&probs, &label_targets(&labels)?, sigma).map_err(err)
}

#[pyfunction]
fn cross_entropy(probs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    losses::cross_entropy_value(&probs, &labels).map_err(err)
}

/// Minimum-cost assignment; entry `r` is the column given to row `r`, if any.
#[pyfunction]
fn hungarian(cost: Vec<Vec<f64>>) -> PyResult<Vec<Option<usize>>> {
    Ok(evaluation::hungarian(&cost).map_err(err)?.as_slice().to_vec())
}

#[pyfunction]
fn clustering_accuracy(counts: Vec<Vec<u64>>) -> PyResult<f64> {
    Ok(evaluation::clustering_accuracy(&ContingencyTable::new(counts).map_err(err)?))
}

#[pyfunction]
fn nmi(counts: Vec<Vec<u64>>) -> PyResult<f64> {
    Ok(evaluation::nmi(&ContingencyTable::new(counts).map_err(err)?))
}

#[pyfunction]
fn ndc(cluster_sizes: Vec<u64>) -> PyResult<usize> {
    let total = cluster_sizes.iter().sum();
    evaluation::ndc(&cluster_sizes, total, cluster_sizes.len()).map_err(err)
}

/// `(alpha, beta)` weights of the labeled and pairwise terms.
#[pyfunction]
fn ssl_weights(n_labeled: usize, n_total: usize) -> PyResult<(f64, f64)> {
    let w = train::ssl_weights(n_labeled, n_total).map_err(err)?;
    Ok((w.alpha, w.beta))
}

/// Supervised training; `config` is a JSON train section. Returns the model and per-epoch losses.
#[pyfunction]
#[pyo3(signature = (model, rows, labels, config="{}"))]
fn train_supervised(
    model: &PyMlp,
    rows: Vec<Vec<f64>>,
    labels: Vec<usize>,
    config: &str,
) -> PyResult<(PyMlp, Vec<f64>)> {
    let cfg: TrainConfig = serde_json::from_str(config).map_err(err)?;
    let data = LabeledDataset::new(flatten(&rows)?, labels).map_err(err)?;
    let outcome = train::train_supervised(model.inner.clone(), &data, &cfg).map_err(err)?;
    let losses = outcome.history.iter().map(|m| m.loss).collect();
    Ok((PyMlp { inner: outcome.model }, losses))
}

#[pymodule]
fn pypairlearn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMlp>()?;
    m.add_function(wrap_pyfunction!(blobs, m)?)?;
    m.add_function(wrap_pyfunction!(pairs, m)?)?;
    m.add_function(wrap_pyfunction!(mcl_loss, m)?)?;
    m.add_function(wrap_pyfunction!(kcl_loss, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(hungarian, m)?)?;
    m.add_function(wrap_pyfunction!(clustering_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(nmi, m)?)?;
    m.add_function(wrap_pyfunction!(ndc, m)?)?;
    m.add_function(wrap_pyfunction!(ssl_weights, m)?)?;
    m.add_function(wrap_pyfunction!(train_supervised, m)?)?;
    Ok(())
}
