//! Strict JSON experiment configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::BlobParams;
use crate::error::{Error, Result};
use crate::landscape::{GridSpec, ProjectionMethod};
use crate::model::MlpSpec;
use crate::similarity::NoiseSpec;
use crate::train::{Objective, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    #[default]
    Supervised,
    Transfer,
    Semi,
}

/// Generated blobs or a CSV file (features, then an optional label column).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub blobs: Option<BlobParams>,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "yes")]
    pub has_labels: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimilarityConfig {
    /// Error rates of the simulated similarity predictor used by transfer runs.
    pub noise: Option<NoiseSpec>,
    /// Share of the data whose labels semi-supervised runs may use.
    pub labeled_fraction: Option<f64>,
    pub augmentation_scale: Option<f64>,
    pub warm_start_epochs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub surface: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dataset: "dataset.csv".into(),
            checkpoint: "model.ckpt".into(),
            metrics: "metrics.csv".into(),
            surface: "surface.csv".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Expected number of output nodes; checked against the model.
    pub k: Option<usize>,
    pub report_ndc: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: None,
            report_ndc: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandscapeConfig {
    pub method: ProjectionMethod,
    /// One checkpoint for random directions; origin and two others for mutual ones.
    pub checkpoints: Vec<PathBuf>,
    pub loss: Objective,
    pub sigma: f64,
    pub grid: GridSpec,
    pub seed: u64,
    /// Write `ln(loss)` instead of the loss.
    pub log_scale: bool,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            method: ProjectionMethod::Random,
            checkpoints: Vec::new(),
            loss: Objective::Mcl,
            sigma: crate::losses::DEFAULT_KCL_MARGIN,
            grid: GridSpec::default(),
            seed: 0,
            log_scale: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub model: Option<MlpSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub paradigm: Paradigm,
    #[serde(default)]
    pub similarity: SimilarityConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub landscape: LandscapeConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("invalid experiment config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Replaces every seed in the document.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(b) = self.data.as_mut().and_then(|d| d.blobs.as_mut()) {
            b.seed = seed;
        }
        if let Some(m) = self.model.as_mut() {
            m.seed = seed;
        }
        if let Some(n) = self.similarity.noise.as_mut() {
            n.seed = seed;
        }
        self.train.seed = seed;
        self.landscape.seed = seed;
    }

    pub fn data(&self) -> Result<&DataConfig> {
        let data = self.data.as_ref().ok_or_else(|| Error::config("missing data section"))?;
        match (&data.blobs, &data.path) {
            (Some(_), None) | (None, Some(_)) => Ok(data),
            _ => Err(Error::config("data needs exactly one of blobs and path")),
        }
    }

    pub fn model(&self) -> Result<&MlpSpec> {
        self.model.as_ref().ok_or_else(|| Error::config("missing model section"))
    }

    /// Objective/paradigm combinations that make sense.
    pub fn validate_training(&self) -> Result<()> {
        self.train.validate()?;
        match self.paradigm {
            Paradigm::Transfer if self.train.objective == Objective::Ce => {
                Err(Error::config("transfer training needs a pairwise objective (mcl or kcl)"))
            }
            Paradigm::Semi => match self.similarity.labeled_fraction {
                Some(f) if f > 0.0 && f <= 1.0 => Ok(()),
                Some(f) => Err(Error::config(format!("labeled fraction {f} is outside (0, 1]"))),
                None => Err(Error::config("semi-supervised training needs similarity.labeled_fraction")),
            },
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_and_strict() {
        let c = ExperimentConfig::parse(r#"{"data":{"blobs":{}},"model":{"layer_sizes":[2,8,4],"seed":3}}"#).unwrap();
        assert_eq!(c.data().unwrap().blobs.as_ref().unwrap().n_per_class, 500);
        assert_eq!(c.paradigm, Paradigm::Supervised);
        assert_eq!(c.landscape.grid.resolution, 91);
        assert!(matches!(ExperimentConfig::parse(r#"{"trian":{}}"#), Err(Error::Config(_))));
        assert!(ExperimentConfig::parse(r#"{"train":{"epochs":3,"extra":1}}"#).is_err());
        assert!(ExperimentConfig::parse(r#"{"landscape":{"grid":{"res":3}}}"#).is_err());
    }

    #[test]
    fn data_section_needs_one_source() {
        let c = ExperimentConfig::parse(r#"{"data":{"blobs":{},"path":"x.csv"}}"#).unwrap();
        assert!(c.data().is_err());
        let c = ExperimentConfig::parse(r#"{}"#).unwrap();
        assert!(c.data().is_err());
        assert!(c.model().is_err());
    }

    #[test]
    fn paradigm_checks() {
        let c = ExperimentConfig::parse(r#"{"paradigm":"transfer","train":{"objective":"ce"}}"#).unwrap();
        assert!(matches!(c.validate_training(), Err(Error::Config(_))));
        let c = ExperimentConfig::parse(r#"{"paradigm":"semi"}"#).unwrap();
        assert!(matches!(c.validate_training(), Err(Error::Config(_))));
        let c = ExperimentConfig::parse(r#"{"paradigm":"semi","similarity":{"labeled_fraction":0.02}}"#).unwrap();
        assert!(c.validate_training().is_ok());
    }

    #[test]
    fn seed_override_reaches_every_section() {
        let mut c = ExperimentConfig::parse(
            r#"{"data":{"blobs":{"seed":1}},"model":{"layer_sizes":[2,4],"seed":2},
                "similarity":{"noise":{"similar_recall":0.9,"dissimilar_recall":0.9,"seed":4}}}"#,
        )
        .unwrap();
        c.override_seed(77);
        assert_eq!(c.data.as_ref().unwrap().blobs.as_ref().unwrap().seed, 77);
        assert_eq!(c.model.as_ref().unwrap().seed, 77);
        assert_eq!(c.similarity.noise.as_ref().unwrap().seed, 77);
        assert_eq!((c.train.seed, c.landscape.seed), (77, 77));
    }
}
