//! Experiment configuration: a single JSON document describing dataset,
//! model, objective, prior, optimizer and evaluation settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::BinarizePolicy;
use crate::error::{Error, Result};
use crate::models::{Activation, LikelihoodKind};
use crate::semisup::UnlabelledMode;

fn default_lr() -> f64 {
    5e-4
}
fn default_batch() -> usize {
    100
}
fn default_epochs() -> usize {
    200
}
fn default_warmup() -> usize {
    100
}
fn default_patience() -> usize {
    100
}
fn default_is_samples() -> usize {
    100
}
fn default_knn_k() -> Vec<usize> {
    vec![3, 5, 10]
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Pinwheel {
        #[serde(default = "crate::data::pinwheel_default_n")]
        n: usize,
        #[serde(default = "crate::data::pinwheel_default_clusters")]
        clusters: usize,
        #[serde(default = "crate::data::pinwheel_default_radial_std")]
        radial_std: f64,
        #[serde(default = "crate::data::pinwheel_default_tangential_std")]
        tangential_std: f64,
        #[serde(default = "crate::data::pinwheel_default_rate")]
        rate: f64,
    },
    TwoGaussian1d {
        #[serde(default = "crate::data::two_gaussian_default_n")]
        n: usize,
    },
    Idx {
        images: PathBuf,
        labels: Option<PathBuf>,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        label_cols: Vec<usize>,
        #[serde(default)]
        has_header: bool,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataConfig {
    #[serde(flatten)]
    pub source: DatasetSpec,
    /// Train/val/test sizes; `None` splits 80/10/10.
    #[serde(default)]
    pub split: Option<(usize, usize, usize)>,
    #[serde(default = "BinarizePolicy::none")]
    pub binarization: BinarizePolicy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub activation: Activation,
    pub likelihood: LikelihoodKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    Elbo {
        #[serde(default = "crate::config::one")]
        beta: f64,
    },
    Iwae {
        n_iw: usize,
    },
    Csrae {
        lambda: f64,
    },
    MixtureCsrae {
        lambda: f64,
    },
    Ssl {
        lambda: f64,
        beta: f64,
        alpha: f64,
        #[serde(default = "crate::config::half")]
        tau: f64,
        #[serde(default)]
        mode: Option<UnlabelledMode>,
        /// Fraction of training examples that keep their labels.
        labelled_fraction: f64,
        classifier_hidden: Vec<usize>,
        embed_hidden: Vec<usize>,
    },
}

pub(crate) fn one() -> f64 {
    1.0
}
pub(crate) fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    Standard,
    Mog { k: usize },
    /// Components are the encoder posteriors at `k` pseudo-inputs taken from
    /// the head of the training split.
    Vamp { k: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerSpec {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            warmup_epochs: default_warmup(),
            patience: default_patience(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSpec {
    #[serde(default = "default_is_samples")]
    pub is_samples: usize,
    #[serde(default = "default_knn_k")]
    pub knn_k: Vec<usize>,
    /// Embed with posterior means (default) or one sampled z per example.
    #[serde(default = "default_true")]
    pub mean_embedding: bool,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            is_samples: default_is_samples(),
            knn_k: default_knn_k(),
            mean_embedding: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DataConfig,
    pub model: ModelSpec,
    pub objective: ObjectiveSpec,
    pub prior: PriorSpec,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub eval: EvalSpec,
}

pub const MAX_EPOCHS: usize = 400;

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.latent_dim == 0 {
            return Err(Error::arg("latent_dim must be >= 1"));
        }
        let opt = &self.optimizer;
        if opt.batch_size == 0 {
            return Err(Error::arg("batch_size must be >= 1"));
        }
        if opt.epochs > MAX_EPOCHS {
            return Err(Error::arg(format!("epochs capped at {MAX_EPOCHS}")));
        }
        if !(opt.learning_rate > 0.0) {
            return Err(Error::arg("learning_rate must be > 0"));
        }
        match &self.objective {
            ObjectiveSpec::Elbo { beta } => {
                if *beta < 0.0 {
                    return Err(Error::arg("beta must be >= 0"));
                }
            }
            ObjectiveSpec::Iwae { n_iw } => {
                if *n_iw == 0 {
                    return Err(Error::arg("n_iw must be >= 1"));
                }
            }
            ObjectiveSpec::Csrae { lambda } | ObjectiveSpec::MixtureCsrae { lambda } => {
                if *lambda < 0.0 {
                    return Err(Error::arg("lambda must be >= 0"));
                }
            }
            ObjectiveSpec::Ssl {
                labelled_fraction, ..
            } => {
                if !(0.0..=1.0).contains(labelled_fraction) {
                    return Err(Error::arg("labelled_fraction must be in [0, 1]"));
                }
            }
        }
        match &self.prior {
            PriorSpec::Mog { k } | PriorSpec::Vamp { k } => {
                if *k == 0 {
                    return Err(Error::arg("prior needs k >= 1 components"));
                }
            }
            PriorSpec::Standard => {}
        }
        if let DatasetSpec::Idx { images, labels } = &self.dataset.source {
            if !images.exists() {
                return Err(Error::arg(format!("missing file {}", images.display())));
            }
            if let Some(l) = labels {
                if !l.exists() {
                    return Err(Error::arg(format!("missing file {}", l.display())));
                }
            }
        }
        if let DatasetSpec::Csv { path, .. } = &self.dataset.source {
            if !path.exists() {
                return Err(Error::arg(format!("missing file {}", path.display())));
            }
        }
        if self.eval.knn_k.iter().any(|k| *k == 0) {
            return Err(Error::arg("knn k values must be >= 1"));
        }
        Ok(())
    }

    /// The divergence weight of the objective (lambda or beta), before warm-up.
    pub fn divergence_weight(&self) -> f64 {
        match &self.objective {
            ObjectiveSpec::Elbo { beta } => *beta,
            ObjectiveSpec::Iwae { .. } => 1.0,
            ObjectiveSpec::Csrae { lambda }
            | ObjectiveSpec::MixtureCsrae { lambda }
            | ObjectiveSpec::Ssl { lambda, .. } => *lambda,
        }
    }
}
