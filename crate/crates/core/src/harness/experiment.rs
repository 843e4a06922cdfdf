use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::stats::{accuracy, binomial_pvalue, confusion_matrix};
use crate::convnet::{load_model, pretrain_depth, PipelineConfig, PipelineModel};
use crate::dataset::{load_dataset, Phase, VTDataset};
use crate::decode::{
    cnn_features, hrf_mvpa_features, knn_classify, raw_mvpa_features, t_mvpa_features, DesignMatrix, Metric,
    DEFAULT_SPAN,
};
use crate::rng::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Voxel intensities at the labelled column.
    Raw,
    /// Intensities after correlation with the canonical HRF.
    Hrf,
    /// Six-sample window of every voxel.
    Tmvpa,
    /// Learned temporal convolutional representation.
    Cnn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::Hrf => "hrf",
            Method::Tmvpa => "tmvpa",
            Method::Cnn => "cnn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Method::Raw),
            "hrf" => Ok(Method::Hrf),
            "tmvpa" | "t-mvpa" => Ok(Method::Tmvpa),
            "cnn" => Ok(Method::Cnn),
            other => Err(Error::Usage(format!(
                "unknown method {other:?} (expected raw, hrf, tmvpa or cnn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub method: Method,
    /// Number of convolutional blocks, for [`Method::Cnn`].
    pub depth: usize,
    pub pipeline: PipelineConfig,
    pub knn_k: usize,
    pub metric: Metric,
    pub seed: u64,
    /// Use a saved model instead of pretraining.
    pub model_path: Option<PathBuf>,
    pub tmvpa_window: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            method: Method::Raw,
            depth: 2,
            pipeline: PipelineConfig::default(),
            knn_k: 1,
            metric: Metric::Euclidean,
            seed: 0,
            model_path: None,
            tmvpa_window: DEFAULT_SPAN,
        }
    }
}

/// `cfg` with autoencoder seeds drawn from the master `seed`.
pub fn seeded_pipeline(cfg: &PipelineConfig, seed: u64) -> PipelineConfig {
    let mut cfg = cfg.clone();
    cfg.layer1_hyper.seed = derive_seed(seed, "pretrain");
    cfg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub depth: Option<usize>,
    pub delta1: Option<usize>,
    pub delta2: Option<usize>,
    pub feature_dim: usize,
    pub accuracy: f64,
    pub p_value: f64,
    pub chance: f64,
    pub n_correct: usize,
    pub n_test: usize,
    /// `confusion[truth][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub seed: u64,
}

impl EvalReport {
    pub fn method_label(&self) -> String {
        match self.depth {
            Some(depth) => format!("{}{depth}", self.method),
            None => self.method.to_string(),
        }
    }
}

/// Full design matrix (all labels) for the spec's method, plus the model
/// when one was trained or loaded.
pub fn design_for(d: &VTDataset, spec: &ExperimentSpec) -> Result<(DesignMatrix, Option<PipelineModel>)> {
    Ok(match spec.method {
        Method::Raw => (raw_mvpa_features(d), None),
        Method::Hrf => (hrf_mvpa_features(d)?, None),
        Method::Tmvpa => (t_mvpa_features(d, spec.tmvpa_window)?, None),
        Method::Cnn => {
            let model = match &spec.model_path {
                Some(path) => load_model(path)?,
                None => pretrain_depth(d, &seeded_pipeline(&spec.pipeline, spec.seed), spec.depth)?,
            };
            if spec.depth > model.depth() {
                return Err(Error::Usage(format!(
                    "model has {} block(s), depth {} requested",
                    model.depth(),
                    spec.depth
                )));
            }
            (cnn_features(d, &model, spec.depth)?, Some(model))
        }
    })
}

/// Train on encode-phase rows, test on retrieve-phase rows.
pub fn evaluate_design(dm: &DesignMatrix, spec: &ExperimentSpec, num_classes: usize) -> Result<EvalReport> {
    if num_classes < 2 {
        return Err(Error::contract("decoding needs at least two classes"));
    }
    let train = dm.phase(Phase::Encode);
    let test = dm.phase(Phase::Retrieve);
    if test.is_empty() {
        return Err(Error::contract("dataset has no retrieve-phase labels"));
    }
    let predictions = knn_classify(&train, &test, spec.knn_k, spec.metric)?;
    let acc = accuracy(&predictions, &test.labels)?;
    let n_correct = predictions.iter().zip(&test.labels).filter(|(p, t)| p == t).count();
    let chance = 1.0 / num_classes as f64;
    let (depth, delta1, delta2) = match spec.method {
        Method::Cnn => (
            Some(spec.depth),
            Some(spec.pipeline.delta1),
            (spec.depth == 2).then_some(spec.pipeline.delta2),
        ),
        _ => (None, None, None),
    };
    Ok(EvalReport {
        method: spec.method,
        depth,
        delta1,
        delta2,
        feature_dim: dm.feature_dim(),
        accuracy: acc,
        p_value: binomial_pvalue(n_correct, test.len(), chance)?,
        chance,
        n_correct,
        n_test: test.len(),
        confusion: confusion_matrix(&predictions, &test.labels, num_classes)?,
        seed: spec.seed,
    })
}

pub fn run_on_dataset(d: &VTDataset, spec: &ExperimentSpec) -> Result<EvalReport> {
    let (dm, model) = design_for(d, spec)?;
    let mut report = evaluate_design(&dm, spec, d.num_classes())?;
    if let Some(model) = model {
        report.delta1 = Some(model.config.delta1);
        report.delta2 = (spec.depth == 2).then_some(model.config.delta2);
    }
    Ok(report)
}

pub fn evaluate(d: &VTDataset, spec: &ExperimentSpec) -> Result<EvalReport> {
    run_on_dataset(d, spec)
}

pub fn run_experiment(dataset: impl AsRef<Path>, spec: &ExperimentSpec) -> Result<EvalReport> {
    run_on_dataset(&load_dataset(dataset)?, spec)
}
