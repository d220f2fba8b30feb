//! Run configuration, read from TOML. Every field has a default, so an empty
//! file is a valid config describing the desk-scale synthetic benchmark.
//!
//! ```toml
//! seed = 0
//!
//! [data]
//! # dir = "data/synthetic"      # load a saved dataset instead of generating
//! [data.synthetic]
//! num_classes = 6
//!
//! [train]
//! snippets = 40
//! flags = "cl,fbd,mpcl"
//!
//! [inference]
//! rho = 0.2
//!
//! [eval]
//! thresholds = "0.1:0.1:0.7"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::labeling::AmbiguityRule;
use crate::losses::LossFlags;
use crate::model::ModelConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream, including synthetic data generation.
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Saved dataset directory; when absent the synthetic benchmark is
    /// generated in memory.
    pub dir: Option<PathBuf>,
    /// Its `seed` is replaced by the run seed.
    pub synthetic: SyntheticSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Snippets sampled per video at the base scale (T).
    pub snippets: usize,
    /// Top-k pooling divisor, `k = floor(T / gamma)`.
    pub gamma: f64,
    /// Entropy threshold (nats) separating ambiguous snippets.
    pub theta: f64,
    pub ambiguity_rule: AmbiguityRule,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub flags: LossFlags,
    /// Sampling factors of the multi-scale branch relative to T.
    pub scales: Vec<f64>,
    /// Checkpoint period in iterations; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Label-audit period in iterations; 0 audits only at the end.
    pub audit_every: usize,
    /// Attention threshold of the pseudo-label audit baseline.
    pub pl_tau: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            snippets: 40,
            gamma: 7.0,
            theta: 0.45,
            ambiguity_rule: AmbiguityRule::HighEntropy,
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            iterations: 2000,
            batch_size: 8,
            flags: LossFlags::FULL,
            scales: vec![2.0, 1.0, 0.5],
            checkpoint_every: 500,
            audit_every: 100,
            pl_tau: 0.5,
        }
    }
}

impl TrainConfig {
    /// Checks everything except the iteration count, which may be 0 for a
    /// library call that only wants initialised parameters.
    pub fn validate_shape(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train.{m}")));
        if self.snippets < 4 || !self.snippets.is_multiple_of(2) {
            return bad(format!(
                "snippets: must be even and at least 4, got {}",
                self.snippets
            ));
        }
        if !(self.gamma > 0.0) {
            return bad(format!("gamma: must be positive, got {}", self.gamma));
        }
        if !(self.theta > 0.0 && self.theta <= std::f64::consts::LN_2) {
            return bad(format!("theta: must lie in (0, ln 2], got {}", self.theta));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning_rate / weight_decay: must be non-negative".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size: must be at least 1".into());
        }
        if self.scales.len() < 2
            || self.scales.iter().any(|&s| !(s > 0.0))
            || !self.scales.contains(&1.0)
        {
            return bad(format!(
                "scales: need at least two positive factors including 1, got {:?}",
                self.scales
            ));
        }
        if !(self.pl_tau > 0.0 && self.pl_tau < 1.0) {
            return bad(format!("pl_tau: must lie in (0, 1), got {}", self.pl_tau));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        if self.iterations == 0 {
            return Err(Error::Config("train.iterations: must be at least 1".into()));
        }
        Ok(())
    }

    /// Snippet count of every scale, base scale included.
    pub fn scale_lengths(&self) -> Vec<usize> {
        self.scales
            .iter()
            .map(|&f| ((self.snippets as f64 * f).round() as usize).max(2))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Video-level class threshold.
    pub rho: f64,
    /// Attention thresholds for class-agnostic proposals.
    pub thresholds: Vec<f64>,
    pub nms_iou: f64,
    /// Multiply each proposal score by its video-level class probability.
    pub fuse_class_score: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            rho: 0.2,
            thresholds: (0..17).map(|i| round9(0.10 + 0.05 * i as f64)).collect(),
            nms_iou: 0.5,
            fuse_class_score: false,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!(
                "inference.rho: must lie in (0, 1), got {}",
                self.rho
            )));
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::Config(
                "inference.thresholds: need a nonempty list inside (0, 1)".into(),
            ));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return Err(Error::Config(format!(
                "inference.nms_iou: must lie in (0, 1), got {}",
                self.nms_iou
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// `start:step:end` or a comma-separated list.
    pub thresholds: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: "0.1:0.1:0.7".into(),
        }
    }
}

impl EvalConfig {
    pub fn threshold_list(&self) -> Result<Vec<f64>> {
        parse_thresholds(&self.thresholds)
    }
}

fn round9(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// Parses `0.1:0.1:0.7` (inclusive range) or `0.3,0.5`.
pub fn parse_thresholds(spec: &str) -> Result<Vec<f64>> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("thresholds: `{s}` is not a number")))
    };
    let values = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [start, step, end] = parts[..] else {
            return Err(Error::Config(format!(
                "thresholds: expected start:step:end, got `{spec}`"
            )));
        };
        let (start, step, end) = (num(start)?, num(step)?, num(end)?);
        if !(step > 0.0) || end < start {
            return Err(Error::Config(format!("thresholds: empty range `{spec}`")));
        }
        let n = ((end - start) / step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| round9(start + step * i as f64)).collect()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if values.is_empty() || values.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::Config(format!(
            "thresholds: values of `{spec}` must lie in (0, 1]"
        )));
    }
    Ok(values)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.inference.validate()?;
        self.eval.threshold_list()?;
        if self.data.dir.is_none() {
            self.synthetic_spec().validate()?;
        }
        Ok(())
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            seed: self.seed,
            ..self.data.synthetic.clone()
        }
    }

    /// Loads the configured dataset directory or generates the synthetic one.
    pub fn dataset(&self) -> Result<Dataset> {
        match &self.data.dir {
            Some(dir) => load_dataset(dir),
            None => self.synthetic_spec().generate(),
        }
    }

    /// Writes the config as `config.toml` into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}
