use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autodiff::Precision;
use crate::error::{Error, Result};
use crate::nets::{CompletionConfig, CriticConfig, GeneratorConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Completion,
    Gan,
    Finetune,
}

/// Naturalness weight: a literal value or calibrated from gradient scales.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Alpha {
    Auto,
    Value(f64),
}

impl Serialize for Alpha {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Alpha::Auto => s.serialize_str("auto"),
            Alpha::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Alpha {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Alpha::Value(v)),
            Raw::Str(s) if s == "auto" => Ok(Alpha::Auto),
            Raw::Str(s) => s
                .parse()
                .map(Alpha::Value)
                .map_err(|_| serde::de::Error::custom(format!("alpha must be a number or \"auto\", got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch: usize,
    /// Defaults to 0.1 for the SGD stages and 0.001 for the GAN stage.
    pub lr: Option<f64>,
    pub momentum: f64,
    pub lambda: f64,
    pub alpha: Alpha,
    pub critic_iters: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub precision: Precision,
    /// Use only the first `views` views of each shape, if set.
    pub views: Option<usize>,
    pub completion: CompletionConfig,
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
    pub dataset: Option<PathBuf>,
    /// Completion checkpoint whose parameters initialize the network.
    pub init_from: Option<PathBuf>,
    /// GAN checkpoint holding the pretrained critic.
    pub critic_from: Option<PathBuf>,
    /// Checkpoint of the same stage to continue from, with optimizer and
    /// RNG state.
    pub resume_from: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Completion,
            epochs: 10,
            batch: 4,
            lr: None,
            momentum: 0.9,
            lambda: 10.0,
            alpha: Alpha::Auto,
            critic_iters: 5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_steps: None,
            seed: 0,
            precision: Precision::F64,
            views: None,
            completion: CompletionConfig::default(),
            generator: GeneratorConfig::default(),
            critic: CriticConfig::default(),
            dataset: None,
            init_from: None,
            critic_from: None,
            resume_from: None,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(match self.stage {
            Stage::Gan => 0.001,
            Stage::Completion | Stage::Finetune => 0.1,
        })
    }

    /// Fills stage-dependent defaults so the config can be echoed verbatim.
    pub fn resolved(&self) -> TrainConfig {
        TrainConfig {
            lr: Some(self.learning_rate()),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::invalid("epochs and batch must be positive"));
        }
        let lr = self.learning_rate();
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid("lr must be a finite value >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be >= 0"));
        }
        if let Alpha::Value(a) = self.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::invalid("alpha must be >= 0 or \"auto\""));
            }
        }
        if self.critic_iters == 0 {
            return Err(Error::invalid("critic_iters must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::invalid("Adam needs beta1, beta2 in [0, 1) and eps > 0"));
        }
        if self.views == Some(0) {
            return Err(Error::invalid("views must be positive"));
        }
        let n = self.completion.resolution;
        if self.critic.resolution != n || self.generator.resolution != n {
            return Err(Error::invalid(format!(
                "completion, generator and critic resolutions differ ({n}, {}, {})",
                self.generator.resolution, self.critic.resolution
            )));
        }
        Ok(())
    }
}
