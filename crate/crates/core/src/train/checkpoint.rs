use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::config::Stage;
use crate::autodiff::{read_tensor_file, write_tensor_file, Precision, TensorFile};
use crate::error::{Error, Result};
use crate::nets::{CompletionConfig, CompletionNet, Critic, CriticConfig, Generator, GeneratorConfig};

const FORMAT_VERSION: u32 = 1;

/// Exact position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte key, hex encoded.
    pub key: String,
    pub stream: u64,
    /// Word position, in decimal.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> RngState {
        RngState {
            key: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::invalid("malformed RNG state in checkpoint");
        if self.key.len() != 64 {
            return Err(bad());
        }
        let mut key = [0u8; 32];
        for (i, b) in key.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.key[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: u32,
    pub stage: Stage,
    /// Completed epochs.
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    pub seed: u64,
    pub rng: RngState,
    pub completion: Option<CompletionConfig>,
    pub generator: Option<GeneratorConfig>,
    pub critic: Option<CriticConfig>,
    /// Adam step counters by optimizer prefix.
    pub adam_steps: Vec<(String, u64)>,
    pub alpha: Option<f64>,
    pub critic_checksum: Option<String>,
}

/// Network parameters plus everything needed to continue training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub precision: Precision,
    pub arrays: Vec<(String, Vec<usize>, Vec<f64>)>,
}

pub(crate) const COMPLETION: &str = "completion.";
pub(crate) const CRITIC: &str = "critic.";
pub(crate) const GENERATOR: &str = "generator.";
pub(crate) const GENERATOR_BN: &str = "generator_bn.";

impl Checkpoint {
    pub fn completion_net(&self) -> Result<CompletionNet> {
        let cfg = self
            .meta
            .completion
            .clone()
            .ok_or_else(|| Error::NotFound("completion network in checkpoint".into()))?;
        let mut net = CompletionNet::new(cfg, 0)?;
        net.params_mut().load(&self.arrays, COMPLETION)?;
        Ok(net)
    }

    pub fn critic(&self) -> Result<Critic> {
        let cfg = self
            .meta
            .critic
            .clone()
            .ok_or_else(|| Error::NotFound("critic in checkpoint".into()))?;
        let mut critic = Critic::new(cfg, 0)?;
        critic.params_mut().load(&self.arrays, CRITIC)?;
        Ok(critic)
    }

    pub fn generator(&self) -> Result<Generator> {
        let cfg = self
            .meta
            .generator
            .clone()
            .ok_or_else(|| Error::NotFound("generator in checkpoint".into()))?;
        let mut gen = Generator::new(cfg, 0)?;
        gen.params_mut().load(&self.arrays, GENERATOR)?;
        gen.load_buffers(&self.arrays, GENERATOR_BN)?;
        Ok(gen)
    }

    pub fn adam_step(&self, prefix: &str) -> u64 {
        self.meta
            .adam_steps
            .iter()
            .find(|(p, _)| p == prefix)
            .map_or(0, |(_, t)| *t)
    }

    pub fn to_file(&self) -> Result<TensorFile> {
        Ok(TensorFile {
            precision: self.precision,
            meta: serde_json::to_string(&self.meta)?,
            arrays: self.arrays.clone(),
        })
    }

    pub fn from_file(file: TensorFile) -> Result<Checkpoint> {
        let meta: CheckpointMeta = serde_json::from_str(&file.meta)?;
        if meta.format != FORMAT_VERSION {
            return Err(Error::format(
                8,
                format!("checkpoint format {} is not supported (expected {FORMAT_VERSION})", meta.format),
            ));
        }
        Ok(Checkpoint {
            meta,
            precision: file.precision,
            arrays: file.arrays,
        })
    }
}

pub(crate) fn new_meta(stage: Stage, seed: u64, rng: &ChaCha8Rng) -> CheckpointMeta {
    CheckpointMeta {
        format: FORMAT_VERSION,
        stage,
        epoch: 0,
        step: 0,
        seed,
        rng: RngState::capture(rng),
        completion: None,
        generator: None,
        critic: None,
        adam_steps: Vec::new(),
        alpha: None,
        critic_checksum: None,
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_tensor_file(path, &checkpoint.to_file()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_file(read_tensor_file(path)?)
}
