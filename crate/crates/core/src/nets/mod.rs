//! The three networks: the completion encoder-decoder, the shape generator
//! and the Wasserstein critic, at configurable (toy by default) scale.

mod completion;
mod gan;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use completion::{CompletionConfig, CompletionNet};
pub use gan::{Critic, CriticConfig, Generator, GeneratorConfig, LinearCritic, ScaledCritic};

use crate::autodiff::{Precision, Tensor};
use crate::error::{Error, Result};

/// Named, ordered learnable tensors of one network.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.entries.push((name.into(), value.requiring_grad()));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn at(&self, index: usize) -> &Tensor {
        &self.entries[index].1
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.entries.iter().map(|(_, t)| t).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Replaces the value of parameter `index`, keeping its shape.
    pub fn set(&mut self, index: usize, data: Vec<f64>) -> Result<()> {
        let shape = self.entries[index].1.shape().to_vec();
        self.entries[index].1 = Tensor::param(data, &shape)?;
        Ok(())
    }

    /// Substitutes an arbitrary tensor (possibly a graph node) for
    /// parameter `index`.
    pub fn replace(&mut self, index: usize, value: Tensor) -> Result<()> {
        if value.shape() != self.entries[index].1.shape() {
            return Err(Error::Shape {
                op: "replace parameter",
                lhs: self.entries[index].1.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.entries[index].1 = value;
        Ok(())
    }

    /// Copy whose tensors take part in no gradient computation.
    pub fn detached(&self) -> ParamSet {
        ParamSet {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.detach())).collect(),
        }
    }

    /// Rounds every value to the storage precision.
    pub fn round(&mut self, precision: Precision) -> Result<()> {
        if precision == Precision::F64 {
            return Ok(());
        }
        for i in 0..self.entries.len() {
            let data = self.entries[i].1.data().iter().map(|&v| precision.round(v)).collect();
            self.set(i, data)?;
        }
        Ok(())
    }

    /// Copies values from `(name, shape, data)` triples; every parameter
    /// must be present with a matching shape.
    pub fn load(&mut self, arrays: &[(String, Vec<usize>, Vec<f64>)], prefix: &str) -> Result<()> {
        for i in 0..self.entries.len() {
            let key = format!("{prefix}{}", self.entries[i].0);
            let (_, shape, data) = arrays
                .iter()
                .find(|(n, _, _)| *n == key)
                .ok_or_else(|| Error::NotFound(format!("parameter `{key}`")))?;
            if shape.as_slice() != self.entries[i].1.shape() {
                return Err(Error::Shape {
                    op: "load parameters",
                    lhs: self.entries[i].1.shape().to_vec(),
                    rhs: shape.clone(),
                });
            }
            self.set(i, data.clone())?;
        }
        Ok(())
    }

    pub fn to_arrays(&self, prefix: &str) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.entries
            .iter()
            .map(|(n, t)| (format!("{prefix}{n}"), t.shape().to_vec(), t.data().to_vec()))
            .collect()
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.entries {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Kind of learnable tensor, which decides its initialization.
#[derive(Clone, Copy, Debug)]
pub(crate) enum ParamKind {
    /// Weight with the given fan-in: uniform on `±sqrt(6 / fan_in)`, so the
    /// variance is `2 / fan_in`.
    Weight { fan_in: usize },
    Bias,
    BnGamma,
    BnBeta,
}

/// Initializes every parameter in order from one seeded stream.
pub(crate) fn init_params(specs: &[(String, Vec<usize>, ParamKind)], seed: u64) -> Result<ParamSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    for (name, shape, kind) in specs {
        let n: usize = shape.iter().product();
        let data = match *kind {
            ParamKind::Weight { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
            ParamKind::Bias | ParamKind::BnBeta => vec![0.0; n],
            ParamKind::BnGamma => vec![1.0; n],
        };
        params.push(name.clone(), Tensor::new(data, shape)?);
    }
    Ok(params)
}

/// Scores a batch of shapes `[B, N, N, N]` (or `[B, 1, N, N, N]`) with one
/// unbounded value per sample, `[B]`.
pub trait ShapeCritic {
    fn score(&self, shapes: &Tensor) -> Result<Tensor>;
}

/// Number of spatial halvings from `from` down to `to` with stride-2 layers.
pub(crate) fn check_halvings(from: usize, layers: usize, what: &str) -> Result<usize> {
    let div = 1usize << layers;
    if layers == 0 || from % div != 0 {
        return Err(Error::invalid(format!(
            "{what}: size {from} is not divisible by 2^{layers}"
        )));
    }
    Ok(from / div)
}
