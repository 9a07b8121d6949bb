use serde::{Deserialize, Serialize};

use super::{check_halvings, init_params, ParamKind, ParamSet, ShapeCritic};
use crate::autodiff::{batchnorm, conv3d, conv_transpose3d, dense, BatchNormMode, Tensor};
use crate::error::{Error, Result};

const KERNEL: usize = 4;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub resolution: usize,
    pub latent_dim: usize,
    /// Input channels of each transposed-conv block.
    pub channels: Vec<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            resolution: 16,
            latent_dim: 32,
            channels: vec![32, 16, 8],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub resolution: usize,
    /// Output channels of each strided conv block.
    pub channels: Vec<usize>,
    pub leak: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            resolution: 16,
            channels: vec![8, 16, 32],
            leak: 0.2,
        }
    }
}

/// Accepts `[B, N, N, N]` or `[B, 1, N, N, N]` and returns the 5-D view.
fn as_volume(x: &Tensor, n: usize, op: &'static str) -> Result<Tensor> {
    match *x.shape() {
        [b, d, h, w] if d == n && h == n && w == n => x.reshape(&[b, 1, n, n, n]),
        [_, 1, d, h, w] if d == n && h == n && w == n => Ok(x.clone()),
        _ => Err(Error::Shape {
            op,
            lhs: x.shape().to_vec(),
            rhs: vec![0, n, n, n],
        }),
    }
}

/// Maps latent codes `[B, latent_dim]` to occupancy grids `[B, N, N, N]`.
#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    params: ParamSet,
    /// Running mean and variance per batchnorm layer.
    running: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        let side = check_halvings(config.resolution, config.channels.len(), "generator")?;
        if config.latent_dim == 0 || config.channels.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let seed_vol = config.channels[0] * side.pow(3);
        let mut specs = vec![
            ("fc.weight".to_string(), vec![seed_vol, config.latent_dim], ParamKind::Weight { fan_in: config.latent_dim }),
            ("fc.bias".to_string(), vec![seed_vol], ParamKind::Bias),
            ("bn_fc.gamma".to_string(), vec![seed_vol], ParamKind::BnGamma),
            ("bn_fc.beta".to_string(), vec![seed_vol], ParamKind::BnBeta),
        ];
        let mut running = vec![(vec![0.0; seed_vol], vec![1.0; seed_vol])];
        let layers = config.channels.len();
        for (i, &c) in config.channels.iter().enumerate() {
            let cout = config.channels.get(i + 1).copied().unwrap_or(1);
            let fan_in = c * (KERNEL / 2).pow(3);
            specs.push((format!("up{i}.weight"), vec![c, cout, KERNEL, KERNEL, KERNEL], ParamKind::Weight { fan_in }));
            specs.push((format!("up{i}.bias"), vec![cout], ParamKind::Bias));
            if i + 1 < layers {
                specs.push((format!("bn{i}.gamma"), vec![cout], ParamKind::BnGamma));
                specs.push((format!("bn{i}.beta"), vec![cout], ParamKind::BnBeta));
                running.push((vec![0.0; cout], vec![1.0; cout]));
            }
        }
        Ok(Self {
            params: init_params(&specs, seed)?,
            config,
            running,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn p(&self, name: &str) -> &Tensor {
        self.params.get(name).expect("parameter registered at construction")
    }

    /// Running batchnorm statistics as named arrays for checkpoints.
    pub fn buffers(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, (m, v)) in self.running.iter().enumerate() {
            out.push((format!("running{i}.mean"), vec![m.len()], m.clone()));
            out.push((format!("running{i}.var"), vec![v.len()], v.clone()));
        }
        out
    }

    pub fn load_buffers(&mut self, arrays: &[(String, Vec<usize>, Vec<f64>)], prefix: &str) -> Result<()> {
        for i in 0..self.running.len() {
            for (suffix, slot) in [("mean", 0), ("var", 1)] {
                let key = format!("{prefix}running{i}.{suffix}");
                let (_, _, data) = arrays
                    .iter()
                    .find(|(n, _, _)| *n == key)
                    .ok_or_else(|| Error::NotFound(format!("buffer `{key}`")))?;
                let dst = if slot == 0 { &mut self.running[i].0 } else { &mut self.running[i].1 };
                if data.len() != dst.len() {
                    return Err(Error::invalid(format!("buffer `{key}` has the wrong length")));
                }
                dst.clone_from(data);
            }
        }
        Ok(())
    }

    /// Forward pass with batch statistics; updates the running statistics.
    pub fn forward_train(&mut self, z: &Tensor) -> Result<Tensor> {
        let mut stats = Vec::new();
        let y = self.run(z, None, &mut stats)?;
        for ((rm, rv), (m, v)) in self.running.iter_mut().zip(stats) {
            for (r, x) in rm.iter_mut().zip(m) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * x;
            }
            for (r, x) in rv.iter_mut().zip(v) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * x;
            }
        }
        Ok(y)
    }

    /// Forward pass with the stored running statistics.
    pub fn forward_eval(&self, z: &Tensor) -> Result<Tensor> {
        self.run(z, Some(&self.running), &mut Vec::new())
    }

    fn bn(
        &self,
        x: &Tensor,
        name: &str,
        layer: usize,
        running: Option<&[(Vec<f64>, Vec<f64>)]>,
        stats: &mut Vec<(Vec<f64>, Vec<f64>)>,
    ) -> Result<Tensor> {
        let mode = match running {
            Some(r) => BatchNormMode::Eval { mean: &r[layer].0, var: &r[layer].1 },
            None => BatchNormMode::Train,
        };
        let out = batchnorm(x, self.p(&format!("{name}.gamma")), self.p(&format!("{name}.beta")), BN_EPS, mode)?;
        stats.extend(out.batch_stats);
        Ok(out.output)
    }

    fn run(
        &self,
        z: &Tensor,
        running: Option<&[(Vec<f64>, Vec<f64>)]>,
        stats: &mut Vec<(Vec<f64>, Vec<f64>)>,
    ) -> Result<Tensor> {
        let b = match *z.shape() {
            [b, l] if l == self.config.latent_dim => b,
            _ => {
                return Err(Error::Shape {
                    op: "generator_forward",
                    lhs: z.shape().to_vec(),
                    rhs: vec![0, self.config.latent_dim],
                })
            }
        };
        let layers = self.config.channels.len();
        let side = self.config.resolution >> layers;
        let h = dense(z, self.p("fc.weight"), Some(self.p("fc.bias")))?;
        let mut h = self
            .bn(&h, "bn_fc", 0, running, stats)?
            .relu()?
            .reshape(&[b, self.config.channels[0], side, side, side])?;
        for i in 0..layers {
            h = conv_transpose3d(&h, self.p(&format!("up{i}.weight")), Some(self.p(&format!("up{i}.bias"))), 2, 1)?;
            h = if i + 1 == layers {
                h.sigmoid()?
            } else {
                self.bn(&h, &format!("bn{i}"), i + 1, running, stats)?.relu()?
            };
        }
        let n = self.config.resolution;
        h.reshape(&[b, n, n, n])
    }
}

/// Wasserstein critic: strided conv3d blocks with leaky ReLU, then a dense
/// layer to one unbounded score per sample.
#[derive(Clone, Debug)]
pub struct Critic {
    config: CriticConfig,
    params: ParamSet,
}

impl Critic {
    pub fn new(config: CriticConfig, seed: u64) -> Result<Self> {
        let side = check_halvings(config.resolution, config.channels.len(), "critic")?;
        if config.channels.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut specs = Vec::new();
        let mut cin = 1;
        for (i, &c) in config.channels.iter().enumerate() {
            specs.push((format!("conv{i}.weight"), vec![c, cin, KERNEL, KERNEL, KERNEL], ParamKind::Weight { fan_in: cin * KERNEL.pow(3) }));
            specs.push((format!("conv{i}.bias"), vec![c], ParamKind::Bias));
            cin = c;
        }
        let flat = cin * side.pow(3);
        specs.push(("fc.weight".into(), vec![1, flat], ParamKind::Weight { fan_in: flat }));
        specs.push(("fc.bias".into(), vec![1], ParamKind::Bias));
        Ok(Self {
            params: init_params(&specs, seed)?,
            config,
        })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn p(&self, name: &str) -> &Tensor {
        self.params.get(name).expect("parameter registered at construction")
    }

    /// Copy whose parameters receive no gradients.
    pub fn frozen(&self) -> Critic {
        Critic {
            config: self.config.clone(),
            params: self.params.detached(),
        }
    }
}

impl ShapeCritic for Critic {
    fn score(&self, shapes: &Tensor) -> Result<Tensor> {
        let mut h = as_volume(shapes, self.config.resolution, "critic_forward")?;
        let b = h.shape()[0];
        for i in 0..self.config.channels.len() {
            h = conv3d(&h, self.p(&format!("conv{i}.weight")), Some(self.p(&format!("conv{i}.bias"))), 2, 1)?
                .leaky_relu(self.config.leak)?;
        }
        let flat = h.numel() / b;
        dense(&h.reshape(&[b, flat])?, self.p("fc.weight"), Some(self.p("fc.bias")))?.reshape(&[b])
    }
}

/// `D(x) = w · x + b` over flattened grids.
#[derive(Clone, Debug)]
pub struct LinearCritic {
    resolution: usize,
    params: ParamSet,
}

impl LinearCritic {
    pub fn new(resolution: usize, weight: Vec<f64>, bias: f64) -> Result<Self> {
        let len = resolution.pow(3);
        if weight.len() != len {
            return Err(Error::invalid(format!(
                "linear critic needs {len} weights, got {}",
                weight.len()
            )));
        }
        let mut params = ParamSet::new();
        params.push("weight", Tensor::new(weight, &[1, len])?);
        params.push("bias", Tensor::new(vec![bias], &[1])?);
        Ok(Self { resolution, params })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }
}

impl ShapeCritic for LinearCritic {
    fn score(&self, shapes: &Tensor) -> Result<Tensor> {
        let x = as_volume(shapes, self.resolution, "linear_critic")?;
        let b = x.shape()[0];
        let len = self.resolution.pow(3);
        dense(&x.reshape(&[b, len])?, self.params.at(0), Some(self.params.at(1)))?.reshape(&[b])
    }
}

/// Multiplies another critic's scores by a constant.
pub struct ScaledCritic<'a, C: ShapeCritic + ?Sized> {
    pub inner: &'a C,
    pub factor: f64,
}

impl<C: ShapeCritic + ?Sized> ShapeCritic for ScaledCritic<'_, C> {
    fn score(&self, shapes: &Tensor) -> Result<Tensor> {
        self.inner.score(shapes)?.scale(self.factor)
    }
}
