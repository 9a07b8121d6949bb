use serde::{Deserialize, Serialize};

use super::{check_halvings, init_params, ParamKind, ParamSet};
use crate::autodiff::{conv2d, conv_transpose3d, dense, Tensor};
use crate::error::{Error, Result};

/// Encoder-decoder sizes. Every conv layer uses kernel 4, stride 2,
/// padding 1, so each encoder block halves the image and each decoder block
/// doubles the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletionConfig {
    pub image_size: usize,
    pub resolution: usize,
    pub latent_dim: usize,
    pub encoder_channels: Vec<usize>,
    /// Input channels of each transposed-conv block; the last block
    /// outputs the single occupancy channel.
    pub decoder_channels: Vec<usize>,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            resolution: 16,
            latent_dim: 64,
            encoder_channels: vec![8, 16, 32],
            decoder_channels: vec![32, 16, 8],
        }
    }
}

pub const INPUT_CHANNELS: usize = 4;
const KERNEL: usize = 4;

impl CompletionConfig {
    fn encoder_out(&self) -> Result<usize> {
        check_halvings(self.image_size, self.encoder_channels.len(), "completion encoder")
    }

    fn decoder_seed(&self) -> Result<usize> {
        check_halvings(self.resolution, self.decoder_channels.len(), "completion decoder")
    }
}

/// Maps a masked 4-channel depth/normal image to an `N³` occupancy grid.
#[derive(Clone, Debug)]
pub struct CompletionNet {
    config: CompletionConfig,
    params: ParamSet,
}

impl CompletionNet {
    pub fn new(config: CompletionConfig, seed: u64) -> Result<Self> {
        let enc_side = config.encoder_out()?;
        let seed_side = config.decoder_seed()?;
        if config.latent_dim == 0 || config.encoder_channels.contains(&0) || config.decoder_channels.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut specs = Vec::new();
        let mut cin = INPUT_CHANNELS;
        for (i, &c) in config.encoder_channels.iter().enumerate() {
            specs.push((format!("enc{i}.weight"), vec![c, cin, KERNEL, KERNEL], ParamKind::Weight { fan_in: cin * KERNEL * KERNEL }));
            specs.push((format!("enc{i}.bias"), vec![c], ParamKind::Bias));
            cin = c;
        }
        let flat = cin * enc_side * enc_side;
        specs.push(("enc_fc.weight".into(), vec![config.latent_dim, flat], ParamKind::Weight { fan_in: flat }));
        specs.push(("enc_fc.bias".into(), vec![config.latent_dim], ParamKind::Bias));
        let c0 = config.decoder_channels[0];
        let seed_vol = c0 * seed_side.pow(3);
        specs.push(("dec_fc.weight".into(), vec![seed_vol, config.latent_dim], ParamKind::Weight { fan_in: config.latent_dim }));
        specs.push(("dec_fc.bias".into(), vec![seed_vol], ParamKind::Bias));
        for (i, &c) in config.decoder_channels.iter().enumerate() {
            let cout = config.decoder_channels.get(i + 1).copied().unwrap_or(1);
            // Each output voxel of a stride-2 transposed conv sees (k/2)³ taps per input channel.
            let fan_in = c * (KERNEL / 2).pow(3);
            specs.push((format!("dec{i}.weight"), vec![c, cout, KERNEL, KERNEL, KERNEL], ParamKind::Weight { fan_in }));
            specs.push((format!("dec{i}.bias"), vec![cout], ParamKind::Bias));
        }
        let params = init_params(&specs, seed)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &CompletionConfig {
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

    fn check_input(&self, input: &Tensor) -> Result<usize> {
        let w = self.config.image_size;
        match input.shape() {
            &[b, c, h, ww] if c == INPUT_CHANNELS && h == w && ww == w => Ok(b),
            other => Err(Error::Shape {
                op: "completion_forward",
                lhs: other.to_vec(),
                rhs: vec![0, INPUT_CHANNELS, w, w],
            }),
        }
    }

    /// Activations after encoder conv block `layer`, `[B, C, h, w]`.
    pub fn encoder_activations(&self, input: &Tensor, layer: usize) -> Result<Tensor> {
        self.check_input(input)?;
        if layer >= self.config.encoder_channels.len() {
            return Err(Error::invalid(format!(
                "encoder layer {layer} out of range (network has {})",
                self.config.encoder_channels.len()
            )));
        }
        let mut h = input.clone();
        for i in 0..=layer {
            h = self.encoder_block(&h, i)?;
        }
        Ok(h)
    }

    fn encoder_block(&self, x: &Tensor, i: usize) -> Result<Tensor> {
        conv2d(x, self.p(&format!("enc{i}.weight")), Some(self.p(&format!("enc{i}.bias"))), 2, 1)?.relu()
    }

    /// Latent code of each input, `[B, latent_dim]`.
    pub fn encode(&self, input: &Tensor) -> Result<Tensor> {
        let b = self.check_input(input)?;
        let mut h = input.clone();
        for i in 0..self.config.encoder_channels.len() {
            h = self.encoder_block(&h, i)?;
        }
        let flat = h.numel() / b;
        dense(&h.reshape(&[b, flat])?, self.p("enc_fc.weight"), Some(self.p("enc_fc.bias")))
    }

    /// Occupancy probabilities `[B, N, N, N]` for a `[B, 4, W, W]` batch.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let b = self.check_input(input)?;
        let z = self.encode(input)?;
        let side = self.config.decoder_seed()?;
        let c0 = self.config.decoder_channels[0];
        let mut h = dense(&z, self.p("dec_fc.weight"), Some(self.p("dec_fc.bias")))?
            .relu()?
            .reshape(&[b, c0, side, side, side])?;
        let layers = self.config.decoder_channels.len();
        for i in 0..layers {
            h = conv_transpose3d(&h, self.p(&format!("dec{i}.weight")), Some(self.p(&format!("dec{i}.bias"))), 2, 1)?;
            h = if i + 1 == layers { h.sigmoid()? } else { h.relu()? };
        }
        let n = self.config.resolution;
        h.reshape(&[b, n, n, n])
    }
}
