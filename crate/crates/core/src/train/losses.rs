use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::optim::grad_norm;
use crate::autodiff::{backward, bce, l2_norm_rows, Tensor};
use crate::error::{Error, Result};
use crate::nets::{CompletionNet, ShapeCritic};

/// Mean binary cross-entropy over batch and voxels.
pub fn voxel_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    bce(pred, target)
}

pub struct GanLosses {
    /// `E[D(fake)] - E[D(real)] + penalty`.
    pub critic_loss: Tensor,
    /// λ-weighted gradient penalty.
    pub penalty: Tensor,
    /// `E[D(fake)] - E[D(real)]`.
    pub wasserstein: Tensor,
    pub interpolates: Tensor,
}

fn check_pair(real: &Tensor, fake: &Tensor) -> Result<usize> {
    if real.shape() != fake.shape() || real.shape().is_empty() {
        return Err(Error::Shape {
            op: "wgan_gp_losses",
            lhs: real.shape().to_vec(),
            rhs: fake.shape().to_vec(),
        });
    }
    Ok(real.shape()[0])
}

/// `λ · mean_b (‖∇_x̂ D(x̂_b)‖₂ - 1)²` at `x̂ = ε·real + (1 - ε)·fake`, with
/// one `ε` per sample. The result stays differentiable in the critic's
/// parameters. Returns the penalty and the interpolates.
pub fn gradient_penalty(
    critic: &dyn ShapeCritic,
    real: &Tensor,
    fake: &Tensor,
    eps: &[f64],
    lambda: f64,
) -> Result<(Tensor, Tensor)> {
    let b = check_pair(real, fake)?;
    if eps.len() != b {
        return Err(Error::invalid(format!("need {b} interpolation weights, got {}", eps.len())));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be >= 0"));
    }
    let row = real.numel() / b;
    let mixed: Vec<f64> = (0..real.numel())
        .map(|i| {
            let e = eps[i / row];
            e * real.data()[i] + (1.0 - e) * fake.data()[i]
        })
        .collect();
    let x_hat = Tensor::new(mixed, real.shape())?.requiring_grad();
    let scores = critic.score(&x_hat)?;
    let grads = backward(&scores.sum()?, &[&x_hat], true)?;
    let norms = l2_norm_rows(&grads[0])?;
    let penalty = norms.add_scalar(-1.0)?.square()?.mean()?.scale(lambda)?;
    Ok((penalty, x_hat))
}

/// Critic objective with gradient penalty; `ε ~ U(0, 1)` per sample is
/// drawn from `seed`.
pub fn wgan_gp_losses(
    critic: &dyn ShapeCritic,
    real: &Tensor,
    fake: &Tensor,
    lambda: f64,
    seed: u64,
) -> Result<GanLosses> {
    let b = check_pair(real, fake)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
    let (penalty, interpolates) = gradient_penalty(critic, real, fake, &eps, lambda)?;
    let wasserstein = critic.score(fake)?.mean()?.sub(&critic.score(real)?.mean()?)?;
    Ok(GanLosses {
        critic_loss: wasserstein.add(&penalty)?,
        penalty,
        wasserstein,
        interpolates,
    })
}

/// `-mean D(x̃)` over the batch of completions.
pub fn naturalness_loss(critic: &dyn ShapeCritic, completed: &Tensor) -> Result<Tensor> {
    critic.score(completed)?.mean()?.neg()
}

/// `l_voxel + α · l_natural`; with `α = 0` the naturalness term is left
/// out of the graph entirely.
pub fn combined_loss(l_voxel: &Tensor, l_natural: &Tensor, alpha: f64) -> Result<Tensor> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid("alpha must be >= 0"));
    }
    if alpha == 0.0 {
        return Ok(l_voxel.clone());
    }
    l_voxel.add(&l_natural.scale(alpha)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaCalibration {
    pub alpha: f64,
    /// `‖∇θ L_voxel‖₂` over all completion parameters.
    pub voxel_grad_norm: f64,
    /// `‖∇θ L_natural‖₂` over all completion parameters.
    pub natural_grad_norm: f64,
}

/// Ratio of the voxel and naturalness gradient norms with respect to the
/// completion parameters, at the current parameters and on one batch.
pub fn calibrate_alpha(
    net: &CompletionNet,
    critic: &dyn ShapeCritic,
    inputs: &Tensor,
    targets: &Tensor,
) -> Result<AlphaCalibration> {
    if inputs.shape().first().copied().unwrap_or(0) == 0 {
        return Err(Error::Calibration("empty batch".into()));
    }
    let params = net.params().tensors();
    let pred = net.forward(inputs)?;
    let voxel = grad_norm(&backward(&voxel_loss(&pred, targets)?, &params, false)?);
    let natural = grad_norm(&backward(&naturalness_loss(critic, &pred)?, &params, false)?);
    if !(natural > 0.0) || !natural.is_finite() || !voxel.is_finite() {
        return Err(Error::Calibration(format!(
            "naturalness gradient norm is {natural} (voxel {voxel})"
        )));
    }
    Ok(AlphaCalibration {
        alpha: voxel / natural,
        voxel_grad_norm: voxel,
        natural_grad_norm: natural,
    })
}
