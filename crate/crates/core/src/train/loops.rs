use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::checkpoint::{load_checkpoint, new_meta, Checkpoint, COMPLETION, CRITIC, GENERATOR, GENERATOR_BN};
use super::config::{Alpha, Stage, TrainConfig};
use super::data::{batch_tensors, Sample};
use super::losses::{calibrate_alpha, combined_loss, naturalness_loss, voxel_loss, wgan_gp_losses, AlphaCalibration};
use super::optim::{Adam, Sgd};
use crate::autodiff::{backward, no_grad, Tensor};
use crate::error::{Error, Result};
use crate::nets::{CompletionNet, Critic, Generator};

/// Per-epoch mean losses; the first column is the epoch index.
#[derive(Clone, Debug, PartialEq)]
pub struct LossCurve {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl LossCurve {
    fn new(columns: &[&'static str]) -> LossCurve {
        LossCurve {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, v)| if i == 0 { format!("{}", *v as usize) } else { format!("{v:?}") })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curve: LossCurve,
    /// Set when fine-tuning calibrated alpha.
    pub calibration: Option<AlphaCalibration>,
}

const COMPLETION_OPT: &str = "opt.completion.";
const GENERATOR_OPT: &str = "opt.generator.";
const CRITIC_OPT: &str = "opt.critic.";

fn loop_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn finite(value: f64, epoch: usize, step: usize, what: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Divergence { epoch, step, what })
    }
}

fn resume_checkpoint(config: &TrainConfig) -> Result<Option<Checkpoint>> {
    let Some(path) = &config.resume_from else {
        return Ok(None);
    };
    let ck = load_checkpoint(path)?;
    if ck.meta.stage != config.stage {
        return Err(Error::invalid(format!(
            "cannot resume stage {:?} from a {:?} checkpoint",
            config.stage, ck.meta.stage
        )));
    }
    Ok(Some(ck))
}

fn check_same<T: PartialEq + std::fmt::Debug>(loaded: &T, configured: &T, what: &str) -> Result<()> {
    if loaded != configured {
        return Err(Error::invalid(format!(
            "{what} architecture in checkpoint ({loaded:?}) differs from the config ({configured:?})"
        )));
    }
    Ok(())
}

struct CompletionState {
    net: CompletionNet,
    sgd: Sgd,
    rng: ChaCha8Rng,
    epoch: usize,
    step: usize,
    alpha: Option<f64>,
}

fn completion_state(config: &TrainConfig, resume: Option<&Checkpoint>) -> Result<CompletionState> {
    let lr = config.learning_rate();
    if let Some(ck) = resume {
        let net = ck.completion_net()?;
        check_same(net.config(), &config.completion, "completion")?;
        let mut sgd = Sgd::new(net.params(), lr, config.momentum);
        sgd.load_state(net.params(), &ck.arrays, COMPLETION_OPT)?;
        return Ok(CompletionState {
            rng: ck.meta.rng.restore()?,
            epoch: ck.meta.epoch,
            step: ck.meta.step,
            alpha: ck.meta.alpha,
            net,
            sgd,
        });
    }
    let mut net = match &config.init_from {
        Some(path) => {
            let net = load_checkpoint(path)?.completion_net()?;
            check_same(net.config(), &config.completion, "completion")?;
            net
        }
        None => CompletionNet::new(config.completion.clone(), config.seed)?,
    };
    net.params_mut().round(config.precision)?;
    Ok(CompletionState {
        sgd: Sgd::new(net.params(), lr, config.momentum),
        rng: loop_rng(config.seed, 1),
        epoch: 0,
        step: 0,
        alpha: None,
        net,
    })
}

/// Runs epochs until `config.epochs` (or `max_steps`) minimizing
/// `L_voxel + α·L_natural`; the naturalness term only enters the gradient
/// when `α > 0`.
fn run_completion(
    config: &TrainConfig,
    samples: &[Sample],
    state: &mut CompletionState,
    critic: Option<&Critic>,
    alpha: f64,
    curve: &mut LossCurve,
) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let (w, n) = (config.completion.image_size, config.completion.resolution);
    while state.epoch < config.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut state.rng);
        let mut sums = [0.0; 3];
        let mut batches = 0;
        let mut stopped = false;
        for chunk in order.chunks(config.batch) {
            if config.max_steps.is_some_and(|m| state.step >= m) {
                stopped = true;
                break;
            }
            let refs: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (x, t) = batch_tensors(&refs, w, n)?;
            let pred = state.net.forward(&x)?;
            let l_voxel = voxel_loss(&pred, &t)?;
            let (epoch, step) = (state.epoch, state.step);
            sums[0] += finite(l_voxel.item()?, epoch, step, "voxel loss")?;
            let total = match critic {
                Some(c) if alpha > 0.0 => {
                    let l_nat = naturalness_loss(c, &pred)?;
                    sums[1] += finite(l_nat.item()?, epoch, step, "naturalness loss")?;
                    combined_loss(&l_voxel, &l_nat, alpha)?
                }
                Some(c) => {
                    let l_nat = no_grad(|| naturalness_loss(c, &pred.detach()))?;
                    sums[1] += finite(l_nat.item()?, epoch, step, "naturalness loss")?;
                    l_voxel
                }
                None => l_voxel,
            };
            sums[2] += finite(total.item()?, epoch, step, "total loss")?;
            let grads = backward(&total, &state.net.params().tensors(), false)?;
            state.sgd.step(state.net.params_mut(), &grads, config.precision)?;
            state.step += 1;
            batches += 1;
        }
        if batches > 0 {
            let mean = |s: f64| s / batches as f64;
            let mut row = vec![state.epoch as f64, mean(sums[0])];
            if critic.is_some() {
                row.extend([mean(sums[1]), mean(sums[2])]);
            }
            curve.rows.push(row);
        }
        if stopped {
            break;
        }
        state.epoch += 1;
    }
    Ok(())
}

fn completion_checkpoint(config: &TrainConfig, state: &CompletionState, critic: Option<&Critic>) -> Checkpoint {
    let mut meta = new_meta(config.stage, config.seed, &state.rng);
    meta.epoch = state.epoch;
    meta.step = state.step;
    meta.completion = Some(state.net.config().clone());
    meta.alpha = state.alpha;
    let params = state.net.params();
    let mut arrays = params.to_arrays(COMPLETION);
    arrays.extend(state.sgd.state_arrays(params, COMPLETION_OPT));
    if let Some(c) = critic {
        meta.critic = Some(c.config().clone());
        meta.critic_checksum = Some(c.params().checksum());
        arrays.extend(c.params().to_arrays(CRITIC));
    }
    Checkpoint {
        meta,
        precision: config.precision,
        arrays,
    }
}

/// Supervised pre-training of the completion network with momentum SGD.
pub fn train_completion(config: &TrainConfig, samples: &[Sample]) -> Result<TrainOutcome> {
    config.validate()?;
    let resume = resume_checkpoint(config)?;
    let mut state = completion_state(config, resume.as_ref())?;
    let mut curve = LossCurve::new(&["epoch", "voxel_loss"]);
    run_completion(config, samples, &mut state, None, 0.0, &mut curve)?;
    Ok(TrainOutcome {
        checkpoint: completion_checkpoint(config, &state, None),
        curve,
        calibration: None,
    })
}

/// Fine-tunes the completion network against the frozen pretrained critic
/// with `L_voxel + α·L_natural`.
pub fn finetune(config: &TrainConfig, samples: &[Sample]) -> Result<TrainOutcome> {
    config.validate()?;
    let resume = resume_checkpoint(config)?;
    let critic = match &resume {
        Some(ck) => ck.critic()?,
        None => {
            let path = config
                .critic_from
                .as_ref()
                .ok_or_else(|| Error::MissingKey("critic_from".into()))?;
            load_checkpoint(path)?.critic()?
        }
    };
    check_same(critic.config(), &config.critic, "critic")?;
    if resume.is_none() && config.init_from.is_none() {
        return Err(Error::MissingKey("init_from".into()));
    }
    let before = critic.params().checksum();
    let mut state = completion_state(config, resume.as_ref())?;
    let frozen = critic.frozen();
    let mut calibration = None;
    let alpha = match (state.alpha, config.alpha) {
        (Some(a), _) => a,
        (None, Alpha::Value(a)) => a,
        (None, Alpha::Auto) => {
            if samples.is_empty() {
                return Err(Error::Calibration("no samples to calibrate on".into()));
            }
            let take = config.batch.min(samples.len());
            let refs: Vec<&Sample> = samples[..take].iter().collect();
            let (x, t) = batch_tensors(&refs, config.completion.image_size, config.completion.resolution)?;
            let cal = calibrate_alpha(&state.net, &frozen, &x, &t)?;
            calibration = Some(cal);
            cal.alpha
        }
    };
    state.alpha = Some(alpha);
    let mut curve = LossCurve::new(&["epoch", "voxel_loss", "naturalness_loss", "total_loss"]);
    run_completion(config, samples, &mut state, Some(&frozen), alpha, &mut curve)?;
    if critic.params().checksum() != before {
        return Err(Error::Internal("critic parameters changed during fine-tuning".into()));
    }
    Ok(TrainOutcome {
        checkpoint: completion_checkpoint(config, &state, Some(&critic)),
        curve,
        calibration,
    })
}

fn normal_batch(rng: &mut ChaCha8Rng, b: usize, dim: usize) -> Result<Tensor> {
    let z = (0..b * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(z, &[b, dim])
}

/// Adversarial pre-training of generator and critic with Adam:
/// `critic_iters` critic updates on the gradient-penalty objective per
/// generator update.
pub fn train_gan(config: &TrainConfig, shapes: &[Vec<f64>]) -> Result<TrainOutcome> {
    config.validate()?;
    let n = config.critic.resolution;
    if shapes.is_empty() {
        return Err(Error::invalid("no training shapes"));
    }
    if let Some(s) = shapes.iter().find(|s| s.len() != n.pow(3)) {
        return Err(Error::Shape {
            op: "train_gan",
            lhs: vec![s.len()],
            rhs: vec![n.pow(3)],
        });
    }
    let lr = config.learning_rate();
    let adam = |p| Adam::new(p, lr, config.beta1, config.beta2, config.adam_eps);
    let resume = resume_checkpoint(config)?;
    let (mut gen, mut critic, mut opt_g, mut opt_c, mut rng, mut epoch, mut step) = match &resume {
        Some(ck) => {
            let gen = ck.generator()?;
            let critic = ck.critic()?;
            check_same(gen.config(), &config.generator, "generator")?;
            check_same(critic.config(), &config.critic, "critic")?;
            let mut og = adam(gen.params());
            og.load_state(gen.params(), &ck.arrays, GENERATOR_OPT, ck.adam_step(GENERATOR_OPT))?;
            let mut oc = adam(critic.params());
            oc.load_state(critic.params(), &ck.arrays, CRITIC_OPT, ck.adam_step(CRITIC_OPT))?;
            (gen, critic, og, oc, ck.meta.rng.restore()?, ck.meta.epoch, ck.meta.step)
        }
        None => {
            let mut init = ChaCha8Rng::seed_from_u64(config.seed);
            let mut gen = Generator::new(config.generator.clone(), init.random())?;
            let mut critic = Critic::new(config.critic.clone(), init.random())?;
            gen.params_mut().round(config.precision)?;
            critic.params_mut().round(config.precision)?;
            let (og, oc) = (adam(gen.params()), adam(critic.params()));
            (gen, critic, og, oc, loop_rng(config.seed, 2), 0, 0)
        }
    };
    let b = config.batch;
    let latent = config.generator.latent_dim;
    let iterations = shapes.len().div_ceil(b);
    let mut curve = LossCurve::new(&["epoch", "critic_loss", "penalty", "wasserstein", "generator_loss"]);
    'epochs: while epoch < config.epochs {
        let mut sums = [0.0; 4];
        let mut done = 0;
        for _ in 0..iterations {
            if config.max_steps.is_some_and(|m| step >= m) {
                if done > 0 {
                    curve.rows.push(gan_row(epoch, sums, done, config.critic_iters));
                }
                break 'epochs;
            }
            for _ in 0..config.critic_iters {
                let mut real = Vec::with_capacity(b * n.pow(3));
                for _ in 0..b {
                    real.extend_from_slice(&shapes[rng.random_range(0..shapes.len())]);
                }
                let real = Tensor::new(real, &[b, n, n, n])?;
                let z = normal_batch(&mut rng, b, latent)?;
                let fake = no_grad(|| gen.forward_train(&z))?.detach();
                let losses = wgan_gp_losses(&critic, &real, &fake, config.lambda, rng.random())?;
                sums[0] += finite(losses.critic_loss.item()?, epoch, step, "critic loss")?;
                sums[1] += losses.penalty.item()?;
                sums[2] += losses.wasserstein.item()?;
                let grads = backward(&losses.critic_loss, &critic.params().tensors(), false)?;
                opt_c.step(critic.params_mut(), &grads, config.precision)?;
            }
            let z = normal_batch(&mut rng, b, latent)?;
            let fake = gen.forward_train(&z)?;
            let g_loss = naturalness_loss(&critic.frozen(), &fake)?;
            sums[3] += finite(g_loss.item()?, epoch, step, "generator loss")?;
            let grads = backward(&g_loss, &gen.params().tensors(), false)?;
            opt_g.step(gen.params_mut(), &grads, config.precision)?;
            step += 1;
            done += 1;
        }
        curve.rows.push(gan_row(epoch, sums, done, config.critic_iters));
        epoch += 1;
    }
    let mut meta = new_meta(Stage::Gan, config.seed, &rng);
    meta.epoch = epoch;
    meta.step = step;
    meta.generator = Some(gen.config().clone());
    meta.critic = Some(critic.config().clone());
    meta.critic_checksum = Some(critic.params().checksum());
    meta.adam_steps = vec![(GENERATOR_OPT.into(), opt_g.t), (CRITIC_OPT.into(), opt_c.t)];
    let mut arrays = gen.params().to_arrays(GENERATOR);
    arrays.extend(gen.buffers().into_iter().map(|(k, s, v)| (format!("{GENERATOR_BN}{k}"), s, v)));
    arrays.extend(critic.params().to_arrays(CRITIC));
    arrays.extend(opt_g.state_arrays(gen.params(), GENERATOR_OPT));
    arrays.extend(opt_c.state_arrays(critic.params(), CRITIC_OPT));
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            meta,
            precision: config.precision,
            arrays,
        },
        curve,
        calibration: None,
    })
}

fn gan_row(epoch: usize, sums: [f64; 4], iterations: usize, critic_iters: usize) -> Vec<f64> {
    let c = (iterations * critic_iters) as f64;
    vec![
        epoch as f64,
        sums[0] / c,
        sums[1] / c,
        sums[2] / c,
        sums[3] / iterations as f64,
    ]
}

