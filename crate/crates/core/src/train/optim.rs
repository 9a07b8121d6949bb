use crate::autodiff::{Precision, Tensor};
use crate::error::{Error, Result};
use crate::nets::ParamSet;

/// Euclidean norm over all gradient tensors together.
pub fn grad_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

fn check_grads(params: &ParamSet, grads: &[Tensor], state: &[Vec<f64>]) -> Result<()> {
    if grads.len() != params.len() || state.len() != params.len() {
        return Err(Error::invalid(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.at(i).shape() {
            return Err(Error::Shape {
                op: "optimizer step",
                lhs: params.at(i).shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    Ok(())
}

fn state_arrays(params: &ParamSet, prefix: &str, slots: &[(&str, &[Vec<f64>])]) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    for (slot, values) in slots {
        for ((name, t), v) in params.iter().zip(values.iter()) {
            out.push((format!("{prefix}{slot}.{name}"), t.shape().to_vec(), v.clone()));
        }
    }
    out
}

fn load_slot(
    params: &ParamSet,
    arrays: &[(String, Vec<usize>, Vec<f64>)],
    prefix: &str,
    slot: &str,
) -> Result<Vec<Vec<f64>>> {
    params
        .iter()
        .map(|(name, t)| {
            let key = format!("{prefix}{slot}.{name}");
            let (_, _, data) = arrays
                .iter()
                .find(|(n, _, _)| *n == key)
                .ok_or_else(|| Error::NotFound(format!("optimizer state `{key}`")))?;
            if data.len() != t.numel() {
                return Err(Error::invalid(format!("optimizer state `{key}` has the wrong length")));
            }
            Ok(data.clone())
        })
        .collect()
}

/// Momentum SGD: `v ← μ·v + g`, `θ ← θ - lr·v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(params: &ParamSet, lr: f64, momentum: f64) -> Sgd {
        Sgd {
            lr,
            momentum,
            velocity: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], precision: Precision) -> Result<()> {
        check_grads(params, grads, &self.velocity)?;
        for (i, g) in grads.iter().enumerate() {
            let v = &mut self.velocity[i];
            for (vj, gj) in v.iter_mut().zip(g.data()) {
                *vj = precision.round(self.momentum * *vj + gj);
            }
            let data = params
                .at(i)
                .data()
                .iter()
                .zip(v.iter())
                .map(|(p, vj)| precision.round(p - self.lr * vj))
                .collect();
            params.set(i, data)?;
        }
        Ok(())
    }

    pub fn state_arrays(&self, params: &ParamSet, prefix: &str) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        state_arrays(params, prefix, &[("velocity", &self.velocity)])
    }

    pub fn load_state(&mut self, params: &ParamSet, arrays: &[(String, Vec<usize>, Vec<f64>)], prefix: &str) -> Result<()> {
        self.velocity = load_slot(params, arrays, prefix, "velocity")?;
        Ok(())
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Adam {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], precision: Precision) -> Result<()> {
        check_grads(params, grads, &self.m)?;
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let mut data = params.at(i).data().to_vec();
            for (j, &gj) in g.data().iter().enumerate() {
                let m = precision.round(self.beta1 * self.m[i][j] + (1.0 - self.beta1) * gj);
                let v = precision.round(self.beta2 * self.v[i][j] + (1.0 - self.beta2) * gj * gj);
                self.m[i][j] = m;
                self.v[i][j] = v;
                data[j] = precision.round(data[j] - self.lr * (m / c1) / ((v / c2).sqrt() + self.eps));
            }
            params.set(i, data)?;
        }
        Ok(())
    }

    pub fn state_arrays(&self, params: &ParamSet, prefix: &str) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        state_arrays(params, prefix, &[("m", &self.m), ("v", &self.v)])
    }

    pub fn load_state(
        &mut self,
        params: &ParamSet,
        arrays: &[(String, Vec<usize>, Vec<f64>)],
        prefix: &str,
        t: u64,
    ) -> Result<()> {
        self.m = load_slot(params, arrays, prefix, "m")?;
        self.v = load_slot(params, arrays, prefix, "v")?;
        self.t = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(x: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("x", Tensor::new(vec![x], &[1]).unwrap());
        p
    }

    #[test]
    fn sgd_plain_step() {
        let mut p = single(1.0);
        let mut opt = Sgd::new(&p, 0.1, 0.0);
        // f(x) = x²/2 has gradient x.
        let g = Tensor::new(vec![p.at(0).data()[0]], &[1]).unwrap();
        opt.step(&mut p, &[g], Precision::F64).unwrap();
        assert!((p.at(0).data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_steps() {
        let mut p = single(0.0);
        let mut opt = Sgd::new(&p, 0.1, 0.9);
        let g = Tensor::new(vec![1.0], &[1]).unwrap();
        opt.step(&mut p, std::slice::from_ref(&g), Precision::F64).unwrap();
        assert!((p.at(0).data()[0] + 0.1).abs() < 1e-15);
        opt.step(&mut p, &[g], Precision::F64).unwrap();
        assert!((p.at(0).data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr() {
        for g in [1e-3, 0.5, -20.0, 7e4] {
            let mut p = single(0.0);
            let mut opt = Adam::new(&p, 0.001, 0.9, 0.999, 1e-8);
            opt.step(&mut p, &[Tensor::new(vec![g], &[1]).unwrap()], Precision::F64).unwrap();
            let expect = -0.001 * g / (g.abs() + 1e-8);
            assert!((p.at(0).data()[0] - expect).abs() < 1e-15);
            assert!((p.at(0).data()[0].abs() - 0.001).abs() < 1e-7);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = single(0.0);
        let mut opt = Sgd::new(&p, 0.1, 0.0);
        assert!(opt.step(&mut p, &[Tensor::zeros(&[2])], Precision::F64).is_err());
    }

    #[test]
    fn f32_mode_rounds_parameters() {
        let mut p = single(1.0);
        let mut opt = Sgd::new(&p, 0.1, 0.0);
        opt.step(&mut p, &[Tensor::new(vec![1.0 / 3.0], &[1]).unwrap()], Precision::F32).unwrap();
        let v = p.at(0).data()[0];
        assert_eq!(v, v as f32 as f64);
    }

    #[test]
    fn state_round_trip() {
        let mut p = single(0.0);
        let mut opt = Adam::new(&p, 0.01, 0.9, 0.999, 1e-8);
        opt.step(&mut p, &[Tensor::new(vec![2.0], &[1]).unwrap()], Precision::F64).unwrap();
        let arrays = opt.state_arrays(&p, "opt.");
        let mut other = Adam::new(&p, 0.01, 0.9, 0.999, 1e-8);
        other.load_state(&p, &arrays, "opt.", opt.t).unwrap();
        assert_eq!(other, opt);
    }
}
