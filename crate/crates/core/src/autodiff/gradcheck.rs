//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward function, so it is an
//! oracle independent of the backward rules it checks.

use super::{backward, Tensor};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error over all checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Relative error with a floor on the denominator so that gradients that
/// are both essentially zero compare as equal.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference `(f(x + h e_i) - f(x - h e_i)) / 2h` for each index in
/// `coords` of a flat parameter vector.
pub fn numeric_gradient(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    coords: &[usize],
    h: f64,
) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe)?;
            probe[i] = orig - h;
            let down = f(&probe)?;
            probe[i] = orig;
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// Compares the reverse-mode gradient of a scalar function of several
/// inputs against central differences.
///
/// `f` builds the scalar output from leaf tensors; it is called once with
/// gradient-requiring leaves for the analytic pass and repeatedly with
/// constants for the numeric pass. `coords[k]` lists the flat indices of
/// input `k` to probe.
pub fn check_gradients(
    f: &dyn Fn(&[Tensor]) -> Result<Tensor>,
    inputs: &[Tensor],
    coords: &[Vec<usize>],
    h: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    let leaves: Vec<Tensor> = inputs.iter().map(Tensor::requiring_grad).collect();
    let out = f(&leaves)?;
    let refs: Vec<&Tensor> = leaves.iter().collect();
    let analytic = backward(&out, &refs, false)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
    };
    for (k, input) in inputs.iter().enumerate() {
        let shape = input.shape().to_vec();
        let mut eval = |x: &[f64]| -> Result<f64> {
            let mut args: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
            args[k] = Tensor::new(x.to_vec(), &shape)?;
            f(&args)?.item()
        };
        let numeric = numeric_gradient(&mut eval, input.data(), &coords[k], h)?;
        for (&i, n) in coords[k].iter().zip(numeric) {
            let err = relative_error(analytic[k].data()[i], n, floor);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}
