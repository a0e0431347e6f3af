//! Central finite-difference gradient checking.
//!
//! Independent of the backward rules: it only evaluates the forward pass.

use super::{rng_tensor, Distribution, SeedStream, Tape, Tensor, Var};
use crate::error::Result;

pub const FD_EPS: f64 = 1e-5;

/// Relative error with a floor on the denominator so that near-zero
/// gradients are compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    rel_err_floor(analytic, numeric, 1e-6)
}

fn rel_err_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Standard-normal tensor from a fixed seed.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut s = SeedStream::new(seed);
    rng_tensor(
        &mut s,
        shape,
        Distribution::Gaussian {
            mean: 0.0,
            std: 1.0,
        },
    )
}

/// Maximum per-coordinate relative error between backward gradients and
/// central differences of `f` with respect to every input.
pub fn check_gradients<F>(inputs: &[Tensor], f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| t.constant(v.clone())).collect();
        let out = f(&mut t, &vars)?;
        Ok(t.value(out).item())
    };

    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| t.param(v.clone())).collect();
    let out = f(&mut t, &vars)?;
    let value = t.value(out).item();
    t.backward(out)?;
    // Rounding in `up - down` grows with |f|; the floor follows it.
    let floor = 1e-6 * value.abs().max(1.0);
    let analytic: Vec<Tensor> = vars.iter().map(|&v| t.grad_tensor(v)).collect();

    let mut worst = 0.0_f64;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + FD_EPS;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - FD_EPS;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            worst = worst.max(rel_err_floor(grad.data()[j], numeric, floor));
        }
    }
    Ok(worst)
}
