use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelParams, Objective};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-6;

/// Gradient magnitudes below this are compared in absolute terms.
const SCALE_FLOOR: f64 = 1e-6;

/// Largest relative error between the analytic gradient of `objective` and a
/// central finite difference, over `probes` randomly chosen coordinates.
pub fn grad_check(params: &ModelParams, objective: &dyn Objective, seed: u64, probes: usize) -> Result<f64> {
    let (_, analytic) = objective.value_and_grad(params)?;
    let flat_grad: Vec<f64> = analytic.slices().concat();
    let total = flat_grad.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, total, probes.min(total));
    let mut worst = 0.0f64;
    for idx in picks.iter() {
        let mut shifted = params.clone();
        let (up, down) = {
            let mut eval = |delta: f64| -> Result<f64> {
                set_flat(&mut shifted, idx, params, delta);
                objective.value(&shifted)
            };
            (eval(FD_STEP)?, eval(-FD_STEP)?)
        };
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = flat_grad[idx];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(SCALE_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}

fn set_flat(target: &mut ModelParams, mut idx: usize, base: &ModelParams, delta: f64) {
    for (dst, src) in target.slices_mut().into_iter().zip(base.slices()) {
        if idx < dst.len() {
            dst[idx] = src[idx] + delta;
            return;
        }
        idx -= dst.len();
    }
}
