use rand::seq::index::sample;
use rand::Rng;

use super::param::HasParams;
use crate::error::{Error, Result};

/// Compares analytic gradients against central differences.
///
/// `objective` is called on a target whose gradients were just cleared; it
/// accumulates analytic gradients and returns the loss. At most `max_coords` coordinates (sampled with `rng`) are probed.
/// Returns `max |g_a − g_fd| / max(1, |g_a|, |g_fd|)`.
pub fn grad_check<M, F, R>(target: &mut M, mut objective: F, eps: f64, max_coords: usize, rng: &mut R) -> Result<f64>
where
    M: HasParams + ?Sized,
    F: FnMut(&mut M) -> Result<f64>,
    R: Rng + ?Sized,
{
    let mut eval = |t: &mut M| -> Result<f64> {
        t.zero_grad();
        let loss = objective(t)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss is {loss}")));
        }
        Ok(loss)
    };

    eval(target)?;
    let mut coords = Vec::new();
    let mut analytic = Vec::new();
    for (pi, p) in target.params_mut().into_iter().enumerate() {
        for (vi, &g) in p.grad.data().iter().enumerate() {
            coords.push((pi, vi));
            analytic.push(g);
        }
    }
    let picked: Vec<usize> = if coords.len() <= max_coords {
        (0..coords.len()).collect()
    } else {
        let mut idx = sample(rng, coords.len(), max_coords).into_vec();
        idx.sort_unstable();
        idx
    };

    let mut worst = 0.0f64;
    for k in picked {
        let (pi, vi) = coords[k];
        let original = target.params_mut()[pi].value.data()[vi];
        target.params_mut()[pi].value.data_mut()[vi] = original + eps;
        let plus = eval(target)?;
        target.params_mut()[pi].value.data_mut()[vi] = original - eps;
        let minus = eval(target)?;
        target.params_mut()[pi].value.data_mut()[vi] = original;
        let fd = (plus - minus) / (2.0 * eps);
        let ga = analytic[k];
        let err = (ga - fd).abs() / 1f64.max(ga.abs()).max(fd.abs());
        worst = worst.max(err);
    }
    // Leave the analytic gradients in place for the caller.
    eval(target)?;
    Ok(worst)
}
