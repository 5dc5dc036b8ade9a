use super::config::TrainConfig;
use crate::autograd::{ParamSet, Real};
use crate::error::{Error, Result};

/// Per-parameter running averages E[g²] and E[Δx²].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Real> {
    pub sq_grad: Vec<Vec<T>>,
    pub sq_update: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn zeros_like(params: &ParamSet<T>) -> Self {
        let sq_grad: Vec<Vec<T>> = params.iter().map(|(_, _, t)| vec![T::zero(); t.len()]).collect();
        OptimizerState {
            sq_update: sq_grad.clone(),
            sq_grad,
        }
    }

    pub fn matches(&self, params: &ParamSet<T>) -> bool {
        self.sq_grad.len() == params.len()
            && self.sq_update.len() == params.len()
            && params
                .iter()
                .enumerate()
                .all(|(k, (_, _, t))| self.sq_grad[k].len() == t.len() && self.sq_update[k].len() == t.len())
    }
}

/// Applies one Adadelta step to a single tensor in place and returns the
/// squared norm of the applied change.
pub fn adadelta_update<T: Real>(
    param: &mut [T],
    grad: &[T],
    sq_grad: &mut [T],
    sq_update: &mut [T],
    config: &TrainConfig,
) -> Result<f64> {
    let n = param.len();
    if grad.len() != n || sq_grad.len() != n || sq_update.len() != n {
        return Err(Error::Shape(format!(
            "adadelta: parameter has {n} elements, gradient {}, accumulators {}/{}",
            grad.len(),
            sq_grad.len(),
            sq_update.len()
        )));
    }
    let rho = T::from_f64(config.rho);
    let keep = T::one() - rho;
    let eps = T::from_f64(config.eps);
    let lr = T::from_f64(config.lr);
    let mut moved = 0.0;
    for i in 0..n {
        let g = grad[i];
        sq_grad[i] = rho * sq_grad[i] + keep * g * g;
        let delta = -((sq_update[i] + eps).sqrt() / (sq_grad[i] + eps).sqrt()) * g;
        sq_update[i] = rho * sq_update[i] + keep * delta * delta;
        param[i] = param[i] + lr * delta;
        moved += (lr * delta).as_f64().powi(2);
    }
    Ok(moved)
}

/// What a single optimizer step did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub grad_norm: f64,
    /// Gradient norm after clipping (equal to `grad_norm` when unclipped).
    pub clipped_norm: f64,
    pub update_norm: f64,
    pub skipped: bool,
}

/// Clips `grads` to the configured global norm and applies Adadelta to
/// every parameter. A step with any non-finite gradient is skipped.
pub fn apply_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &mut [Vec<T>],
    state: &mut OptimizerState<T>,
    config: &TrainConfig,
) -> Result<StepReport> {
    if grads.len() != params.len() || !state.matches(params) {
        return Err(Error::Shape(format!(
            "optimizer step over {} parameters got {} gradients",
            params.len(),
            grads.len()
        )));
    }
    let mut sq = 0.0f64;
    let mut finite = true;
    for g in grads.iter() {
        for &x in g {
            let v = x.as_f64();
            finite &= v.is_finite();
            sq += v * v;
        }
    }
    let grad_norm = sq.sqrt();
    if !finite {
        log::warn!("skipping optimizer step: non-finite gradient");
        return Ok(StepReport {
            grad_norm,
            clipped_norm: grad_norm,
            update_norm: 0.0,
            skipped: true,
        });
    }
    let mut clipped_norm = grad_norm;
    if let Some(bound) = config.clip_norm {
        if grad_norm > bound {
            let factor = T::from_f64(bound / grad_norm);
            grads.iter_mut().flatten().for_each(|x| *x = *x * factor);
            clipped_norm = grads.iter().flatten().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
        }
    }
    let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
    let mut update_sq = 0.0f64;
    for (k, id) in ids.into_iter().enumerate() {
        let p = params.get_mut(id).data_mut();
        update_sq += adadelta_update(p, &grads[k], &mut state.sq_grad[k], &mut state.sq_update[k], config)?;
    }
    Ok(StepReport {
        grad_norm,
        clipped_norm,
        update_norm: update_sq.sqrt(),
        skipped: false,
    })
}
