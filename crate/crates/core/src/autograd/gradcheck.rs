//! Central finite-difference checks of analytic gradients, in `f64`.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1e-8, |analytic| + |numeric|)`.
    pub max_rel_err: f64,
    /// (operand index, flat coordinate) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

impl GradCheckReport {
    fn new() -> Self {
        GradCheckReport {
            max_rel_err: 0.0,
            worst: None,
            coordinates: 0,
        }
    }

    fn record(&mut self, operand: usize, coord: usize, analytic: f64, numeric: f64) -> Result<()> {
        if !analytic.is_finite() || !numeric.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient at operand {operand}, coordinate {coord}: analytic {analytic}, numeric {numeric}"
            )));
        }
        let err = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
        if err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(err);
            self.worst = Some((operand, coord));
        }
        self.coordinates += 1;
        Ok(())
    }
}

fn eval_scalar(g: &Graph<'_, f64>, out: Var) -> Result<f64> {
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::Shape(format!("grad_check: function must return one element, got {}", v.len())));
    }
    if !v[0].is_finite() {
        return Err(Error::Numeric(format!("grad_check: function value {} is not finite", v[0])));
    }
    Ok(v[0])
}

/// Checks `f`'s gradient with respect to each of `inputs`.
///
/// `f` must be deterministic (no dropout). Points of non-differentiability
/// (max-pool ties, relu at zero) are not detected; callers keep inputs away
/// from them, e.g. with [`separate_ties`].
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>]) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let run = |inputs: &[Tensor<f64>]| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new(false, 0);
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let value = eval_scalar(&g, out)?;
        g.backward(out)?;
        let grads = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
            .collect();
        Ok((value, grads))
    };
    let value_at = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new(false, 0);
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        eval_scalar(&g, out)
    };

    let (_, analytic) = run(inputs)?;
    let mut report = GradCheckReport::new();
    let mut probe = inputs.to_vec();
    for (op, grads) in analytic.iter().enumerate() {
        for coord in 0..inputs[op].len() {
            let orig = inputs[op].data()[coord];
            probe[op].data_mut()[coord] = orig + FD_STEP;
            let plus = value_at(&probe)?;
            probe[op].data_mut()[coord] = orig - FD_STEP;
            let minus = value_at(&probe)?;
            probe[op].data_mut()[coord] = orig;
            report.record(op, coord, grads[coord], (plus - minus) / (2.0 * FD_STEP))?;
        }
    }
    Ok(report)
}

/// Checks `f`'s gradient with respect to every parameter in `params`.
/// The operand index in the report is the parameter id.
pub fn grad_check_params<F>(f: F, params: &ParamSet<f64>) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::with_params(params, false, 0);
        let out = f(&mut g)?;
        eval_scalar(&g, out)?;
        g.backward(out)?;
        g.param_grads()?
    };
    let value_at = |p: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::with_params(p, false, 0);
        let out = f(&mut g)?;
        eval_scalar(&g, out)
    };

    let mut report = GradCheckReport::new();
    let mut probe = params.clone();
    for (pi, grads) in analytic.iter().enumerate() {
        let id = ParamId(pi);
        for coord in 0..grads.len() {
            let orig = params.get(id).data()[coord];
            probe.get_mut(id).data_mut()[coord] = orig + FD_STEP;
            let plus = value_at(&probe)?;
            probe.get_mut(id).data_mut()[coord] = orig - FD_STEP;
            let minus = value_at(&probe)?;
            probe.get_mut(id).data_mut()[coord] = orig;
            report.record(pi, coord, grads[coord], (plus - minus) / (2.0 * FD_STEP))?;
        }
    }
    Ok(report)
}

/// Spreads the values of each column of a `[T×f]` (or `[N×T×f]`) tensor so
/// that no two entries of a pooling column lie within `min_gap` of each other.
/// Used to keep max-over-time checks away from ties.
pub fn separate_ties(t: &mut Tensor<f64>, min_gap: f64) {
    let shape = t.shape().to_vec();
    let (n, steps, f) = match shape[..] {
        [steps, f] => (1, steps, f),
        [n, steps, f] => (n, steps, f),
        _ => return,
    };
    let data = t.data_mut();
    for s in 0..n {
        for j in 0..f {
            let mut idx: Vec<usize> = (0..steps).map(|p| (s * steps + p) * f + j).collect();
            idx.sort_by(|&a, &b| data[a].total_cmp(&data[b]));
            for w in 1..idx.len() {
                let (lo, hi) = (data[idx[w - 1]], data[idx[w]]);
                if hi - lo < min_gap {
                    data[idx[w]] = lo + min_gap;
                }
            }
        }
    }
}
