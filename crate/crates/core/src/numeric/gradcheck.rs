//! Central-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::numeric::{Graph, ParamStore, Var};
use crate::scalar::Scalar;

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`; the floor keeps
/// vanishing gradients from dividing by rounding noise.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Denominator floor used by [`grad_check`].
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Compares the tape gradient of `loss_fn` against `(f(θ+h) − f(θ−h)) / 2h`.
///
/// At most `max_coords` coordinates per parameter are perturbed, spread
/// evenly over the flat index range. `loss_fn` must be deterministic.
pub fn grad_check<T, F>(
    store: &mut ParamStore<T>,
    loss_fn: F,
    h: f64,
    max_coords: usize,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
{
    let eval = |store: &ParamStore<T>| -> Result<f64> {
        let mut g = Graph::new();
        let loss = loss_fn(&mut g, store)?;
        let v = g.item(loss).as_f64();
        if !v.is_finite() {
            return Err(Error::Numeric("loss is not finite".into()));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    if !g.item(loss).is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    g.backward(loss)?;
    store.zero_grad();
    g.accumulate_param_grads(store);

    let hh = T::lit(h);
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: None, coords_checked: 0 };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).value.len();
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        for k in (0..n).step_by(stride) {
            let analytic = store.get(id).grad.data()[k].as_f64();
            let orig = store.get(id).value.data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + hh;
            let up = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = orig - hh;
            let down = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let e = rel_err(analytic, numeric, REL_ERR_FLOOR);
            report.coords_checked += 1;
            if report.worst.is_none() || e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some((store.get(id).name.clone(), k));
            }
        }
    }
    Ok(report)
}
