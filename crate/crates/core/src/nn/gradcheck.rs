use serde::Serialize;

use super::Parameters;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    /// max over parameters of `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`
    pub max_rel_error: f64,
    /// Parameter index where the maximum was attained.
    pub worst_index: Option<usize>,
    pub params: usize,
}

/// Compares the analytic gradient a loss writes into `model`'s buffers with
/// central differences of step `h`.
///
/// `loss` must compute the scalar loss and add its gradient into the
/// buffers; the harness zeroes them before the analytic evaluation and
/// again before returning. Parameters are restored bitwise.
pub fn grad_check<M, F>(model: &mut M, h: f64, mut loss: F) -> Result<GradCheckReport>
where
    M: Parameters + ?Sized,
    F: FnMut(&mut M) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Input("finite-difference step must be positive".into()));
    }
    model.zero_grad();
    let base = loss(model)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite ({base})")));
    }
    let analytic = model.grads_vec();
    let p0 = model.params_vec();
    let mut p = p0.clone();
    let mut max_rel = 0.0_f64;
    let mut worst = None;
    for j in 0..p0.len() {
        p[j] = p0[j] + h;
        model.assign_params(&p);
        let plus = loss(model)?;
        p[j] = p0[j] - h;
        model.assign_params(&p);
        let minus = loss(model)?;
        p[j] = p0[j];
        if !plus.is_finite() || !minus.is_finite() {
            model.assign_params(&p0);
            return Err(Error::Numeric(format!("loss is not finite around parameter {j}")));
        }
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[j];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        if rel > max_rel || worst.is_none() && rel == max_rel && rel > 0.0 {
            max_rel = rel;
            worst = Some(j);
        }
    }
    model.assign_params(&p0);
    model.zero_grad();
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst_index: worst,
        params: p0.len(),
    })
}
