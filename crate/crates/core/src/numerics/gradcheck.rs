use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Error;

/// Per-parameter and overall outcome of a finite-difference check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error for each parameter tensor, in input order.
    pub per_param: Vec<f64>,
    pub max_rel_error: f64,
}

/// Symmetric relative error used by [`grad_check`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn evaluate<F, E>(f: &F, params: &[Tensor]) -> Result<(Tape, Vec<Var>, Var), E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<Error>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if !value.is_scalar() {
        return Err(Error::NotScalar(value.shape().to_vec()).into());
    }
    if !value.item().is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()).into());
    }
    Ok((tape, vars, out))
}

/// Compares tape gradients of `f` against central differences with step `eps`.
///
/// `f` records a scalar on the given tape from the parameter leaves it is
/// handed. Returns the max over all entries of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F, E>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<Error>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")).into());
    }
    let (tape, vars, out) = evaluate(&f, params)?;
    let grads = tape.backward(out).map_err(E::from)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|v| grads.wrt(*v).expect("parameter leaf").clone())
        .collect();
    if let Some(bad) = analytic.iter().position(|g| !g.all_finite()) {
        return Err(Error::NonFinite(format!("analytic gradient of parameter {bad}")).into());
    }

    let mut work: Vec<Tensor> = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut worst = 0.0f64;
        for i in 0..params[p].numel() {
            let base = params[p].data()[i];
            work[p].data_mut()[i] = base + eps;
            let (t, _, o) = evaluate(&f, &work)?;
            let plus = t.value(o).item();
            work[p].data_mut()[i] = base - eps;
            let (t, _, o) = evaluate(&f, &work)?;
            let minus = t.value(o).item();
            work[p].data_mut()[i] = base;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[p].data()[i], numeric));
        }
        per_param.push(worst);
    }
    let max_rel_error = per_param.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
    })
}
