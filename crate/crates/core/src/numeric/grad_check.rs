//! Central finite-difference verification of tape gradients.

use super::{NumericError, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Which input and flat coordinate produced the maximum.
    pub worst_input: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
    /// Coordinates skipped because both estimates were below the floor
    /// ([`NEGLIGIBLE`] by default), where the ratio only measures rounding
    /// noise.
    pub negligible: usize,
}

/// Gradient magnitude below which a coordinate counts as structurally zero.
pub const NEGLIGIBLE: f64 = 1e-10;

/// `|a - n| / max(|a|, |n|, 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Checks the gradient of scalar-valued `f` at `point`.
pub fn grad_check<F, E>(f: F, point: &Tensor, step: f64) -> Result<f64, E>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>, E>,
    E: From<NumericError>,
{
    let report = grad_check_many(|_, xs| f(xs[0]), std::slice::from_ref(point), step)?;
    Ok(report.max_rel_error)
}

/// Checks the gradient of scalar-valued `f` with respect to every
/// coordinate of every input.
pub fn grad_check_many<F, E>(f: F, points: &[Tensor], step: f64) -> Result<GradCheckReport, E>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, E>,
    E: From<NumericError>,
{
    grad_check_floor(f, points, step, NEGLIGIBLE)
}

/// Like [`grad_check_many`], skipping coordinates where both estimates are
/// below `floor` instead of [`NEGLIGIBLE`].
pub fn grad_check_floor<F, E>(f: F, points: &[Tensor], step: f64, floor: f64) -> Result<GradCheckReport, E>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, E>,
    E: From<NumericError>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = points.iter().map(|p| tape.variable(p.clone())).collect();
        let out = f(&tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };

    let eval = |inputs: &[Tensor]| -> Result<f64, E> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&tape, &vars)?;
        let value = out
            .value()
            .scalar_value()
            .ok_or(NumericError::NonScalarLoss { shape: out.shape() })?;
        if value.is_finite() {
            Ok(value)
        } else {
            Err(NumericError::NonFinite { op: "grad_check" }.into())
        }
    };

    let mut inputs: Vec<Tensor> = points.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
        negligible: 0,
    };
    for k in 0..inputs.len() {
        for idx in 0..inputs[k].len() {
            let original = inputs[k].data()[idx];
            inputs[k].data_mut()[idx] = original + step;
            let plus = eval(&inputs)?;
            inputs[k].data_mut()[idx] = original - step;
            let minus = eval(&inputs)?;
            inputs[k].data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[k].data()[idx];
            if a.abs() < floor && numeric.abs() < floor {
                report.negligible += 1;
                continue;
            }
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.coordinates == 1 {
                report = GradCheckReport {
                    max_rel_error: err,
                    worst_input: k,
                    worst_index: idx,
                    analytic: a,
                    numeric,
                    coordinates: report.coordinates,
                    negligible: report.negligible,
                };
            }
        }
    }
    Ok(report)
}
