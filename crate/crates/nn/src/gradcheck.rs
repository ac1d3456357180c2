//! Central finite-difference verification of recorded gradients.

use crate::array::Array;
use crate::error::Result;
use crate::tape::{Tape, Var};

/// Perturbation used by [`check_gradients`].
pub const DEFAULT_EPS: f64 = 1e-5;

/// Largest relative disagreement between analytic and numeric gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Builds `f` on a fresh tape with `inputs` as differentiable leaves, runs
/// backward, then compares every input coordinate against
/// `(f(x + eps) - f(x - eps)) / (2 eps)`.
pub fn check_gradients<F>(
    inputs: &[Array<f64>],
    eps: f64,
    floor: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, a)| tape.grad(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; a.len()]))
        .collect();

    let eval = |perturbed: &[Array<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|a| t.leaf(a.clone())).collect();
        let o = f(&mut t, &vs)?;
        Ok(t.scalar(o))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_index: 0,
        checked: 0,
    };
    let mut work: Vec<Array<f64>> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        for idx in 0..input.len() {
            let orig = input.data()[idx];
            work[which].data_mut()[idx] = orig + eps;
            let plus = eval(&work)?;
            work[which].data_mut()[idx] = orig - eps;
            let minus = eval(&work)?;
            work[which].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[which][idx], numeric, floor);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_input = which;
                report.worst_index = idx;
            }
        }
    }
    Ok(report)
}
