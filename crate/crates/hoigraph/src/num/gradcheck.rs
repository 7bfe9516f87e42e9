//! Finite-difference verification of accumulated analytic gradients.

use crate::error::Result;
use crate::num::matrix::Param;

/// Compare analytic gradients against central finite differences.
///
/// `eval(model, accumulate)` must return the scalar loss; when `accumulate`
/// is true it must also add the analytic gradients into the parameters
/// yielded by `visit`. Returns the maximum relative error over every
/// parameter coordinate. The denominator is floored at 1, so coordinates
/// whose gradients vanish compare by absolute error; a one-sided rectifier
/// kink right at a dead unit otherwise turns finite-difference dust into a
/// spurious full-scale disagreement.
pub fn grad_check<M, E, V>(model: &mut M, mut eval: E, mut visit: V, eps: f64) -> Result<f64>
where
    E: FnMut(&mut M, bool) -> Result<f64>,
    V: for<'a> FnMut(&'a mut M) -> Vec<&'a mut Param>,
{
    for p in visit(model) {
        p.zero_grad();
    }
    eval(model, true)?;
    let analytic: Vec<Vec<f64>> = visit(model)
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();

    let mut max_rel = 0.0f64;
    let n_params = analytic.len();
    // Coordinates are addressed by index on purpose: every perturbation
    // re-borrows the parameter list through `visit`.
    #[allow(clippy::needless_range_loop)]
    for pi in 0..n_params {
        for ci in 0..analytic[pi].len() {
            let original = visit(model)[pi].value.data()[ci];
            visit(model)[pi].value.data_mut()[ci] = original + eps;
            let plus = eval(model, false)?;
            visit(model)[pi].value.data_mut()[ci] = original - eps;
            let minus = eval(model, false)?;
            visit(model)[pi].value.data_mut()[ci] = original;

            let fd = (plus - minus) / (2.0 * eps);
            let a = analytic[pi][ci];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
