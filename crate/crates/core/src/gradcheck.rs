//! Central finite-difference gradient checking.

use crate::error::{PspError, Result};
use crate::tensor::Tensor;

const RESOLUTION_ULPS: f64 = 4.0;

/// Compares `analytic` against central differences of `f` around `x`.
///
/// Returns the largest per-coordinate relative error, with denominator
/// `max(|analytic|, |numeric|, 1e-8)`. Central differences cannot resolve a
/// slope finer than a few ulps of `max(|f|, 1)` over `2h`, so that much
/// disagreement is subtracted first; otherwise a true zero gradient is scored
/// against pure rounding noise. The `1` covers losses that are small only by
/// cancellation of order-one terms.
pub fn grad_check<F>(mut f: F, x: &Tensor, analytic: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if analytic.shape() != x.shape() {
        return Err(PspError::dim("grad_check", x.shape(), analytic.shape()));
    }
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for k in 0..x.data().len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[k] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let resolution = RESOLUTION_ULPS * f64::EPSILON * up.abs().max(down.abs()).max(1.0) / (2.0 * h);
        let a = analytic.data()[k];
        if !numeric.is_finite() || !a.is_finite() {
            return Err(PspError::Numeric(format!("non-finite gradient at coordinate {k}")));
        }
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(((a - numeric).abs() - resolution).max(0.0) / denom);
    }
    Ok(worst)
}

/// Runs `build` on a fresh tape to obtain both the loss value and the analytic
/// gradient with respect to the input leaf, then checks it.
pub fn grad_check_tape<B>(build: B, x: &Tensor, h: f64) -> Result<f64>
where
    B: Fn(&mut crate::autodiff::Tape, crate::autodiff::Var) -> Result<crate::autodiff::Var>,
{
    use crate::autodiff::Tape;
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let loss = build(&mut tape, xv)?;
    tape.backward(loss)?;
    let analytic = tape
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()));
    grad_check(
        |probe| {
            let mut t = Tape::new();
            let v = t.param(probe.clone());
            let l = build(&mut t, v)?;
            Ok(t.value(l).get(0, 0))
        },
        x,
        &analytic,
        h,
    )
}
