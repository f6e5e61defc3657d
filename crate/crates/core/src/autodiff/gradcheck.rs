use std::rc::Rc;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Default central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences, coordinate by coordinate, and returns the worst relative
/// error.
///
/// `f` receives a fresh tape and one leaf per tensor in `point`. Values that
/// `f` passes through [`Tape::detach`] are captured at `point` and held fixed
/// for the perturbed evaluations, so stop-gradient targets count as constants
/// on both sides of the comparison.
pub fn grad_check<F>(f: F, point: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = point.iter().map(|t| tape.leaf(t, true)).collect();
    let loss = f(&mut tape, &leaves)?;
    let grads = tape.backward(loss)?;
    let frozen = Rc::new(tape.detached_values().to_vec());

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let mut t = Tape::replaying(Rc::clone(&frozen));
        let vars: Vec<Var> = probe.iter().map(|p| t.leaf(p, false)).collect();
        let out = f(&mut t, &vars)?;
        Ok(t.scalar_value(out))
    };

    let mut probe = point.to_vec();
    let mut worst: f64 = 0.0;
    for (ti, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(*leaf).expect("leaf requires grad").to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = point[ti].values()[i];
            probe[ti].values_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe[ti].values_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe[ti].values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}
