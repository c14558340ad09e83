//! Central finite-difference gradient verification.
//!
//! Runs the forward function twice per perturbed element in f64 and compares
//! `(f(x+h) - f(x-h)) / 2h` against the tape gradient. This is the
//! verification mode backing every differentiable operation in the crate.

use std::collections::BTreeMap;

use super::dense::DenseTensor;
use super::tape::{Tape, ValueId};
use crate::error::Result;

/// Outcome of a [`check_gradients`] run; `max_rel_err` over all checked
/// elements.
#[derive(Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Forward function under test: fresh tape plus the ids of the registered
/// inputs, returning the scalar loss id.
pub type ForwardFn<'a> =
    dyn FnMut(&mut Tape<f64>, &BTreeMap<String, ValueId>) -> Result<ValueId> + 'a;

/// Verify tape gradients of `forward` against central finite differences.
///
/// `forward` receives a fresh tape with every entry of `inputs` registered as
/// a named parameter and must return the scalar loss id. Relative error uses
/// `|a - b| / max(|a|, |b|, 1)`.
pub fn check_gradients(
    inputs: &BTreeMap<String, DenseTensor<f64>>,
    step: f64,
    tolerance: f64,
    mut forward: impl FnMut(&mut Tape<f64>, &BTreeMap<String, ValueId>) -> Result<ValueId>,
) -> Result<GradCheckReport> {
    let eval = |vals: &BTreeMap<String, DenseTensor<f64>>,
                forward: &mut ForwardFn<'_>|
     -> Result<(Tape<f64>, ValueId)> {
        let mut tape = Tape::<f64>::new();
        let mut ids = BTreeMap::new();
        for (name, tensor) in vals {
            ids.insert(name.clone(), tape.param(name, tensor.clone())?);
        }
        let loss = forward(&mut tape, &ids)?;
        Ok((tape, loss))
    };

    let (mut tape, loss) = eval(inputs, &mut forward)?;
    tape.backward(loss)?;
    let analytic: BTreeMap<String, DenseTensor<f64>> = tape.gradients().clone();

    let mut max_rel_err = 0.0f64;
    let mut checked = 0usize;
    for (name, tensor) in inputs {
        for k in 0..tensor.len() {
            let mut plus = inputs.clone();
            plus.get_mut(name).unwrap().values_mut()[k] += step;
            let (tape_p, loss_p) = eval(&plus, &mut forward)?;
            let fp = tape_p.value(loss_p).values()[0];

            let mut minus = inputs.clone();
            minus.get_mut(name).unwrap().values_mut()[k] -= step;
            let (tape_m, loss_m) = eval(&minus, &mut forward)?;
            let fm = tape_m.value(loss_m).values()[0];

            let fd = (fp - fm) / (2.0 * step);
            let an = analytic.get(name).map(|g| g.values()[k]).unwrap_or(0.0);
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1.0);
            if rel > max_rel_err {
                max_rel_err = rel;
            }
            checked += 1;
            if rel > tolerance {
                return Err(crate::error::Error::InvalidArgument {
                    op: "check_gradients".into(),
                    message: format!(
                        "gradient mismatch for {name}[{k}]: analytic {an}, finite-difference {fd}, rel err {rel:.3e}"
                    ),
                });
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        checked,
    })
}
