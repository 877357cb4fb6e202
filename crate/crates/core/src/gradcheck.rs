//! Finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tape::{Tape, Var};

/// Difference formula for the numeric derivative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, truncation error `O(h^2)`.
    #[default]
    Central,
    /// `(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`, truncation
    /// error `O(h^4)`. Allows a larger step, so roundoff matters less for
    /// very small gradient entries.
    FivePoint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// max over unfrozen scalars of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`
    pub max_relative_error: f64,
    /// parameter name and flat index achieving the maximum
    pub worst: Option<(String, usize)>,
    /// analytic and numeric derivative at `worst`
    pub worst_values: Option<(f64, f64)>,
    /// largest `|analytic - numeric|` over all scalars
    pub max_abs_error: f64,
    pub checked: usize,
}

fn eval_loss<F>(f: &F, store: &ParameterStore) -> Result<f64>
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let value = tape.value(loss);
    if value.len() != 1 {
        return Err(Error::Shape {
            op: "grad_check",
            left: value.shape().to_vec(),
            right: vec![1, 1],
        });
    }
    let v = value.data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {v}")));
    }
    Ok(v)
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences with the given step, over every unfrozen parameter.
///
/// The store is perturbed in place and restored bit-exactly afterwards.
pub fn grad_check<F>(store: &mut ParameterStore, step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<Var>,
{
    grad_check_with(store, step, Stencil::Central, f)
}

/// [`grad_check`] with a choice of difference formula.
pub fn grad_check_with<F>(store: &mut ParameterStore, step: f64, stencil: Stencil, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::config(format!("finite-difference step {step} outside [1e-7, 1e-3]")));
    }

    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let l0 = tape.value(loss).data()[0];
    if !l0.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {l0}")));
    }
    let grads = tape.backward(loss)?;
    let mut analytic: Vec<Option<Vec<f64>>> = vec![None; store.len()];
    for (id, g) in grads.params() {
        analytic[id.index()] = Some(g.to_vec());
    }
    drop(tape);

    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst: None,
        worst_values: None,
        max_abs_error: 0.0,
        checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.by_id(id).frozen {
            continue;
        }
        let n = store.by_id(id).value.len();
        for i in 0..n {
            let orig = store.by_id(id).value.data()[i];
            let mut at = |offset: f64| {
                store.by_id_mut(id).value.data_mut()[i] = orig + offset;
                let v = eval_loss(&f, store);
                store.by_id_mut(id).value.data_mut()[i] = orig;
                v
            };
            let numeric = match stencil {
                Stencil::Central => (at(step)? - at(-step)?) / (2.0 * step),
                Stencil::FivePoint => {
                    let near = at(step)? - at(-step)?;
                    let far = at(2.0 * step)? - at(-2.0 * step)?;
                    (8.0 * near - far) / (12.0 * step)
                }
            };
            let a = analytic[id.index()].as_ref().map_or(0.0, |g| g[i]);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if report.worst.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((store.name(id).to_string(), i));
                report.worst_values = Some((a, numeric));
            }
        }
    }
    Ok(report)
}
