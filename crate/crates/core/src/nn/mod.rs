//! Differentiable numerics: parameters, the operation tape, Adam and a
//! finite-difference gradient checker.

mod params;
mod tape;

use alloc::string::String;
use alloc::vec::Vec;

pub use params::{AdamConfig, ParamId, Parameter, ParameterStore};
pub use tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("index {index} out of range {len} in {op}")]
    Index { op: &'static str, index: usize, len: usize },
    #[error("{0} on an empty input")]
    Empty(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("tape error: {0}")]
    Tape(&'static str),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
}

/// Softmax of a finite vector.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>, NnError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(NnError::NonFinite("softmax"));
    }
    let mut out = v.to_vec();
    tape::softmax_in_place(&mut out);
    Ok(out)
}

/// Compares tape gradients against central differences for every parameter
/// entry and returns the largest relative error.
///
/// The relative error of one entry is `|a - n| / max(|a|, |n|, 1e-6)`. The
/// loss closure must be deterministic for fixed parameter values.
pub fn finite_diff_check<F>(store: &mut ParameterStore, step: f64, mut loss_fn: F) -> Result<f64, NnError>
where
    F: FnMut(&ParameterStore, &mut Tape) -> Result<Var, NnError>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    tape.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = store.params().iter().map(|p| p.grad.as_slice().to_vec()).collect();

    let mut eval = |s: &ParameterStore| -> Result<f64, NnError> {
        let mut t = Tape::new();
        let l = loss_fn(s, &mut t)?;
        Ok(t.scalar(l))
    };

    let mut worst = 0.0f64;
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for k in 0..store.value(id).len() {
            let orig = store.value(id).as_slice()[k];
            store.value_mut(id).as_mut_slice()[k] = orig + step;
            let up = eval(store)?;
            store.value_mut(id).as_mut_slice()[k] = orig - step;
            let down = eval(store)?;
            store.value_mut(id).as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[id.index()][k];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
