//! Central finite-difference oracle for gradient checks.
//!
//! The oracle never touches the tape: it perturbs one stored parameter
//! element at a time and re-evaluates a caller-supplied scalar loss, so its
//! verdict is independent of the machinery it is checking.

use super::store::{ParamStore, ParamSubset};

/// Default perturbation for `f64` losses.
pub const DEFAULT_H: f64 = 1e-5;

/// Relative error with a small-denominator floor, suitable for comparing an
/// analytic gradient against a finite difference.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

/// Central finite difference of `loss` with respect to one element of one
/// parameter. The parameter is restored afterwards.
pub fn central_diff(
    store: &mut ParamStore,
    name: &str,
    elem: usize,
    h: f64,
    loss: &mut dyn FnMut(&ParamStore) -> f64,
) -> f64 {
    let orig = store.value_of(name).expect("parameter exists").data[elem];
    store.value_of_mut(name).unwrap().data[elem] = orig + h;
    let up = loss(store);
    store.value_of_mut(name).unwrap().data[elem] = orig - h;
    let down = loss(store);
    store.value_of_mut(name).unwrap().data[elem] = orig;
    (up - down) / (2.0 * h)
}

/// Worst relative error across every element of every parameter in `subset`.
///
/// `analytic` must fill the store's gradients for one evaluation of the same
/// loss (typically: zero grads, forward, backward, accumulate). Returns
/// `(worst relative error, elements checked)`.
pub fn check_all(
    store: &mut ParamStore,
    subset: ParamSubset,
    h: f64,
    loss: &mut dyn FnMut(&ParamStore) -> f64,
    analytic: &mut dyn FnMut(&mut ParamStore),
) -> (f64, usize) {
    store.zero_grads();
    analytic(store);
    let names: Vec<String> = store
        .names()
        .filter(|n| {
            let idx = store.index_of(n).unwrap();
            subset.contains(store.group_at(idx))
        })
        .map(str::to_string)
        .collect();
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for name in names {
        let len = store.value_of(&name).unwrap().len();
        for elem in 0..len {
            let a = store.grad_of(&name).unwrap().data[elem];
            let n = central_diff(store, &name, elem, h, loss);
            worst = worst.max(rel_err(a, n));
            checked += 1;
        }
    }
    (worst, checked)
}
