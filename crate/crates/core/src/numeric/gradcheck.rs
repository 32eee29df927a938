//! Central finite-difference verification of tape gradients.

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Worst observed mismatch for one parameter.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl ParamCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Relative error with a floor so that finite-difference noise on near-zero
/// gradients does not register as failure.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Compare tape gradients of `loss_fn` against central finite differences
/// for every element of every parameter in the store.
///
/// `loss_fn` must be a deterministic function of the parameter values: it is
/// re-evaluated twice per element with one value nudged by `eps`.
pub fn check_all<F>(store: &mut ParamStore, mut loss_fn: F, eps: f64) -> Vec<ParamCheck>
where
    F: FnMut(&mut Tape, &ParamStore) -> Var,
{
    let ids: Vec<ParamId> = store.ids().collect();

    store.zero_grads();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store);
    tape.backward(loss, store);
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| store.grad(id).to_vec()).collect();

    let eval = |tape_store: &mut ParamStore, f: &mut F| -> f64 {
        let mut t = Tape::new();
        let l = f(&mut t, tape_store);
        t.value(l).data[0]
    };

    let mut reports = Vec::with_capacity(ids.len());
    for (pi, &id) in ids.iter().enumerate() {
        let n = store.value(id).len();
        let mut worst = ParamCheck {
            name: store.name(id).to_string(),
            max_rel_err: 0.0,
            worst_element: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (e, &a) in analytic[pi].iter().enumerate().take(n) {
            let orig = store.value(id).data[e];
            store.value_mut(id).data[e] = orig + eps;
            let up = eval(store, &mut loss_fn);
            store.value_mut(id).data[e] = orig - eps;
            let down = eval(store, &mut loss_fn);
            store.value_mut(id).data[e] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = rel_err(a, numeric);
            if err > worst.max_rel_err {
                worst.max_rel_err = err;
                worst.worst_element = e;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        reports.push(worst);
    }
    reports
}

/// Convenience: assert that every parameter passes at `tol`.
pub fn assert_grads_match<F>(store: &mut ParamStore, loss_fn: F, tol: f64)
where
    F: FnMut(&mut Tape, &ParamStore) -> Var,
{
    let reports = check_all(store, loss_fn, DEFAULT_EPS);
    for r in &reports {
        assert!(
            r.passes(tol),
            "gradient mismatch on {} (element {}): analytic {} vs numeric {} (rel err {:.3e})",
            r.name,
            r.worst_element,
            r.analytic,
            r.numeric,
            r.max_rel_err
        );
    }
}
