//! Gradient verification by central finite differences.
//!
//! The checker perturbs every scalar of the selected parameters in place,
//! re-evaluates the loss with two extra forward passes, and compares the
//! quotient against the gradient produced by `Graph::backward`. It is
//! intentionally independent of the backward implementation: only forward
//! evaluation is reused.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Result;
use crate::params::{Binding, ParamId, ParamStore};
use crate::tensor::{Graph, TensorId};

/// Central-difference step. 64-bit precision leaves ~1e-10 truncation +
/// cancellation error at this step size, far under the 1e-4 tolerance.
pub const DEFAULT_STEP: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub tol: f64,
    pub coords_checked: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// Relative error with a unit floor so near-zero gradients compare
/// absolutely.
fn rel_err(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs()).max(1.0);
    (a - n).abs() / denom
}

/// Check d(loss)/d(param) for every parameter in `which` against central
/// finite differences.
///
/// `build` must construct the loss (a scalar tensor) from the store; it is
/// called once for the analytic pass and twice per checked coordinate.
pub fn grad_check<F>(
    store: &mut ParamStore,
    which: &[ParamId],
    mut build: F,
    step: f64,
    tol: f64,
) -> Result<CheckReport>
where
    F: FnMut(&ParamStore, &mut Graph, &mut Binding) -> Result<TensorId>,
{
    // Analytic gradients.
    let mut g = Graph::new();
    let mut binding = Binding::for_store(store);
    let loss = build(store, &mut g, &mut binding)?;
    g.backward(loss)?;
    let mut analytic: Vec<Vec<f64>> = Vec::with_capacity(which.len());
    for &p in which {
        let n = store.get(p).data.len();
        let grad = binding
            .bound(p)
            .and_then(|t| g.grad(t))
            .map(|s| s.to_vec())
            .unwrap_or_else(|| alloc::vec![0.0; n]);
        analytic.push(grad);
    }

    // Numeric gradients, one coordinate at a time, perturbing in place.
    let mut report = CheckReport { max_rel_err: 0.0, worst: None, tol, coords_checked: 0 };
    for (pi, &p) in which.iter().enumerate() {
        for i in 0..store.get(p).data.len() {
            let orig = store.get(p).data[i];

            store.get_mut(p).data[i] = orig + step;
            let mut gp = Graph::new();
            let mut bp = Binding::for_store(store);
            let lp = build(store, &mut gp, &mut bp)?;
            let plus = gp.value(lp);

            store.get_mut(p).data[i] = orig - step;
            let mut gm = Graph::new();
            let mut bm = Binding::for_store(store);
            let lm = build(store, &mut gm, &mut bm)?;
            let minus = gm.value(lm);

            store.get_mut(p).data[i] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let err = rel_err(analytic[pi][i], numeric);
            report.coords_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((store.get(p).name.clone(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let mut store = ParamStore::new();
        let x = store
            .register("x".into(), alloc::vec![3], alloc::vec![1.0, 2.0, 3.0])
            .unwrap();
        let report = grad_check(
            &mut store,
            &[x],
            |s, g, b| {
                let xt = b.leaf(g, s, x)?;
                let sq = g.mul(xt, xt)?;
                g.sum_all(sq)
            },
            DEFAULT_STEP,
            1e-8,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
        assert_eq!(report.coords_checked, 3);
    }

    #[test]
    fn report_carries_worst_coordinate() {
        let mut store = ParamStore::new();
        let x = store.register("x".into(), alloc::vec![2], alloc::vec![0.5, -0.25]).unwrap();
        let report = grad_check(
            &mut store,
            &[x],
            |s, g, b| {
                let xt = b.leaf(g, s, x)?;
                let t = g.tanh(xt)?;
                g.sum_all(t)
            },
            DEFAULT_STEP,
            1e-6,
        )
        .unwrap();
        assert!(report.passed());
        assert!(report.worst.is_some());
        assert_eq!(report.worst.as_ref().unwrap().0, "x");
    }
}
