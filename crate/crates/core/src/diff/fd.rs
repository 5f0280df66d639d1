//! Central finite-difference verification of tape gradients. Used by tests
//! throughout the crate; lives in the library so integration suites can call
//! it too.

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Central finite differences of a scalar-valued builder at `x`.
pub fn finite_difference<F>(x: &Tensor, f: F, step: f64) -> Tensor
where
    F: Fn(&Graph, Var) -> f64,
{
    let mut grad = Tensor::zeros(x.shape.clone());
    for i in 0..x.len() {
        let mut hi = x.clone();
        hi.data[i] += step;
        let mut lo = x.clone();
        lo.data[i] -= step;
        let g1 = Graph::new();
        let fp = f(&g1, g1.leaf(hi));
        let g2 = Graph::new();
        let fm = f(&g2, g2.leaf(lo));
        grad.data[i] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Assert that backprop through `build` matches central differences at `x`.
/// `tol` is relative to the larger magnitude, with `abs_floor` guarding tiny
/// entries.
pub fn check_gradient<F>(x: &Tensor, build: F, step: f64, abs_floor: f64)
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Var<'g>,
{
    let g = Graph::new();
    let leaf = g.leaf(x.clone());
    let out = build(&g, leaf);
    assert_eq!(out.value().len(), 1, "check_gradient needs scalar output");
    let analytic = g.backward(out).of(leaf);

    let numeric = finite_difference(x, |g, v| build(g, v).value().item(), step);

    for i in 0..x.len() {
        let (a, n) = (analytic.data[i], numeric.data[i]);
        let denom = a.abs().max(n.abs()).max(1.0e-8);
        let rel = (a - n).abs() / denom;
        assert!(
            rel < 1e-3 || (a - n).abs() < abs_floor,
            "gradient mismatch at {i}: analytic {a} vs numeric {n} (rel {rel:.2e})"
        );
    }
}

/// Relative error between analytic and numeric gradients at selected entries.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor, entries: &[usize]) -> f64 {
    let mut worst: f64 = 0.0;
    for &i in entries {
        let (a, n) = (analytic.data[i], numeric.data[i]);
        let denom = a.abs().max(n.abs()).max(1e-8);
        worst = worst.max((a - n).abs() / denom);
    }
    worst
}
