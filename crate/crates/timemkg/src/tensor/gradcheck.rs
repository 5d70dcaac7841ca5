//! Centered finite-difference gradient verification.
//!
//! The checker only ever calls the forward path, so it stays independent
//! of the reverse-mode rules it validates. Flow: build the graph once on
//! a tape, run `backward`, then hand each parameter plus a closure that
//! recomputes the loss value to [`check_param`].

use super::Tensor;

/// Default perturbation step.
pub const FD_STEP: f64 = 1e-5;

/// Relative error between an analytic and a finite-difference value,
/// guarded against tiny denominators.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

/// Worst relative error over the elements of `param`, comparing its
/// accumulated gradient against centered finite differences of `loss_fn`.
///
/// `loss_fn` must recompute the forward value from the current parameter
/// data; this function perturbs elements in place and restores them.
pub fn check_param(param: &Tensor, mut loss_fn: impl FnMut() -> f64, h: f64) -> f64 {
    let grad = param
        .grad()
        .unwrap_or_else(|| vec![0.0; param.numel()]);
    let mut worst = 0.0f64;
    for i in 0..param.numel() {
        param.nudge(i, h);
        let plus = loss_fn();
        param.nudge(i, -2.0 * h);
        let minus = loss_fn();
        param.nudge(i, h);
        let fd = (plus - minus) / (2.0 * h);
        worst = worst.max(rel_err(grad[i], fd));
    }
    worst
}

/// Check a set of named parameters at once; returns the worst
/// `(name, rel_err)` pair.
pub fn check_params(
    params: &[(String, Tensor)],
    mut loss_fn: impl FnMut() -> f64,
    h: f64,
) -> (String, f64) {
    let mut worst = (String::new(), 0.0f64);
    for (name, p) in params {
        let e = check_param(p, &mut loss_fn, h);
        if e >= worst.1 {
            worst = (name.clone(), e);
        }
    }
    worst
}
