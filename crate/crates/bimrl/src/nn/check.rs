//! Finite-difference gradient checking utilities, used throughout the test
//! suite to validate the tape against central differences.

use super::params::{GradStore, ParamSet};

/// Central-difference derivative of `f` w.r.t. one scalar slot of `ps`.
pub fn fd_scalar(
    ps: &mut ParamSet,
    flat_index: usize,
    f: impl Fn(&ParamSet) -> f64,
    h: f64,
) -> f64 {
    let orig = ps.get_scalar(flat_index);
    ps.set_scalar(flat_index, orig + h);
    let up = f(ps);
    ps.set_scalar(flat_index, orig - h);
    let down = f(ps);
    ps.set_scalar(flat_index, orig);
    (up - down) / (2.0 * h)
}

/// Relative error between an analytic and a numeric derivative, with an
/// absolute floor so near-zero pairs compare cleanly.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-8 {
        return (analytic - numeric).abs();
    }
    (analytic - numeric).abs() / denom
}

/// Check every scalar parameter slot; returns the worst relative error.
pub fn max_rel_error_all(
    ps: &mut ParamSet,
    grads: &GradStore,
    f: impl Fn(&ParamSet) -> f64,
    h: f64,
) -> f64 {
    let n = ps.n_scalars();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let numeric = fd_scalar(ps, i, &f, h);
        let analytic = grads.get_scalar(ps, i);
        worst = worst.max(rel_error(analytic, numeric));
    }
    worst
}

/// Check a sample of scalar slots (every `stride`-th), returning
/// `(checked, worst relative error)`. Useful when the full parameter count
/// makes an exhaustive sweep slow.
pub fn max_rel_error_sampled(
    ps: &mut ParamSet,
    grads: &GradStore,
    f: impl Fn(&ParamSet) -> f64,
    h: f64,
    stride: usize,
) -> (usize, f64) {
    let n = ps.n_scalars();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut i = 0;
    while i < n {
        let numeric = fd_scalar(ps, i, &f, h);
        let analytic = grads.get_scalar(ps, i);
        worst = worst.max(rel_error(analytic, numeric));
        checked += 1;
        i += stride.max(1);
    }
    (checked, worst)
}
