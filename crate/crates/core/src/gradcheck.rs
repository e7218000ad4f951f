//! Central finite differences for checking analytic gradients.
//!
//! These helpers only ever evaluate the scalar function being checked, so they
//! stay independent of whatever produced the analytic gradient.

/// Denominator floor for [`relative_error`]. Below this magnitude the error is
/// effectively absolute.
pub const REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// `(f(x + h e_k) - f(x - h e_k)) / 2h` for a single coordinate.
pub fn central_difference<F>(f: F, x: &[f64], k: usize, h: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    xp[k] += h;
    let plus = f(&xp);
    xp[k] = x[k] - h;
    let minus = f(&xp);
    (plus - minus) / (2.0 * h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
}

/// Compares `analytic` against central differences of `f` at `x`.
///
/// `skip(k)` excludes coordinates where `f` is not differentiable under a
/// perturbation of size `h` (e.g. an argmax selection flips).
pub fn check_gradient<F, S>(f: F, x: &[f64], analytic: &[f64], h: f64, skip: S) -> GradCheck
where
    F: Fn(&[f64]) -> f64,
    S: Fn(usize) -> bool,
{
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let mut out = GradCheck { max_rel_error: 0.0, worst_index: None, checked: 0, skipped: 0 };
    for (k, &a) in analytic.iter().enumerate() {
        if skip(k) {
            out.skipped += 1;
            continue;
        }
        let numeric = central_difference(&f, x, k, h);
        let err = relative_error(a, numeric);
        out.checked += 1;
        if err > out.max_rel_error || out.worst_index.is_none() {
            out.max_rel_error = out.max_rel_error.max(err);
            out.worst_index = Some(k);
        }
    }
    out
}
