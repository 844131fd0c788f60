//! Central finite-difference gradient verification.

/// Max over parameters of `|g_a − g_fd| / max(1e-8, |g_a| + |g_fd|)` where
/// `g_fd` is the central difference of `loss` with step `eps`.
pub fn finite_diff_check(loss: impl Fn(&[f64]) -> f64, params: &[f64], analytic: &[f64], eps: f64) -> f64 {
    assert_eq!(params.len(), analytic.len(), "gradient length must match parameters");
    let mut x = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = loss(&x);
        x[i] = orig - eps;
        let minus = loss(&x);
        x[i] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        let err = (analytic[i] - fd).abs() / (analytic[i].abs() + fd.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

/// Central-difference gradient, for callers that want the raw estimate.
pub fn numeric_gradient(loss: impl Fn(&[f64]) -> f64, params: &[f64], eps: f64) -> Vec<f64> {
    let mut x = params.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + eps;
            let plus = loss(&x);
            x[i] = orig - eps;
            let minus = loss(&x);
            x[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}
