//! Central-difference gradient checker.

use super::{Tape, Tensor};

/// Compare tape gradients of `f` against central differences over every
/// coordinate of `params`. Returns the maximum relative error
/// |g_ad - g_fd| / max(1, |g_ad| + |g_fd|).
///
/// `f` must be deterministic (disable dropout) and scalar-valued.
pub fn grad_check(f: impl Fn(&Tape) -> Tensor, params: &[Tensor], eps: f64) -> f64 {
    for p in params {
        p.zero_grad();
    }
    let tape = Tape::new();
    let loss = f(&tape);
    assert!(loss.item().is_finite(), "grad_check: non-finite loss");
    tape.backward(&loss);
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad()).collect();

    let mut max_err: f64 = 0.0;
    for (p, g_ad) in params.iter().zip(analytic.iter()) {
        for i in 0..p.len() {
            let orig = p.with_data(|d| d[i]);
            p.update(|d, _| d[i] = orig + eps);
            let lp = f(&Tape::new()).item();
            p.update(|d, _| d[i] = orig - eps);
            let lm = f(&Tape::new()).item();
            p.update(|d, _| d[i] = orig);
            assert!(lp.is_finite() && lm.is_finite(), "grad_check: non-finite perturbed loss");
            let g_fd = (lp - lm) / (2.0 * eps);
            let err = (g_ad[i] - g_fd).abs() / 1f64.max(g_ad[i].abs() + g_fd.abs());
            if err > max_err {
                max_err = err;
            }
        }
    }
    max_err
}
