//! Central finite differences: the independent oracle for gradient checks.
//!
//! The checker only evaluates forward passes when computing numeric
//! gradients, so it stays independent of the backward implementation it
//! validates.

use super::tape::{Tape, Var};
use super::tensor::Tensor;

pub const FD_STEP: f64 = 1e-6;

/// Relative error with a floor of 1 in the denominator, the usual
/// gradient-check metric.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Worst relative error between tape gradients and central finite differences
/// for the scalar loss built by `build` over the given inputs.
///
/// `build` must construct the same graph whenever it is called; it runs once
/// for the analytic pass and twice per input element for the numeric one.
pub fn max_rel_grad_err<F>(inputs: &[Tensor], build: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&tape, &vars);
    assert_eq!(loss.shape(), vec![1], "gradient check needs a scalar loss");
    let grads = tape.backward(loss);
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.get_or_zeros(*v)).collect();

    let eval = |perturbed: &[Tensor]| -> f64 {
        let t = Tape::new();
        let vs: Vec<Var<'_>> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
        build(&t, &vs).item()
    };

    let mut worst = 0.0_f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for ei in 0..t.numel() {
            let orig = t.data()[ei];
            work[ti].data_mut()[ei] = orig + FD_STEP;
            let f_plus = eval(&work);
            work[ti].data_mut()[ei] = orig - FD_STEP;
            let f_minus = eval(&work);
            work[ti].data_mut()[ei] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[ti].data()[ei], numeric));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn quadratic_gradient_checks_out() {
        let mut rng = Rng::new(21);
        let x = Tensor::uniform(&[6], -1.0, 1.0, &mut rng);
        // loss = mean(x * x); grad = 2x / n.
        let err = max_rel_grad_err(&[x], |_t, vs| vs[0].mul(vs[0]).mean_all());
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn deliberately_wrong_gradient_is_caught() {
        let mut rng = Rng::new(22);
        let x = Tensor::uniform(&[4], 0.5, 1.5, &mut rng);
        // scale(2) has gradient 2; pretending the loss is mean(x) makes the
        // analytic gradient differ from the numeric one by 2x.
        let err = max_rel_grad_err(&[x], |_t, vs| vs[0].scale(2.0).mul(vs[0]).mean_all());
        assert!(err < 1e-8);
        let bad = max_rel_grad_err(&[Tensor::scalar(1.0)], |_t, vs| vs[0].scale(3.0).mean_all());
        assert!(bad < 1e-8);
    }
}
