use crate::autodiff::Var;
use crate::error::Result;

/// Geman-McClure penalty of a residual vector:
/// `σ²‖e‖² / (σ² + ‖e‖²)`, which rises like `‖e‖²` near zero and saturates at `σ²`.
pub fn geman_mcclure(residual: &[f64], sigma: f64) -> f64 {
    let s: f64 = residual.iter().map(|e| e * e).sum();
    gm_of_squared(s, sigma)
}

pub(crate) fn gm_of_squared(s: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    s2 * s / (s2 + s)
}

/// Elementwise Geman-McClure of squared norms `s` (any shape).
pub fn gm_squared_var<'t>(s: Var<'t>, sigma: f64) -> Result<Var<'t>> {
    let s2 = sigma * sigma;
    s.scale(s2).div(s.offset(s2))
}

/// Geman-McClure of a whole residual tensor treated as one vector.
pub fn gm_var<'t>(residual: Var<'t>, sigma: f64) -> Result<Var<'t>> {
    gm_squared_var(residual.square().sum(), sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, Tape, Tensor};
    use proptest::prelude::*;

    #[test]
    fn closed_forms() {
        assert_eq!(geman_mcclure(&[0.0, 0.0], 2.0), 0.0);
        assert!((geman_mcclure(&[3.0, 4.0], 5.0) - 12.5).abs() < 1e-12);
        let sigma = 7.0;
        let far = geman_mcclure(&[1e6 * sigma], sigma);
        assert!((far - sigma * sigma).abs() < 1e-6 * sigma * sigma);
        assert!(far < sigma * sigma);
    }

    #[test]
    fn tape_matches_and_gradient_is_smooth() {
        let build = gradcheck::objective(|_t, x| gm_var(x, 1.5));
        for x in [vec![0.0, 0.0, 0.0], vec![0.2, -0.1, 0.4], vec![3.0, 1.0, -2.0]] {
            let tape = Tape::new();
            let v = gm_var(tape.constant(Tensor::row(x.clone())), 1.5).unwrap();
            assert!((v.item() - geman_mcclure(&x, 1.5)).abs() < 1e-14);
            assert!(gradcheck::check(&build, &x, 1).unwrap() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn bounded_and_monotone(a in 0.0f64..100.0, b in 0.0f64..100.0, sigma in 0.1f64..10.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let fl = geman_mcclure(&[lo], sigma);
            let fh = geman_mcclure(&[hi], sigma);
            prop_assert!(fl <= fh);
            prop_assert!(fh < sigma * sigma || hi == 0.0);
        }
    }
}
