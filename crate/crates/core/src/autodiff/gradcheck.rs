//! Randomized Jacobian checks against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::tape::{CapsulePair, SkinData, Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;
use crate::rotations::{AxisAngle, EulerConvention};

pub const FD_STEP: f64 = 1e-5;

/// Relative error of `analytic` against `numeric`, per coordinate, with a
/// floor tied to the gradient magnitude so that coordinates that are zero
/// up to round-off do not dominate.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().chain(analytic).fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-7);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of a scalar function.
pub fn numeric_gradient(f: &mut dyn FnMut(&[f64]) -> Result<f64>, x: &[f64], step: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let h = step * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let fp = f(&probe)?;
        probe[i] = x[i] - h;
        let fm = f(&probe)?;
        probe[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Pins the higher-ranked signature expected by [`check`] onto a closure.
pub fn objective<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    f
}

/// Builds a scalar on a fresh tape from a flat input and returns
/// `(value, analytic gradient)`.
pub fn analytic_gradient(build: &dyn for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>, x: &[f64], rows: usize) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let cols = x.len() / rows;
    let v = tape.var(Tensor::new(rows, cols, x.to_vec())?);
    let out = build(&tape, v)?;
    let g = tape.gradient(out, &[v])?;
    Ok((out.item(), g[0].clone().into_data()))
}

/// Compares the reverse-mode gradient of `build` with central differences.
pub fn check(build: &dyn for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>, x: &[f64], rows: usize) -> Result<f64> {
    let (_, analytic) = analytic_gradient(build, x, rows)?;
    let mut f = |p: &[f64]| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.constant(Tensor::new(rows, p.len() / rows, p.to_vec())?);
        Ok(build(&tape, v)?.item())
    };
    let numeric = numeric_gradient(&mut f, x, FD_STEP)?;
    Ok(relative_error(&analytic, &numeric))
}

#[derive(Debug, Clone, Serialize)]
pub struct PrimitiveReport {
    pub primitive: &'static str,
    pub samples: usize,
    pub max_relative_error: f64,
}

type Builder = Box<dyn for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>>;

struct Case {
    name: &'static str,
    rows: usize,
    sample: Box<dyn Fn(&mut ChaCha8Rng) -> Vec<f64>>,
    build: Builder,
}

fn uniform(n: usize, lo: f64, hi: f64) -> Box<dyn Fn(&mut ChaCha8Rng) -> Vec<f64>> {
    Box::new(move |rng| (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

/// Positive values kept away from 0 so that `log`, `sqrt` and division are smooth.
fn positive(n: usize) -> Box<dyn Fn(&mut ChaCha8Rng) -> Vec<f64>> {
    uniform(n, 0.3, 2.0)
}

/// Values kept away from the kink of piecewise-linear ops.
fn off_kink(n: usize) -> Box<dyn Fn(&mut ChaCha8Rng) -> Vec<f64>> {
    Box::new(move |rng| {
        (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(0.05..1.5);
                if rng.random_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect()
    })
}

fn weights(tape: &Tape, n: usize, seed: u64) -> Var<'_> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tape.constant(Tensor::row((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()))
}

/// Rotation matrices perturbed slightly off the manifold.
fn near_rotations(blocks: usize, noise: f64) -> Box<dyn Fn(&mut ChaCha8Rng) -> Vec<f64>> {
    Box::new(move |rng| {
        let mut out = Vec::with_capacity(9 * blocks);
        for _ in 0..blocks {
            let aa = AxisAngle::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
            let m = aa.to_matrix().0;
            for r in 0..3 {
                for c in 0..3 {
                    let jitter = if noise > 0.0 { rng.random_range(-noise..noise) } else { 0.0 };
                    out.push(m[(r, c)] + jitter);
                }
            }
        }
        out
    })
}

fn cases() -> Vec<Case> {
    let mut cases: Vec<Case> = Vec::new();
    let n = 6;
    macro_rules! unary {
        ($name:expr, $sample:expr, |$x:ident: Var| $body:expr) => {
            cases.push(Case {
                name: $name,
                rows: 1,
                sample: $sample,
                build: Box::new(|t, $x| {
                    let y = $body?;
                    let w = weights(t, y.shape().1, 17);
                    Ok(y.mul(w)?.sum())
                }),
            });
        };
    }
    unary!("add", uniform(n, -2.0, 2.0), |x: Var| x.add(x.square()));
    unary!("sub", uniform(n, -2.0, 2.0), |x: Var| x.sub(x.exp()));
    unary!("mul", uniform(n, -2.0, 2.0), |x: Var| x.mul(x.sin()));
    unary!("div", positive(n), |x: Var| x.cos().div(x));
    unary!("exp", uniform(n, -2.0, 2.0), |x: Var| crate::Result::Ok(x.exp()));
    unary!("log", positive(n), |x: Var| crate::Result::Ok(x.ln()));
    unary!("sqrt", positive(n), |x: Var| crate::Result::Ok(x.sqrt()));
    unary!("square", uniform(n, -2.0, 2.0), |x: Var| crate::Result::Ok(x.square()));
    unary!("sin", uniform(n, -3.0, 3.0), |x: Var| crate::Result::Ok(x.sin()));
    unary!("cos", uniform(n, -3.0, 3.0), |x: Var| crate::Result::Ok(x.cos()));
    unary!("hinge", off_kink(n), |x: Var| crate::Result::Ok(x.relu()));
    unary!("leaky_relu", off_kink(n), |x: Var| crate::Result::Ok(x.leaky_relu(0.2)));
    unary!("maximum", off_kink(n), |x: Var| x.maximum(x.scale(-0.5).offset(0.01)));
    unary!("transpose", uniform(n, -2.0, 2.0), |x: Var| crate::Result::Ok(
        x.transpose().transpose().square()
    ));
    unary!("slice", uniform(n, -2.0, 2.0), |x: Var| x.slice(1, 3).map(|s| s.square()));
    unary!("reshape", uniform(n, -2.0, 2.0), |x: Var| x
        .reshape(3, 2)
        .and_then(|s| s.slice(1, 1)?.square().reshape(1, 3)));
    unary!("concat", uniform(n, -2.0, 2.0), |x: Var| Var::concat(&[x.square(), x.sin()]));
    unary!("rodrigues", uniform(6, -2.0, 2.0), |x: Var| x.rodrigues());
    unary!("log_map", near_rotations(2, 0.0), |x: Var| x.log_map());
    unary!("project", near_rotations(2, 0.2), |x: Var| x.project());
    unary!("euler", near_rotations(2, 0.0), |x: Var| x
        .euler(&[EulerConvention::Zyx, EulerConvention::Xzy]));
    unary!("block_matmul", near_rotations(2, 0.3), |x: Var| x
        .block_matmul(x.transpose().transpose().square()));
    cases.push(Case {
        name: "sum",
        rows: 2,
        sample: uniform(6, -2.0, 2.0),
        build: Box::new(|_, x| Ok(x.square().sum())),
    });
    cases.push(Case {
        name: "mean",
        rows: 2,
        sample: uniform(6, -2.0, 2.0),
        build: Box::new(|_, x| Ok(x.sin().mean())),
    });
    cases.push(Case {
        name: "sum_cols",
        rows: 2,
        sample: uniform(6, -2.0, 2.0),
        build: Box::new(|t, x| {
            let w = t.constant(Tensor::new(2, 1, vec![0.7, -1.3])?);
            Ok(x.square().sum_cols().mul(w)?.sum())
        }),
    });
    cases.push(Case {
        name: "matmul",
        rows: 2,
        sample: uniform(6, -2.0, 2.0),
        build: Box::new(|t, x| {
            let b = t.constant(Tensor::new(3, 2, vec![0.5, -1.0, 2.0, 0.3, -0.7, 1.1])?);
            let y = x.matmul(b)?;
            Ok(y.square().sum().add(x.transpose().matmul(y)?.sum())?)
        }),
    });
    cases.push(Case {
        name: "add_row",
        rows: 2,
        sample: uniform(6, -2.0, 2.0),
        build: Box::new(|_, x| {
            let row = x.slice(0, 3)?.sum().scale(0.1);
            let bias = Var::concat(&[row, row.square(), row.sin()])?;
            Ok(x.add_row(bias)?.square().sum())
        }),
    });
    cases.push(Case {
        name: "block_rotate",
        rows: 1,
        sample: uniform(12, -1.0, 1.0),
        build: Box::new(|t, x| {
            let m = x.slice(0, 9)?;
            let p = x.slice(9, 3)?;
            let w = weights(t, 3, 5);
            Ok(m.block_rotate(p)?.mul(w)?.sum())
        }),
    });
    cases.push(Case {
        name: "skin",
        rows: 1,
        sample: uniform(24, -1.0, 1.0),
        build: Box::new(|t, x| {
            let data = std::rc::Rc::new(SkinData {
                joint_count: 2,
                influences: vec![
                    vec![(0, 1.0, [0.1, 0.2, 0.3])],
                    vec![(0, 0.4, [0.0, -0.5, 0.2]), (1, 0.6, [0.3, 0.1, -0.2])],
                ],
            });
            let rot = x.slice(0, 18)?;
            let pos = x.slice(18, 6)?;
            let w = weights(t, 6, 8);
            Ok(rot.skin(pos, data)?.mul(w)?.sum())
        }),
    });
    cases.push(Case {
        name: "capsule_gaps",
        rows: 1,
        sample: Box::new(|rng| {
            // Two well-separated, non-parallel segments.
            let mut v = vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.4, -0.5, 0.3, 0.6, 0.5, 0.3];
            for x in v.iter_mut() {
                *x += rng.random_range(-0.05..0.05);
            }
            v
        }),
        build: Box::new(|t, x| {
            let pairs = [CapsulePair {
                a: (0, 1),
                b: (2, 3),
                radius_sum: 0.5,
            }];
            let w = weights(t, 1, 2);
            Ok(x.capsule_gaps(&pairs)?.mul(w)?.sum())
        }),
    });
    cases
}

/// Runs every primitive check `samples` times.
pub fn primitive_suite(samples: usize, seed: u64) -> Result<Vec<PrimitiveReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    for case in cases() {
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let x = (case.sample)(&mut rng);
            worst = worst.max(check(&*case.build, &x, case.rows)?);
        }
        reports.push(PrimitiveReport {
            primitive: case.name,
            samples,
            max_relative_error: worst,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!(relative_error(&[1.0], &[1.1]) > 0.05);
        // Tiny absolute differences on negligible coordinates are floored.
        assert!(relative_error(&[1.0, 1e-12], &[1.0, 2e-12]) < 1e-8);
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        for r in primitive_suite(10, 42).unwrap() {
            assert!(r.max_relative_error < 1e-5, "{}: {:.3e}", r.primitive, r.max_relative_error);
        }
    }
}
