use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbfgsSettings {
    /// Number of stored curvature pairs.
    pub history: usize,
    pub max_iterations: usize,
    /// Stop when `‖∇f‖_∞` falls below this.
    pub gradient_tolerance: f64,
    /// Stop when an accepted step lowers `f` by less than this fraction of
    /// `max(|f|, 1)`. Zero disables the test.
    pub function_tolerance: f64,
    pub c1: f64,
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        LbfgsSettings {
            history: 10,
            max_iterations: 200,
            gradient_tolerance: 1e-10,
            function_tolerance: 0.0,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

impl LbfgsSettings {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 || !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) || self.max_line_search == 0 {
            return Err(Error::InvalidInput(format!("invalid L-BFGS settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
}

impl LbfgsOutcome {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::GradientTolerance | Termination::FunctionTolerance)
    }

    /// Turns a line-search failure into an error.
    pub fn into_result(self) -> Result<Self> {
        match self.termination {
            Termination::LineSearchFailed => Err(Error::LineSearchFailed {
                evaluations: self.evaluations,
            }),
            _ => Ok(self),
        }
    }
}

pub type Objective<'a> = dyn FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + 'a;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Point {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

struct Search<'a, 'b> {
    f: &'a mut Objective<'b>,
    x: &'a [f64],
    d: &'a [f64],
    evaluations: usize,
    budget: usize,
}

impl Search<'_, '_> {
    /// `None` when the objective fails or is not finite there.
    fn eval(&mut self, alpha: f64) -> Option<Point> {
        self.evaluations += 1;
        let probe: Vec<f64> = self.x.iter().zip(self.d).map(|(x, d)| x + alpha * d).collect();
        match (self.f)(&probe) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
                let slope = dot(&g, self.d);
                Some(Point { alpha, f, g, slope })
            }
            _ => None,
        }
    }

    fn exhausted(&self) -> bool {
        self.evaluations >= self.budget
    }
}

/// Minimizer of the cubic through two points with slopes, or of the
/// quadratic when the far slope is unknown, kept inside the bracket.
fn interpolate(lo: &Point, hi_alpha: f64, hi_f: f64, hi_slope: Option<f64>) -> f64 {
    let (a, b) = (lo.alpha, hi_alpha);
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (right - left);
    let candidate = if !hi_f.is_finite() {
        f64::NAN
    } else if let Some(hs) = hi_slope {
        let d1 = lo.slope + hs - 3.0 * (lo.f - hi_f) / (a - b);
        let disc = d1 * d1 - lo.slope * hs;
        if disc >= 0.0 {
            let d2 = (b - a).signum() * disc.sqrt();
            b - (b - a) * (hs + d2 - d1) / (hs - lo.slope + 2.0 * d2)
        } else {
            f64::NAN
        }
    } else {
        let h = b - a;
        let denom = 2.0 * (hi_f - lo.f - lo.slope * h);
        if denom > 0.0 {
            a - lo.slope * h * h / denom
        } else {
            f64::NAN
        }
    };
    if candidate.is_finite() && candidate >= left + margin && candidate <= right - margin {
        candidate
    } else {
        0.5 * (a + b)
    }
}

/// Strong-Wolfe line search. Returns the accepted point, or `None` when no
/// step with sufficient decrease was found.
fn strong_wolfe(search: &mut Search, f0: f64, slope0: f64, alpha0: f64, c1: f64, c2: f64) -> Option<Point> {
    let armijo = |p: &Point| p.f <= f0 + c1 * p.alpha * slope0;
    let curvature = |p: &Point| p.slope.abs() <= -c2 * slope0;
    let mut prev = Point {
        alpha: 0.0,
        f: f0,
        g: Vec::new(),
        slope: slope0,
    };
    let mut best: Option<Point> = None;
    let mut alpha = alpha0;
    let mut first = true;
    let (mut lo, mut hi_alpha, mut hi_f, mut hi_slope);
    loop {
        if search.exhausted() {
            return best;
        }
        let Some(p) = search.eval(alpha) else {
            // Failed evaluation: treat as an upper bracket with infinite value.
            lo = prev;
            hi_alpha = alpha;
            hi_f = f64::INFINITY;
            hi_slope = None;
            break;
        };
        if !armijo(&p) || (!first && p.f >= prev.f) {
            lo = prev;
            hi_alpha = p.alpha;
            hi_f = p.f;
            hi_slope = Some(p.slope);
            break;
        }
        if curvature(&p) {
            return Some(p);
        }
        if p.slope >= 0.0 {
            hi_alpha = prev.alpha;
            hi_f = prev.f;
            hi_slope = Some(prev.slope);
            lo = p;
            break;
        }
        if best.as_ref().is_none_or(|b| p.f < b.f) {
            best = Some(Point { g: p.g.clone(), ..p });
        }
        first = false;
        alpha = 2.0 * p.alpha;
        prev = p;
    }
    // Zoom: `lo` satisfies sufficient decrease and has the lowest value seen.
    loop {
        if lo.alpha > 0.0 && best.as_ref().is_none_or(|b| lo.f < b.f) {
            best = Some(Point { g: lo.g.clone(), ..lo });
        }
        if search.exhausted() || (hi_alpha - lo.alpha).abs() <= 1e-16 * hi_alpha.abs().max(1.0) {
            return best;
        }
        let alpha = interpolate(&lo, hi_alpha, hi_f, hi_slope);
        let Some(p) = search.eval(alpha) else {
            hi_alpha = alpha;
            hi_f = f64::INFINITY;
            hi_slope = None;
            continue;
        };
        if !armijo(&p) || p.f >= lo.f {
            hi_alpha = p.alpha;
            hi_f = p.f;
            hi_slope = Some(p.slope);
            continue;
        }
        if curvature(&p) {
            return Some(p);
        }
        if p.slope * (hi_alpha - lo.alpha) >= 0.0 {
            hi_alpha = lo.alpha;
            hi_f = lo.f;
            hi_slope = Some(lo.slope);
        }
        lo = p;
    }
}

/// Limited-memory BFGS with a strong-Wolfe line search. A failed line search
/// ends the run with the best iterate and `Termination::LineSearchFailed`.
pub fn lbfgs_minimize(f: &mut Objective, x0: &[f64], settings: &LbfgsSettings) -> Result<LbfgsOutcome> {
    settings.validate()?;
    let (mut fx, mut g) = f(x0)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue {
            node: 0,
            op: "objective at the starting point",
        });
    }
    let mut x = x0.to_vec();
    let mut evaluations = 1;
    let mut trace = vec![fx];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(settings.history);
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    if inf_norm(&g) < settings.gradient_tolerance {
        termination = Termination::GradientTolerance;
    } else {
        while iterations < settings.max_iterations {
            let mut accepted = None;
            for attempt in 0..2 {
                if attempt == 1 {
                    if memory.is_empty() {
                        break;
                    }
                    memory.clear();
                }
                let d = direction(&g, &memory);
                let slope = dot(&g, &d);
                if !(slope < 0.0) {
                    continue;
                }
                let alpha0 = if memory.is_empty() { (1.0 / inf_norm(&g)).min(1.0) } else { 1.0 };
                let mut search = Search {
                    f: &mut *f,
                    x: &x,
                    d: &d,
                    evaluations: 0,
                    budget: settings.max_line_search,
                };
                let found = strong_wolfe(&mut search, fx, slope, alpha0, settings.c1, settings.c2);
                evaluations += search.evaluations;
                if let Some(p) = found {
                    accepted = Some((p, d));
                    break;
                }
            }
            let Some((p, d)) = accepted else {
                termination = Termination::LineSearchFailed;
                break;
            };
            iterations += 1;
            let s: Vec<f64> = d.iter().map(|v| p.alpha * v).collect();
            let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                if memory.len() == settings.history {
                    memory.pop_front();
                }
                memory.push_back((s.clone(), y, 1.0 / sy));
            }
            let previous = fx;
            for (xi, si) in x.iter_mut().zip(&s) {
                *xi += si;
            }
            fx = p.f;
            g = p.g;
            trace.push(fx);
            if inf_norm(&g) < settings.gradient_tolerance {
                termination = Termination::GradientTolerance;
                break;
            }
            if settings.function_tolerance > 0.0 && previous - fx <= settings.function_tolerance * previous.abs().max(fx.abs()).max(1.0) {
                termination = Termination::FunctionTolerance;
                break;
            }
        }
    }
    Ok(LbfgsOutcome {
        gradient_norm: inf_norm(&g),
        x,
        value: fx,
        iterations,
        evaluations,
        termination,
        trace,
    })
}

/// Two-loop recursion for `−H∇f`.
fn direction(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn convex_quadratic_in_few_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let a: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
            let x0: Vec<f64> = (0..6).map(|_| rng.random_range(-50.0..50.0)).collect();
            let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
                let r: Vec<f64> = x.iter().zip(&a).map(|(x, a)| x - a).collect();
                Ok((dot(&r, &r), r.iter().map(|v| 2.0 * v).collect()))
            };
            let out = lbfgs_minimize(&mut f, &x0, &LbfgsSettings::default()).unwrap();
            assert!(out.converged());
            assert!(out.iterations <= 5, "{}", out.iterations);
            for (x, a) in out.x.iter().zip(&a) {
                assert!((x - a).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let out = lbfgs_minimize(&mut rosenbrock, &[-1.2, 1.0], &LbfgsSettings::default()).unwrap();
        assert!(out.converged(), "{:?}", out.termination);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6, "{:?}", out.x);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((x[0] * x[0], vec![2.0 * x[0]])) };
        let out = lbfgs_minimize(&mut f, &[0.0], &LbfgsSettings::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.x, vec![0.0]);
        assert_eq!(out.evaluations, 1);
    }

    #[test]
    fn ill_conditioned_quadratic_trace_is_monotone() {
        let scales = [1.0, 10.0, 100.0, 1000.0];
        let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let f = x.iter().zip(&scales).map(|(x, s)| s * x * x).sum();
            Ok((f, x.iter().zip(&scales).map(|(x, s)| 2.0 * s * x).collect()))
        };
        let out = lbfgs_minimize(&mut f, &[1.0, 1.0, 1.0, 1.0], &LbfgsSettings::default()).unwrap();
        assert!(out.converged());
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn failing_region_is_avoided() {
        // Undefined for x >= 2; the minimizer of the smooth part lies at 3.
        let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            if x[0] >= 2.0 {
                return Err(Error::DegenerateMatrix);
            }
            Ok(((x[0] - 3.0).powi(2) - (2.0 - x[0]).ln(), vec![2.0 * (x[0] - 3.0) + 1.0 / (2.0 - x[0])]))
        };
        let out = lbfgs_minimize(&mut f, &[0.0], &LbfgsSettings::default()).unwrap();
        assert!(out.x[0] < 2.0);
        assert!(out.converged() || out.termination == Termination::LineSearchFailed);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn non_descent_problem_reports_line_search_failure() {
        // The gradient is wrong everywhere, so no step satisfies the Wolfe conditions.
        let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((x[0] * x[0], vec![-1.0])) };
        let out = lbfgs_minimize(&mut f, &[1.0], &LbfgsSettings::default()).unwrap();
        assert_eq!(out.termination, Termination::LineSearchFailed);
        assert_eq!(out.x, vec![1.0]);
        assert!(matches!(out.into_result(), Err(Error::LineSearchFailed { .. })));
    }
}
