//! Forward values and local Jacobians of the rotation-valued primitives.
//! Matrices are flattened row-major into 9 entries.

use nalgebra::{Matrix3, Vector3};

use crate::rotations::{polish_polar, Axis, EulerConvention};

pub(crate) fn mat(m: &[f64]) -> Matrix3<f64> {
    Matrix3::new(m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8])
}

pub(crate) fn flat(m: &Matrix3<f64>) -> [f64; 9] {
    [
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 0)],
        m[(1, 1)],
        m[(1, 2)],
        m[(2, 0)],
        m[(2, 1)],
        m[(2, 2)],
    ]
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    crate::rotations::skew(v)
}

/// Rodrigues map and `∂R/∂v_i` for i = 0..3.
pub(crate) fn rodrigues(v: [f64; 3]) -> ([f64; 9], [[f64; 9]; 3]) {
    let w = Vector3::new(v[0], v[1], v[2]);
    let r = crate::rotations::axis_angle_to_matrix(crate::rotations::AxisAngle(w)).0;
    let theta2 = w.norm_squared();
    let mut jac = [[0.0; 9]; 3];
    for (i, slot) in jac.iter_mut().enumerate() {
        let e = Axis::unit(match i {
            0 => Axis::X,
            1 => Axis::Y,
            _ => Axis::Z,
        });
        let d = if theta2 < 1e-14 {
            let ei = skew(&e);
            let k = skew(&w);
            ei + (ei * k + k * ei) * 0.5
        } else {
            let cross = w.cross(&((Matrix3::identity() - r) * e));
            (skew(&w) * w[i] + skew(&cross)) * r / theta2
        };
        *slot = flat(&d);
    }
    (flat(&r), jac)
}

/// Logarithm map as a smooth function of all nine entries, with its 3×9
/// Jacobian. Agrees with the rotation log on proper rotations away from
/// half-turns.
pub(crate) fn log_map(m: &[f64]) -> ([f64; 3], [[f64; 9]; 3]) {
    let w = [m[7] - m[5], m[2] - m[6], m[3] - m[1]];
    let c = 0.5 * (m[0] + m[4] + m[8] - 1.0);
    let wn = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let s = 0.5 * wn;
    // α = g(s, c) · w
    let (g, dg_ds, dg_dc) = if s < 1e-7 && c > 0.0 {
        let c2 = c * c;
        (0.5 / c - s * s / (6.0 * c2 * c), -s / (3.0 * c2 * c), -0.5 / c2 + s * s / (2.0 * c2 * c2))
    } else {
        let s = s.max(1e-12);
        let theta = s.atan2(c);
        let r2 = s * s + c * c;
        let dtheta_ds = c / r2;
        let dtheta_dc = -s / r2;
        (theta / (2.0 * s), dtheta_ds / (2.0 * s) - theta / (2.0 * s * s), dtheta_dc / (2.0 * s))
    };
    let alpha = [g * w[0], g * w[1], g * w[2]];
    // dw/dm: w0 = m7 - m5, w1 = m2 - m6, w2 = m3 - m1
    let dw: [[(usize, f64); 2]; 3] = [[(7, 1.0), (5, -1.0)], [(2, 1.0), (6, -1.0)], [(3, 1.0), (1, -1.0)]];
    // ds/dm = (w · dw) / (4 s)
    let mut ds = [0.0; 9];
    if wn > 0.0 {
        for (wi, row) in w.iter().zip(dw.iter()) {
            for &(idx, sign) in row {
                ds[idx] += sign * wi / (2.0 * wn);
            }
        }
    }
    let mut dc = [0.0; 9];
    dc[0] = 0.5;
    dc[4] = 0.5;
    dc[8] = 0.5;
    let mut jac = [[0.0; 9]; 3];
    for a in 0..3 {
        for e in 0..9 {
            jac[a][e] = w[a] * (dg_ds * ds[e] + dg_dc * dc[e]);
        }
        for &(idx, sign) in &dw[a] {
            jac[a][idx] += g * sign;
        }
    }
    (alpha, jac)
}

/// Cached factors of the polar projection `M = R S'`.
#[derive(Debug, Clone)]
pub(crate) struct PolarCache {
    pub r: Matrix3<f64>,
    pub v: Matrix3<f64>,
    pub lambda: [f64; 3],
}

/// Nearest rotation and the factors needed for its vector-Jacobian product.
pub(crate) fn polar(m: &[f64]) -> Option<([f64; 9], PolarCache)> {
    let mm = mat(m);
    if !mm.iter().all(|v| v.is_finite()) {
        return None;
    }
    let svd = mm.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    if sv[order[1]] <= 1e-12 * sv[order[0]].max(f64::MIN_POSITIVE) {
        return None;
    }
    let mut d = [1.0; 3];
    if (u * v_t).determinant() < 0.0 {
        d[order[2]] = -1.0;
    }
    let dm = Matrix3::from_diagonal(&Vector3::new(d[0], d[1], d[2]));
    let r = if d == [1.0; 3] { polish_polar(&mm) } else { None }.unwrap_or(u * dm * v_t);
    let lambda = [d[0] * sv[0], d[1] * sv[1], d[2] * sv[2]];
    Some((
        flat(&r),
        PolarCache {
            r,
            v: v_t.transpose(),
            lambda,
        },
    ))
}

/// `∂L/∂M` given `∂L/∂R` for the polar rotation factor.
pub(crate) fn polar_vjp(cache: &PolarCache, upstream: &[f64]) -> [f64; 9] {
    let g = mat(upstream);
    let a = cache.r.transpose() * g;
    let at = cache.v.transpose() * a * cache.v;
    let mut bt = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let denom = cache.lambda[i] + cache.lambda[j];
            if denom.abs() > 1e-12 {
                bt[(i, j)] = at[(i, j)] / denom;
            }
        }
    }
    let b = cache.v * bt * cache.v.transpose();
    flat(&(cache.r * (b - b.transpose())))
}

/// Euler decomposition formula (no gimbal branch) and its 3×9 Jacobian.
pub(crate) fn euler(m: &[f64], convention: EulerConvention) -> ([f64; 3], [[f64; 9]; 3]) {
    let [i, j, k] = convention.axes().map(Axis::index);
    let s = convention.parity();
    let at = |r: usize, c: usize| m[r * 3 + c];
    let idx = |r: usize, c: usize| r * 3 + c;
    let mut jac = [[0.0; 9]; 3];

    let x = (s * at(i, k)).clamp(-1.0, 1.0);
    let mid = x.asin();
    let denom = (1.0 - x * x).sqrt();
    if denom > 0.0 {
        jac[1][idx(i, k)] = s / denom;
    }

    // atan2(y, x): d = (x dy - y dx) / (x² + y²)
    let mut atan2_term = |row: usize, y: f64, y_idx: usize, y_sign: f64, xv: f64, x_idx: usize| {
        let r2 = xv * xv + y * y;
        if r2 > 0.0 {
            jac[row][y_idx] += xv / r2 * y_sign;
            jac[row][x_idx] += -y / r2;
        }
        y.atan2(xv)
    };
    let first = atan2_term(0, -s * at(j, k), idx(j, k), -s, at(k, k), idx(k, k));
    let third = atan2_term(2, -s * at(i, j), idx(i, j), -s, at(i, i), idx(i, i));
    ([first, mid, third], jac)
}

/// Closest points between segments `p0-p1` and `q0-q1`.
/// Returns `(s, t, distance)` with both parameters in `[0, 1]`.
pub(crate) fn segment_closest(p0: &Vector3<f64>, p1: &Vector3<f64>, q0: &Vector3<f64>, q1: &Vector3<f64>) -> (f64, f64, f64) {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let eps = 1e-14;
    let (s, t);
    if a <= eps && e <= eps {
        s = 0.0;
        t = 0.0;
    } else if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > eps * a * e {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    let c1 = p0 + d1 * s;
    let c2 = q0 + d2 * t;
    (s, t, (c1 - c2).norm())
}
