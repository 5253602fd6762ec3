//! Rotation representations: axis-angle vectors, rotation matrices and
//! Tait-Bryan Euler triples, plus the conversions between them.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthogonality defect above which a matrix is refused as a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-4;

/// Distance of the middle Euler angle from ±π/2 that counts as gimbal lock.
pub const GIMBAL_TOLERANCE: f64 = 1e-6;

/// Rotation vector: unit axis scaled by the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AxisAngle(pub Vector3<f64>);

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vector3::new(x, y, z))
    }

    pub fn zero() -> Self {
        AxisAngle(Vector3::zeros())
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        AxisAngle(axis.normalize() * angle)
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Equivalent rotation vector with angle in `[0, π]`.
    pub fn canonical(&self) -> Self {
        let angle = self.0.norm();
        if angle <= PI {
            return *self;
        }
        let axis = self.0 / angle;
        let mut wrapped = angle.rem_euclid(2.0 * PI);
        let mut axis = axis;
        if wrapped > PI {
            wrapped = 2.0 * PI - wrapped;
            axis = -axis;
        }
        AxisAngle(axis * wrapped)
    }

    /// Reflection through the sagittal (x = 0) plane.
    pub fn mirrored(&self) -> Self {
        AxisAngle(Vector3::new(self.0.x, -self.0.y, -self.0.z))
    }

    pub fn to_matrix(&self) -> RotationMatrix {
        axis_angle_to_matrix(*self)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.0.x, self.0.y, self.0.z]
    }
}

impl From<[f64; 3]> for AxisAngle {
    fn from(v: [f64; 3]) -> Self {
        AxisAngle::new(v[0], v[1], v[2])
    }
}

/// A 3×3 matrix that is expected (not guaranteed) to be a proper rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RotationMatrix(pub Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    pub fn defect(&self) -> f64 {
        orthogonality_defect(&self.0)
    }

    /// Valid when the orthogonality defect is below 1e-6 and det > 0.
    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|v| v.is_finite()) && self.defect() < 1e-6 && self.0.determinant() > 0.0
    }

    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    pub fn to_axis_angle(&self) -> Result<AxisAngle> {
        matrix_to_axis_angle(self)
    }
}

impl std::ops::Mul for RotationMatrix {
    type Output = RotationMatrix;
    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

/// Coordinate axis of an elementary rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X = 0,
    Y = 1,
    Z = 2,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn unit(self) -> Vector3<f64> {
        let mut v = Vector3::zeros();
        v[self.index()] = 1.0;
        v
    }

    /// Angles about this axis change sign under reflection through x = 0.
    pub fn mirror_sensitive(self) -> bool {
        !matches!(self, Axis::X)
    }
}

/// Intrinsic Tait-Bryan order: `R = R_a(first) · R_b(second) · R_c(third)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EulerConvention {
    Xyz,
    Xzy,
    Yxz,
    Yzx,
    Zxy,
    Zyx,
}

impl EulerConvention {
    pub const ALL: [EulerConvention; 6] = [
        EulerConvention::Xyz,
        EulerConvention::Xzy,
        EulerConvention::Yxz,
        EulerConvention::Yzx,
        EulerConvention::Zxy,
        EulerConvention::Zyx,
    ];

    pub fn axes(self) -> [Axis; 3] {
        use Axis::*;
        match self {
            EulerConvention::Xyz => [X, Y, Z],
            EulerConvention::Xzy => [X, Z, Y],
            EulerConvention::Yxz => [Y, X, Z],
            EulerConvention::Yzx => [Y, Z, X],
            EulerConvention::Zxy => [Z, X, Y],
            EulerConvention::Zyx => [Z, Y, X],
        }
    }

    /// +1 for cyclic orders (XYZ, YZX, ZXY), −1 otherwise.
    pub fn parity(self) -> f64 {
        match self {
            EulerConvention::Xyz | EulerConvention::Yzx | EulerConvention::Zxy => 1.0,
            _ => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EulerConvention::Xyz => "XYZ",
            EulerConvention::Xzy => "XZY",
            EulerConvention::Yxz => "YXZ",
            EulerConvention::Yzx => "YZX",
            EulerConvention::Zxy => "ZXY",
            EulerConvention::Zyx => "ZYX",
        }
    }
}

impl fmt::Display for EulerConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EulerConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EulerConvention::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownConvention(s.to_string()))
    }
}

impl TryFrom<String> for EulerConvention {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EulerConvention> for String {
    fn from(c: EulerConvention) -> String {
        c.name().to_string()
    }
}

/// Three angles in a given convention. `gimbal` marks a decomposition taken
/// at the singularity, where the third angle was forced to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerTriple {
    pub angles: [f64; 3],
    pub convention: EulerConvention,
    pub gimbal: bool,
}

impl EulerTriple {
    pub fn new(angles: [f64; 3], convention: EulerConvention) -> Self {
        EulerTriple {
            angles,
            convention,
            gimbal: false,
        }
    }

    pub fn to_matrix(&self) -> RotationMatrix {
        euler_to_matrix(self.angles, self.convention)
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation about a coordinate axis.
pub fn axis_rotation(axis: Axis, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    match axis {
        Axis::X => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        Axis::Y => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        Axis::Z => Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
    }
}

/// Rodrigues map.
pub fn axis_angle_to_matrix(aa: AxisAngle) -> RotationMatrix {
    let v = aa.0;
    let theta2 = v.norm_squared();
    let k = skew(&v);
    let (a, b) = if theta2 < 1e-12 {
        // Taylor expansions of sin(t)/t and (1 - cos(t))/t^2.
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    RotationMatrix(Matrix3::identity() + k * a + k * k * b)
}

/// Logarithm map with the angle canonicalized into `[0, π]`.
///
/// At exactly π the axis sign is chosen so that its first non-zero
/// component is positive.
pub fn matrix_to_axis_angle(r: &RotationMatrix) -> Result<AxisAngle> {
    let defect = orthogonality_defect(&r.0);
    if !(defect <= ROTATION_TOLERANCE) || r.0.determinant() <= 0.0 {
        return Err(Error::NotARotation { defect });
    }
    Ok(log_unchecked(&r.0))
}

pub(crate) fn log_unchecked(m: &Matrix3<f64>) -> AxisAngle {
    let vee = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin2 = vee.norm(); // 2 sin(theta)
    let cos = (m.trace() - 1.0) * 0.5;
    let theta = (0.5 * sin2).atan2(cos);
    if theta < 1e-6 {
        return AxisAngle(vee * (0.5 + theta * theta / 12.0));
    }
    if PI - theta > 1e-4 {
        return AxisAngle(vee * (theta / sin2));
    }
    // Close to a half-turn: recover the axis from the symmetric part.
    let s = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos;
    let col = (0..3).max_by(|&a, &b| s[(a, a)].total_cmp(&s[(b, b)])).unwrap_or(0);
    let mut axis: Vector3<f64> = s.column(col).into_owned();
    let n = axis.norm();
    if n > 0.0 {
        axis /= n;
    }
    // Align with the skew part when it is informative, else canonical sign.
    if sin2 > 1e-12 {
        if axis.dot(&vee) < 0.0 {
            axis = -axis;
        }
    } else if let Some(first) = axis.iter().copied().find(|c| c.abs() > 1e-12) {
        if first < 0.0 {
            axis = -axis;
        }
    }
    AxisAngle(axis * theta)
}

/// Nearest proper rotation in Frobenius norm.
pub fn project_to_rotation(m: &Matrix3<f64>) -> Result<RotationMatrix> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateMatrix);
    }
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateMatrix),
    };
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    if sv[order[1]] <= 1e-12 * sv[order[0]].max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateMatrix);
    }
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(order[2], order[2])] = -1.0;
        return Ok(RotationMatrix(u * d * v_t));
    }
    Ok(RotationMatrix(polish_polar(m).unwrap_or(u * v_t)))
}

/// Newton iteration `X ← (X + X⁻ᵀ)/2` from `m`, converging to the polar
/// factor of a matrix with positive determinant to rounding precision. The
/// SVD factors alone carry ~1e-11 noise.
pub(crate) fn polish_polar(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let newton = |x: Matrix3<f64>| Some(0.5 * (x + x.try_inverse()?.transpose()));
    let mut x = *m;
    for _ in 0..60 {
        let next = newton(x)?;
        let step = (next - x).norm();
        x = next;
        if step < 1e-9 {
            // Quadratic convergence: one more step reaches rounding level.
            return newton(x);
        }
    }
    None
}

/// `‖m mᵀ − I‖²_F`.
pub fn orthogonality_defect(m: &Matrix3<f64>) -> f64 {
    (m * m.transpose() - Matrix3::identity()).norm_squared()
}

pub fn euler_to_matrix(angles: [f64; 3], convention: EulerConvention) -> RotationMatrix {
    let [a, b, c] = convention.axes();
    RotationMatrix(axis_rotation(a, angles[0]) * axis_rotation(b, angles[1]) * axis_rotation(c, angles[2]))
}

/// Decomposes `r` into the given intrinsic order.
///
/// When the middle angle is within [`GIMBAL_TOLERANCE`] of ±π/2 the third
/// angle is set to zero, the first absorbs the free degree and the triple is
/// flagged.
pub fn matrix_to_euler(r: &RotationMatrix, convention: EulerConvention) -> Result<EulerTriple> {
    let defect = orthogonality_defect(&r.0);
    if !(defect <= ROTATION_TOLERANCE) || r.0.determinant() <= 0.0 {
        return Err(Error::NotARotation { defect });
    }
    Ok(euler_unchecked(&r.0, convention))
}

pub(crate) fn euler_unchecked(m: &Matrix3<f64>, convention: EulerConvention) -> EulerTriple {
    let [i, j, k] = convention.axes().map(Axis::index);
    let s = convention.parity();
    let sin_mid = (s * m[(i, k)]).clamp(-1.0, 1.0);
    let mid = sin_mid.asin();
    if (mid.abs() - PI / 2.0).abs() < GIMBAL_TOLERANCE {
        // R = R_i(a) R_j(mid); peel off the middle rotation.
        let rest = m * axis_rotation(convention.axes()[1], mid).transpose();
        let first = (s * rest[(k, j)]).atan2(rest[(j, j)]);
        return EulerTriple {
            angles: [first, mid, 0.0],
            convention,
            gimbal: true,
        };
    }
    let first = (-s * m[(j, k)]).atan2(m[(k, k)]);
    let third = (-s * m[(i, j)]).atan2(m[(i, i)]);
    EulerTriple {
        angles: [first, mid, third],
        convention,
        gimbal: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_aa(rng: &mut ChaCha8Rng, max_angle: f64) -> AxisAngle {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        AxisAngle::from_axis_angle(axis, rng.random_range(1e-3..max_angle))
    }

    #[test]
    fn rodrigues_known_values() {
        let id = axis_angle_to_matrix(AxisAngle::zero());
        assert_relative_eq!(id.0, Matrix3::identity());
        let half = axis_angle_to_matrix(AxisAngle::new(PI, 0.0, 0.0));
        assert_relative_eq!(half.0, Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)), epsilon = 1e-15);
        let quarter = axis_angle_to_matrix(AxisAngle::new(0.0, 0.0, PI / 2.0));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(quarter.0, expected, epsilon = 1e-15);
    }

    #[test]
    fn log_known_values() {
        let aa = matrix_to_axis_angle(&RotationMatrix::identity()).unwrap();
        assert_eq!(aa.0, Vector3::zeros());
        let half = RotationMatrix(Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)));
        let aa = matrix_to_axis_angle(&half).unwrap();
        assert_relative_eq!(aa.0, Vector3::new(PI, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn log_rejects_non_rotation() {
        let m = RotationMatrix(Matrix3::identity() * 2.0);
        assert!(matches!(matrix_to_axis_angle(&m), Err(Error::NotARotation { .. })));
        let reflection = RotationMatrix(Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0)));
        assert!(matrix_to_axis_angle(&reflection).is_err());
    }

    #[test]
    fn log_inverts_exp_near_half_turn() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let aa = random_aa(&mut rng, PI - 1e-3);
            let aa = AxisAngle(aa.0.normalize() * rng.random_range(PI - 1e-3..PI - 1e-7));
            let back = matrix_to_axis_angle(&aa.to_matrix()).unwrap();
            assert_relative_eq!(back.0, aa.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn canonical_wraps_large_angles() {
        let aa = AxisAngle::new(0.0, 0.0, 1.5 * PI).canonical();
        assert_relative_eq!(aa.0, Vector3::new(0.0, 0.0, -0.5 * PI), epsilon = 1e-12);
        let aa = AxisAngle::new(2.0 * PI + 0.25, 0.0, 0.0).canonical();
        assert_relative_eq!(aa.0, Vector3::new(0.25, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn negated_vector_is_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let aa = random_aa(&mut rng, 3.0);
            let r = aa.to_matrix();
            let r_neg = AxisAngle(-aa.0).to_matrix();
            assert_relative_eq!(r_neg.0, r.0.transpose(), epsilon = 1e-14);
        }
    }

    #[test]
    fn projection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = random_aa(&mut rng, 2.0).to_matrix();
        assert_relative_eq!(project_to_rotation(&r.0).unwrap().0, r.0, epsilon = 1e-12);
        let p = project_to_rotation(&(Matrix3::identity() * 2.0)).unwrap();
        assert_relative_eq!(p.0, Matrix3::identity(), epsilon = 1e-14);
        let degenerate = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(project_to_rotation(&degenerate), Err(Error::DegenerateMatrix));
    }

    #[test]
    fn projection_is_locally_minimal() {
        // Random search over nearby rotations never beats the projection.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let r = random_aa(&mut rng, 3.0).to_matrix();
            let noise = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let m = r.0 + noise * 0.01;
            let p = project_to_rotation(&m).unwrap();
            assert!((p.0 - r.0).norm() < 0.02);
            let best = (m - p.0).norm();
            for _ in 0..200 {
                let delta = AxisAngle::new(
                    rng.random_range(-0.02..0.02),
                    rng.random_range(-0.02..0.02),
                    rng.random_range(-0.02..0.02),
                );
                let q = p.0 * delta.to_matrix().0;
                assert!((m - q).norm() >= best - 1e-12);
            }
        }
    }

    #[test]
    fn projection_fixes_reflections() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -0.5));
        let p = project_to_rotation(&m).unwrap();
        assert!(p.0.determinant() > 0.0);
        assert!(p.defect() < 1e-12);
    }

    #[test]
    fn defect_examples() {
        assert_relative_eq!(orthogonality_defect(&(Matrix3::identity() * 2.0)), 27.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Matrix3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let mut sum = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut dot: f64 = 0.0;
                for k in 0..3 {
                    dot += m[(i, k)] * m[(j, k)];
                }
                let target: f64 = if i == j { 1.0 } else { 0.0 };
                sum += (dot - target).powi(2_i32);
            }
        }
        assert_relative_eq!(orthogonality_defect(&m), sum, max_relative = 1e-12);
    }

    #[test]
    fn euler_examples() {
        for conv in EulerConvention::ALL {
            let e = matrix_to_euler(&RotationMatrix::identity(), conv).unwrap();
            assert_eq!(e.angles, [0.0, 0.0, 0.0]);
            assert!(!e.gimbal);
            let first = conv.axes()[0];
            let r = RotationMatrix(axis_rotation(first, PI / 2.0));
            let e = matrix_to_euler(&r, conv).unwrap();
            assert_relative_eq!(e.angles[0], PI / 2.0, epsilon = 1e-12);
            assert_relative_eq!(e.angles[1], 0.0, epsilon = 1e-12);
            assert_relative_eq!(e.angles[2], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn euler_gimbal_assigns_first_angle() {
        for conv in EulerConvention::ALL {
            let r = euler_to_matrix([0.4, PI / 2.0, -0.3], conv);
            let e = matrix_to_euler(&r, conv).unwrap();
            assert!(e.gimbal);
            assert_eq!(e.angles[2], 0.0);
            assert_relative_eq!(e.to_matrix().0, r.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn convention_parsing() {
        assert_eq!("xzy".parse::<EulerConvention>().unwrap(), EulerConvention::Xzy);
        assert!(matches!("XXY".parse::<EulerConvention>(), Err(Error::UnknownConvention(_))));
    }

    #[test]
    fn mirrored_rotation_is_reflection_conjugate() {
        let s = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
        let aa = AxisAngle::new(0.3, -0.7, 0.2);
        let lhs = aa.mirrored().to_matrix().0;
        assert_relative_eq!(lhs, s * aa.to_matrix().0 * s, epsilon = 1e-14);
    }
}
