//! Rotation-matrix algebra for pose labels.
//!
//! Pose labels live in SO(3) as plain row-major 3×3 matrices. The Euler
//! convention used throughout the crate is
//!
//! ```text
//! R(yaw, pitch, roll) = R_roll(roll) · R_pitch(pitch) · R_yaw(yaw)
//!
//! R_yaw(ψ)   = [[cos ψ, 0, -sin ψ], [0, 1, 0], [sin ψ, 0, cos ψ]]      (about y)
//! R_pitch(β) = [[1, 0, 0], [0, cos β, -sin β], [0, sin β, cos β]]      (about x)
//! R_roll(φ)  = [[cos φ, sin φ, 0], [-sin φ, cos φ, 0], [0, 0, 1]]      (about z)
//! ```
//!
//! `R_roll` is the same matrix that maps a clockwise in-plane image rotation
//! onto the pose label (see [`crate::augment::rotate_pose`]), so rolling a
//! head and rotating its picture are the same operation on labels.
//!
//! The camera frame is x right, y up, z towards the viewer.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

/// Tolerance used when a matrix enters the crate as a pose label.
pub const ROTATION_TOL: f64 = 1e-6;

/// Arccos argument bound for the differentiable geodesic distance.
pub const SMOOTH_CLAMP: f64 = 1e-7;

const GIMBAL_EPS: f64 = 1e-7;
const GRAM_SCHMIDT_EPS: f64 = 1e-8;

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn mat_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub fn determinant(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// tr(A·Bᵀ) without forming the product.
pub fn trace_abt(a: &Mat3, b: &Mat3) -> f64 {
    let mut t = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            t += a[i][j] * b[i][j];
        }
    }
    t
}

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Largest deviation of MᵀM from the identity, and det(M).
fn rotation_residuals(m: &Mat3) -> (f64, f64) {
    let mtm = mat_mul(&transpose(m), m);
    let mut worst = 0.0_f64;
    for (i, row) in mtm.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
    }
    (worst, determinant(m))
}

/// True iff max|MᵀM − I| ≤ tol and |det(M) − 1| ≤ tol.
pub fn validate_rotation(m: &Mat3, tol: f64) -> bool {
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return false;
    }
    let (orth, det) = rotation_residuals(m);
    orth <= tol && (det - 1.0).abs() <= tol
}

/// A 3×3 special-orthogonal matrix. Construction through [`RotationMatrix::new`]
/// validates the invariants, so downstream operations never re-check them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct RotationMatrix(Mat3);

impl RotationMatrix {
    pub const IDENTITY: RotationMatrix = RotationMatrix(IDENTITY);

    pub fn new(m: Mat3) -> Result<Self> {
        Self::with_tolerance(m, ROTATION_TOL)
    }

    pub fn with_tolerance(m: Mat3, tol: f64) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rotation matrix entries"));
        }
        let (orthogonality, det) = rotation_residuals(&m);
        if orthogonality <= tol && (det - 1.0).abs() <= tol {
            Ok(RotationMatrix(m))
        } else {
            Err(Error::InvalidRotation { orthogonality, det })
        }
    }

    /// Products of rotations are rotations; callers vouch for that.
    pub(crate) fn from_trusted(m: Mat3) -> Self {
        debug_assert!(validate_rotation(&m, 1e-6), "{m:?}");
        RotationMatrix(m)
    }

    pub fn from_row_major(v: &[f64]) -> Result<Self> {
        if v.len() != 9 {
            return Err(Error::SizeMismatch {
                expected: 9,
                got: v.len(),
            });
        }
        Self::new([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn transpose(&self) -> RotationMatrix {
        RotationMatrix(transpose(&self.0))
    }

    pub fn compose(&self, rhs: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(mat_mul(&self.0, &rhs.0))
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        mat_vec(&self.0, v)
    }

    /// Largest absolute element-wise difference.
    pub fn max_abs_diff(&self, other: &RotationMatrix) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(other.0.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Uniform (Haar) sample from SO(3) via a normalized Gaussian quaternion.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> RotationMatrix {
        let mut q = [0.0f64; 4];
        loop {
            for c in q.iter_mut() {
                *c = rng.sample(StandardNormal);
            }
            let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            if n > 1e-9 {
                q.iter_mut().for_each(|c| *c /= n);
                break;
            }
        }
        let [w, x, y, z] = q;
        RotationMatrix([
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ])
    }
}

impl TryFrom<[f64; 9]> for RotationMatrix {
    type Error = Error;

    fn try_from(v: [f64; 9]) -> Result<Self> {
        RotationMatrix::from_row_major(&v)
    }
}

impl From<RotationMatrix> for [f64; 9] {
    fn from(r: RotationMatrix) -> Self {
        r.to_row_major()
    }
}

/// Yaw, pitch and roll in radians. Yaw and roll lie in (−π, π], pitch in
/// [−π/2, π/2].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl EulerAngles {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        EulerAngles { yaw, pitch, roll }
    }

    pub fn from_degrees(yaw: f64, pitch: f64, roll: f64) -> Self {
        EulerAngles::new(yaw.to_radians(), pitch.to_radians(), roll.to_radians())
    }

    pub fn to_degrees(&self) -> [f64; 3] {
        [self.yaw.to_degrees(), self.pitch.to_degrees(), self.roll.to_degrees()]
    }
}

pub fn yaw_matrix(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    [[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]]
}

pub fn pitch_matrix(pitch: f64) -> Mat3 {
    let (s, c) = pitch.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

/// The extrinsic z-axis matrix; also the label map of a clockwise image rotation.
pub fn roll_matrix(roll: f64) -> Mat3 {
    let (s, c) = roll.sin_cos();
    [[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]]
}

pub fn euler_to_rotation(e: &EulerAngles) -> Result<RotationMatrix> {
    if !(e.yaw.is_finite() && e.pitch.is_finite() && e.roll.is_finite()) {
        return Err(Error::NonFinite("euler angles"));
    }
    let m = mat_mul(
        &roll_matrix(e.roll),
        &mat_mul(&pitch_matrix(e.pitch), &yaw_matrix(e.yaw)),
    );
    Ok(RotationMatrix::from_trusted(m))
}

/// Closed-form inverse of [`euler_to_rotation`]. At gimbal lock the roll is
/// reported as zero and the yaw carries the coupled angle.
pub fn rotation_to_euler(r: &RotationMatrix) -> EulerAngles {
    let m = r.matrix();
    let pitch = m[2][1].clamp(-1.0, 1.0).asin();
    let cos_pitch = (m[2][0] * m[2][0] + m[2][2] * m[2][2]).sqrt();
    if cos_pitch < GIMBAL_EPS {
        // Row 0 of R_pitch(±π/2)·R_yaw(ψ) is (cos ψ, 0, -sin ψ).
        let yaw = (-m[0][2]).atan2(m[0][0]);
        return EulerAngles::new(yaw, pitch, 0.0);
    }
    let yaw = m[2][0].atan2(m[2][2]);
    let roll = m[0][1].atan2(m[1][1]);
    EulerAngles::new(yaw, pitch, roll)
}

/// (tr(A·Bᵀ) − 1) / 2, clamped to [−1, 1]: the cosine of the geodesic distance.
pub fn trace_similarity(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    ((trace_abt(a.matrix(), b.matrix()) - 1.0) / 2.0).clamp(-1.0, 1.0)
}

/// Rotation angle separating two orientations, in [0, π].
pub fn geodesic_distance(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    trace_similarity(a, b).acos()
}

/// Geodesic distance between an arbitrary (predicted) matrix and a label with
/// the arccos argument kept inside [−1 + 1e−7, 1 − 1e−7]. Returns the distance
/// and its gradient with respect to `pred` (zero when the clamp is active).
pub fn smooth_geodesic(pred: &Mat3, target: &RotationMatrix) -> (f64, Mat3) {
    let raw = (trace_abt(pred, target.matrix()) - 1.0) / 2.0;
    let lo = -1.0 + SMOOTH_CLAMP;
    let hi = 1.0 - SMOOTH_CLAMP;
    let c = raw.clamp(lo, hi);
    let d = c.acos();
    let mut grad = [[0.0; 3]; 3];
    if raw > lo && raw < hi {
        let scale = -0.5 / (1.0 - c * c).sqrt();
        let t = target.matrix();
        for i in 0..3 {
            for j in 0..3 {
                grad[i][j] = scale * t[i][j];
            }
        }
    }
    (d, grad)
}

/// Two stacked 3-vectors that Gram-Schmidt maps to a rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SixDRep(pub [f64; 6]);

impl SixDRep {
    pub fn columns(&self) -> (Vec3, Vec3) {
        let v = &self.0;
        ([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }
}

struct GramSchmidtParts {
    b1: Vec3,
    b2: Vec3,
    n1: f64,
    n2: f64,
    a2: Vec3,
}

fn gram_schmidt_parts(v: &SixDRep) -> Result<GramSchmidtParts> {
    if v.0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("6D representation"));
    }
    let (a1, a2) = v.columns();
    let n1 = norm(&a1);
    if n1 < GRAM_SCHMIDT_EPS {
        return Err(Error::DegenerateSixD("first vector has near-zero norm"));
    }
    let b1 = [a1[0] / n1, a1[1] / n1, a1[2] / n1];
    let proj = dot(&b1, &a2);
    let u = [a2[0] - proj * b1[0], a2[1] - proj * b1[1], a2[2] - proj * b1[2]];
    let n2 = norm(&u);
    if n2 < GRAM_SCHMIDT_EPS {
        return Err(Error::DegenerateSixD("second vector is parallel to the first"));
    }
    let b2 = [u[0] / n2, u[1] / n2, u[2] / n2];
    Ok(GramSchmidtParts { b1, b2, n1, n2, a2 })
}

fn columns_to_matrix(b1: &Vec3, b2: &Vec3, b3: &Vec3) -> Mat3 {
    [
        [b1[0], b2[0], b3[0]],
        [b1[1], b2[1], b3[1]],
        [b1[2], b2[2], b3[2]],
    ]
}

/// Maps a 6D vector to the rotation with columns (b₁, b₂, b₁ × b₂).
pub fn gram_schmidt_6d(v: &SixDRep) -> Result<RotationMatrix> {
    let p = gram_schmidt_parts(v)?;
    let b3 = cross(&p.b1, &p.b2);
    Ok(RotationMatrix::from_trusted(columns_to_matrix(&p.b1, &p.b2, &b3)))
}

/// Vector-Jacobian product of [`gram_schmidt_6d`]: given dL/dR returns dL/dv.
pub fn gram_schmidt_6d_backward(v: &SixDRep, grad_r: &Mat3) -> Result<[f64; 6]> {
    let GramSchmidtParts { b1, b2, n1, n2, a2 } = gram_schmidt_parts(v)?;
    let col = |j: usize| [grad_r[0][j], grad_r[1][j], grad_r[2][j]];
    let mut g1 = col(0);
    let mut g2 = col(1);
    let g3 = col(2);

    // b3 = b1 × b2
    let c1 = cross(&b2, &g3);
    let c2 = cross(&g3, &b1);
    for k in 0..3 {
        g1[k] += c1[k];
        g2[k] += c2[k];
    }

    // b2 = u / |u|
    let t = dot(&b2, &g2);
    let gu = [
        (g2[0] - b2[0] * t) / n2,
        (g2[1] - b2[1] * t) / n2,
        (g2[2] - b2[2] * t) / n2,
    ];

    // u = a2 - (b1·a2) b1
    let b1_gu = dot(&b1, &gu);
    let b1_a2 = dot(&b1, &a2);
    let ga2 = [gu[0] - b1[0] * b1_gu, gu[1] - b1[1] * b1_gu, gu[2] - b1[2] * b1_gu];
    for k in 0..3 {
        g1[k] += -b1_a2 * gu[k] - a2[k] * b1_gu;
    }

    // b1 = a1 / |a1|
    let t = dot(&b1, &g1);
    let ga1 = [
        (g1[0] - b1[0] * t) / n1,
        (g1[1] - b1[1] * t) / n1,
        (g1[2] - b1[2] * t) / n1,
    ];
    Ok([ga1[0], ga1[1], ga1[2], ga2[0], ga2[1], ga2[2]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit(self) -> Vec3 {
        match self {
            Axis::X => [1.0, 0.0, 0.0],
            Axis::Y => [0.0, 1.0, 0.0],
            Axis::Z => [0.0, 0.0, 1.0],
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::Config(format!("unknown axis {other:?}"))),
        }
    }
}

/// Image of a basis vector under the rotation: a point on the unit sphere.
pub fn sphere_project(r: &RotationMatrix, axis: Axis) -> Vec3 {
    r.apply(&axis.unit())
}

/// Per-angle mean absolute errors in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AngleErrors {
    pub yaw_mae: f64,
    pub pitch_mae: f64,
    pub roll_mae: f64,
    pub mean: f64,
}

/// Smallest absolute difference between two angles, in degrees.
pub fn wrapped_abs_diff_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(360.0);
    d.min(360.0 - d)
}

pub fn wrapped_mae(pred: &[EulerAngles], gt: &[EulerAngles]) -> Result<AngleErrors> {
    if pred.is_empty() {
        return Err(Error::Empty("prediction list"));
    }
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions vs {} labels",
            pred.len(),
            gt.len()
        )));
    }
    let mut sums = [0.0f64; 3];
    for (p, g) in pred.iter().zip(gt) {
        let (p, g) = (p.to_degrees(), g.to_degrees());
        for k in 0..3 {
            sums[k] += wrapped_abs_diff_deg(p[k], g[k]);
        }
    }
    let n = pred.len() as f64;
    let [yaw_mae, pitch_mae, roll_mae] = sums.map(|s| s / n);
    Ok(AngleErrors {
        yaw_mae,
        pitch_mae,
        roll_mae,
        mean: (yaw_mae + pitch_mae + roll_mae) / 3.0,
    })
}
