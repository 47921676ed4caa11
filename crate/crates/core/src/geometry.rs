//! Rigid poses, SO(3) exponential/logarithm, pinhole back-projection and
//! least-squares rigid registration from 3D-3D correspondences.
//!
//! All lengths are millimeters.

use nalgebra::{Matrix3, Vector3};

use crate::error::GeometryError;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Rigid transform from object coordinates to camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    /// Object center in camera coordinates (mm).
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Mat3::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Mat3::identity(), t)
    }

    /// Maps a point from object coordinates to camera coordinates.
    #[inline]
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    /// Row-major rotation followed by translation.
    pub fn to_array(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[0],
            t[1],
            t[2],
        ]
    }

    pub fn from_array(a: &[f64; 12]) -> Pose {
        Pose::new(
            Mat3::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]),
            Vec3::new(a[9], a[10], a[11]),
        )
    }

    /// Checks the rotation invariants (orthonormal, det +1) and finite translation.
    pub fn is_valid(&self, tol: f64) -> bool {
        let rtr = self.rotation.transpose() * self.rotation;
        let ortho = (rtr - Mat3::identity()).iter().all(|v| v.abs() <= tol);
        ortho
            && (self.rotation.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// Angle (radians) of the relative rotation between two poses.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        log_so3(&(self.rotation * other.rotation.transpose())).norm()
    }
}

/// Axis-angle vector: direction is the rotation axis, norm the angle in radians.
pub type EulerVector = Vec3;

fn hat(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0)
}

/// Rodrigues formula.
pub fn exp_so3(e: &EulerVector) -> Mat3 {
    let theta2 = e.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(e);
    let (a, b) = if theta < 1e-4 {
        // Taylor expansions of sin(t)/t and (1 - cos(t))/t^2.
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Mat3::identity() + k * a + k * k * b
}

/// Canonical logarithm with angle in `[0, π]`.
pub fn log_so3(r: &Mat3) -> EulerVector {
    let w = Vec3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) * 0.5;
    let sin_theta = w.norm();
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if theta < 1e-6 {
        // theta / sin(theta) ≈ 1 + theta^2 / 6
        return w * (1.0 + theta * theta / 6.0);
    }
    if sin_theta > 1e-6 {
        return w * (theta / sin_theta);
    }

    // theta ≈ π: R ≈ 2aaᵀ - I, so the symmetric part carries the axis.
    let b = (r + Mat3::identity()) * 0.5;
    let col = (0..3)
        .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
        .unwrap_or(0);
    let mut axis = Vec3::new(b[(0, col)], b[(1, col)], b[(2, col)]);
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Pinhole camera model. Pixel `(u, v)` is the center of column `u`, row `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) || width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics);
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    #[inline]
    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        (
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        )
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Camera-space point for a pixel with a measured depth.
pub fn backproject(
    u: f64,
    v: f64,
    depth: f64,
    k: &CameraIntrinsics,
) -> Result<Vec3, GeometryError> {
    if !(depth > 0.0) {
        return Err(GeometryError::InvalidMeasurement(depth));
    }
    Ok(Vec3::new(
        (u - k.cx) * depth / k.fx,
        (v - k.cy) * depth / k.fy,
        depth,
    ))
}

/// Singular value decomposition `A = U diag(s) Vᵀ` of a 3×3 matrix by one-sided
/// Jacobi rotations. Singular values are sorted in descending order; `U` and
/// `V` are orthogonal (not necessarily proper rotations).
pub fn svd3(a: &Mat3) -> (Mat3, Vec3, Mat3) {
    let mut w = *a;
    let mut v = Mat3::identity();
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..2 {
            for q in (p + 1)..3 {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt().max(f64::MIN_POSITIVE));
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut w, &mut v] {
                    for i in 0..3 {
                        let x = m[(i, p)];
                        let y = m[(i, q)];
                        m[(i, p)] = c * x - s * y;
                        m[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }

    let mut order = [0usize, 1, 2];
    let norms = [w.column(0).norm(), w.column(1).norm(), w.column(2).norm()];
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let mut u = Mat3::zeros();
    let mut s = Vec3::zeros();
    let mut vs = Mat3::zeros();
    let scale = norms[order[0]].max(f64::MIN_POSITIVE);
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = norms[src];
        vs.set_column(dst, &v.column(src));
        if norms[src] > 1e-13 * scale {
            u.set_column(dst, &(w.column(src) / norms[src]));
        }
    }
    // Complete U for rank-deficient input.
    if s[1] <= 1e-13 * scale {
        let u0: Vec3 = u.column(0).into();
        let helper = if u0[0].abs() < 0.9 {
            Vec3::x()
        } else {
            Vec3::y()
        };
        let u1 = u0.cross(&helper).normalize();
        u.set_column(1, &u1);
    }
    if s[2] <= 1e-13 * scale {
        let u0: Vec3 = u.column(0).into();
        let u1: Vec3 = u.column(1).into();
        u.set_column(2, &u0.cross(&u1));
    }
    (u, s, vs)
}

/// Least-squares rigid transform mapping object points onto camera points
/// (centroid alignment + orthogonal Procrustes with reflection correction).
pub fn rigid_from_correspondences(pairs: &[(Vec3, Vec3)]) -> Result<Pose, GeometryError> {
    if pairs.len() < 3 {
        return Err(GeometryError::Degenerate("fewer than three correspondences"));
    }
    let n = pairs.len() as f64;
    let c_obj = pairs.iter().fold(Vec3::zeros(), |acc, (o, _)| acc + o) / n;
    let c_cam = pairs.iter().fold(Vec3::zeros(), |acc, (_, c)| acc + c) / n;

    let mut scatter = Mat3::zeros();
    let mut cross = Mat3::zeros();
    for (o, c) in pairs {
        let po = o - c_obj;
        let pc = c - c_cam;
        scatter += po * po.transpose();
        cross += po * pc.transpose();
    }

    // Object points must span at least a plane.
    let (_, spread, _) = svd3(&scatter);
    if !(spread[0] > 0.0) || spread[1] <= 1e-10 * spread[0] {
        return Err(GeometryError::Degenerate("collinear or coincident object points"));
    }

    let (u, _, v) = svd3(&cross);
    let d = (v * u.transpose()).determinant().signum();
    let d = if d == 0.0 { 1.0 } else { d };
    let rotation = v * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    let translation = c_cam - rotation * c_obj;
    Ok(Pose::new(rotation, translation))
}
