//! Scene primitives, cameras, and the covariance / projection math shared by
//! the kernel and the rasterizer.
//!
//! Conventions: cameras follow the OpenCV/COLMAP frame (x right, y down,
//! z forward), pixel centers sit at half-integer coordinates, and quaternions
//! are stored as `(w, x, y, z)`.

use nalgebra::{Matrix2, Matrix3, Matrix4, SymmetricEigen, Vector2, Vector3, Vector4};

use crate::error::{HgsError, Result};

pub const DEFAULT_NEAR_CLIP: f64 = 0.01;

/// Low-pass dilation added to the diagonal of every projected covariance, px².
pub const SCREEN_DILATION: f64 = 0.3;

/// Whitening transforms with a larger condition number are treated as singular.
pub const MAX_WHITENING_CONDITION: f64 = 1e8;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Number of SH coefficients per color channel for a given degree.
pub fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// A pair of half-Gaussians sharing center, covariance and color, split by a
/// plane through the center with one opacity per side.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfGaussianPrimitive {
    pub mu: Vector3<f64>,
    /// Log of the per-axis standard deviations.
    pub log_scale: Vector3<f64>,
    /// Quaternion `(w, x, y, z)`; normalized before use.
    pub rotation: Vector4<f64>,
    pub sh_coeffs: Vec<Vector3<f64>>,
    /// Splitting-plane normal; normalized before use.
    pub normal: Vector3<f64>,
    /// Logit of the opacity of the side the normal points into.
    pub raw_opacity_a: f64,
    /// Logit of the opacity of the opposite side.
    pub raw_opacity_b: f64,
}

impl HalfGaussianPrimitive {
    pub fn opacity_a(&self) -> f64 {
        sigmoid(self.raw_opacity_a)
    }

    pub fn opacity_b(&self) -> f64 {
        sigmoid(self.raw_opacity_b)
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        build_covariance(&self.log_scale, &self.rotation)
    }

    pub fn unit_normal(&self) -> Vector3<f64> {
        self.normal / self.normal.norm()
    }

    pub fn max_scale(&self) -> f64 {
        self.log_scale.max().exp()
    }

    pub(crate) fn validate(&self, index: usize, coeffs: usize) -> Result<()> {
        let invalid = |reason: &str| HgsError::InvalidPrimitive {
            index,
            reason: reason.to_string(),
        };
        if self.sh_coeffs.len() != coeffs {
            return Err(invalid("SH coefficient count does not match the scene degree"));
        }
        let finite = self.mu.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.normal.iter().all(|v| v.is_finite())
            && self.sh_coeffs.iter().flatten().all(|v| v.is_finite())
            && self.raw_opacity_a.is_finite()
            && self.raw_opacity_b.is_finite();
        if !finite {
            return Err(invalid("non-finite parameter"));
        }
        if self.rotation.norm() == 0.0 {
            return Err(invalid("zero-length rotation quaternion"));
        }
        if self.normal.norm() == 0.0 {
            return Err(invalid("zero-length splitting normal"));
        }
        Ok(())
    }
}

/// Number of scalar parameters of a primitive with `coeffs` SH coefficients.
pub fn param_count(coeffs: usize) -> usize {
    15 + 3 * coeffs
}

/// Mutable access to the `k`-th scalar parameter, in the order of
/// [`crate::PrimitiveGrad::flatten`].
pub fn param_mut(p: &mut HalfGaussianPrimitive, k: usize) -> &mut f64 {
    let coeffs = p.sh_coeffs.len();
    match k {
        0..=2 => &mut p.mu[k],
        3..=5 => &mut p.log_scale[k - 3],
        6..=9 => &mut p.rotation[k - 6],
        _ if k < 10 + 3 * coeffs => {
            let j = k - 10;
            &mut p.sh_coeffs[j / 3][j % 3]
        }
        _ => {
            let j = k - 10 - 3 * coeffs;
            match j {
                0..=2 => &mut p.normal[j],
                3 => &mut p.raw_opacity_a,
                4 => &mut p.raw_opacity_b,
                _ => panic!("parameter index {k} out of range"),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub primitives: Vec<HalfGaussianPrimitive>,
    pub sh_degree: usize,
    pub background: Vector3<f64>,
}

impl Scene {
    /// Builds a scene after checking every primitive against the shared SH
    /// degree. An empty primitive list is rejected.
    pub fn new(
        primitives: Vec<HalfGaussianPrimitive>,
        sh_degree: usize,
        background: Vector3<f64>,
    ) -> Result<Self> {
        if primitives.is_empty() {
            return Err(HgsError::EmptyScene);
        }
        let scene = Scene {
            primitives,
            sh_degree,
            background,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > 3 {
            return Err(HgsError::InvalidConfig(format!(
                "SH degree {} exceeds 3",
                self.sh_degree
            )));
        }
        let coeffs = sh_coeff_count(self.sh_degree);
        for (i, p) in self.primitives.iter().enumerate() {
            p.validate(i, coeffs)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }
}

/// Pinhole camera with a rigid world-to-camera transform.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near_clip: f64,
}

impl CameraModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let cam = CameraModel {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near_clip: DEFAULT_NEAR_CLIP,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`; `up` is a world-space hint.
    /// The principal point is the image center.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-12 {
            return Err(HgsError::InvalidCamera(
                "up vector is parallel to the viewing direction".into(),
            ));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        CameraModel::new(
            rotation,
            translation,
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if !(err < 1e-6) {
            return Err(HgsError::InvalidCamera(format!(
                "rotation block is not orthonormal (error {err:e})"
            )));
        }
        if (self.rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(HgsError::InvalidCamera("rotation block is a reflection".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(HgsError::InvalidCamera("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(HgsError::InvalidCamera("image size must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return Err(HgsError::InvalidCamera(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(HgsError::InvalidCamera("non-finite translation".into()));
        }
        Ok(())
    }

    pub fn world_to_cam(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Rotation matrix of a (not necessarily normalized) quaternion `(w, x, y, z)`.
pub fn quat_to_rotation(q: &Vector4<f64>) -> Matrix3<f64> {
    let q = q / q.norm();
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Σ = R S Sᵀ Rᵀ with S = diag(exp(log_scale)).
pub fn build_covariance(log_scale: &Vector3<f64>, rotation: &Vector4<f64>) -> Matrix3<f64> {
    let r = quat_to_rotation(rotation);
    let s2 = Vector3::new(
        (2.0 * log_scale.x).exp(),
        (2.0 * log_scale.y).exp(),
        (2.0 * log_scale.z).exp(),
    );
    let m = r * Matrix3::from_diagonal(&s2) * r.transpose();
    // exact symmetry
    (m + m.transpose()) * 0.5
}

/// Jacobian of the local affine approximation of the map from camera space to
/// ray space `(u, v, z)`, where `(u, v)` are pixel coordinates. Integration
/// along a pixel's viewing ray is integration along the third axis.
pub fn ray_jacobian(t: &Vector3<f64>, cam: &CameraModel) -> Matrix3<f64> {
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    Matrix3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * t.x * iz2,
        0.0,
        cam.fy * iz,
        -cam.fy * t.y * iz2,
        0.0,
        0.0,
        1.0,
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedCovariance {
    pub cov2d: Matrix2<f64>,
    pub mean: Vector2<f64>,
    pub depth: f64,
}

pub(crate) fn project_mean(t: &Vector3<f64>, cam: &CameraModel) -> Vector2<f64> {
    Vector2::new(cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy)
}

fn camera_space(mu: &Vector3<f64>, cam: &CameraModel) -> Result<Vector3<f64>> {
    let t = cam.to_camera(mu);
    if t.z <= cam.near_clip {
        return Err(HgsError::CulledBehindCamera { depth: t.z });
    }
    Ok(t)
}

/// Ray-space 3D covariance `J W Σ Wᵀ Jᵀ` plus the screen dilation on the two
/// pixel axes. Its top-left 2×2 block is the projected splat covariance.
pub fn ray_space_covariance(sigma: &Matrix3<f64>, mu: &Vector3<f64>, cam: &CameraModel) -> Result<Matrix3<f64>> {
    let t = camera_space(mu, cam)?;
    let j = ray_jacobian(&t, cam);
    let cov_cam = cam.rotation * sigma * cam.rotation.transpose();
    let mut v = j * cov_cam * j.transpose();
    v = (v + v.transpose()) * 0.5;
    v[(0, 0)] += SCREEN_DILATION;
    v[(1, 1)] += SCREEN_DILATION;
    Ok(v)
}

/// Projects a 3D Gaussian to the image: pixel-space mean, dilated 2×2
/// covariance and camera-space depth.
pub fn project_covariance(
    sigma: &Matrix3<f64>,
    mu: &Vector3<f64>,
    cam: &CameraModel,
) -> Result<ProjectedCovariance> {
    let t = camera_space(mu, cam)?;
    let v = ray_space_covariance(sigma, mu, cam)?;
    Ok(ProjectedCovariance {
        cov2d: v.fixed_view::<2, 2>(0, 0).into_owned(),
        mean: project_mean(&t, cam),
        depth: t.z,
    })
}

/// Whitened frame of a ray-space Gaussian: `V = L Lᵀ` with `L` lower
/// triangular, so the first two whitened coordinates depend on the pixel
/// offset only and the third runs along the viewing ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WhitenedFrame {
    pub chol: Matrix3<f64>,
    /// Inverse of the top-left 2×2 block of `chol`; maps centered pixel
    /// offsets to whitened coordinates.
    pub whiten2d: Matrix2<f64>,
    /// Splitting normal in the whitened frame, before normalization.
    pub normal_raw: Vector3<f64>,
    /// Unit splitting normal in the whitened frame.
    pub normal: Vector3<f64>,
}

pub(crate) fn cholesky3(v: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let l11 = v[(0, 0)].sqrt();
    let l21 = v[(1, 0)] / l11;
    let l31 = v[(2, 0)] / l11;
    let d2 = v[(1, 1)] - l21 * l21;
    if !(d2 > 0.0) || !(l11 > 0.0) {
        return None;
    }
    let l22 = d2.sqrt();
    let l32 = (v[(2, 1)] - l31 * l21) / l22;
    let d3 = v[(2, 2)] - l31 * l31 - l32 * l32;
    if !(d3 > 0.0) {
        return None;
    }
    let l33 = d3.sqrt();
    Some(Matrix3::new(l11, 0.0, 0.0, l21, l22, 0.0, l31, l32, l33))
}

pub(crate) fn lower2_inverse(l: &Matrix3<f64>) -> Matrix2<f64> {
    let (a, b, c) = (l[(0, 0)], l[(1, 0)], l[(1, 1)]);
    Matrix2::new(1.0 / a, 0.0, -b / (a * c), 1.0 / c)
}

/// Condition number of the Cholesky factor of a symmetric positive definite
/// matrix, `sqrt(λmax / λmin)`.
pub fn whitening_condition(v: &Matrix3<f64>) -> f64 {
    let eig = SymmetricEigen::new(*v).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        (hi / lo).sqrt()
    }
}

/// `whitening_condition(v) <= MAX_WHITENING_CONDITION`, decided without an
/// eigensolve when `v` is comfortably well conditioned. With `V = LLᵀ`,
/// `‖V‖·‖L⁻¹‖²` (Frobenius) bounds the condition of `V` from above, and a
/// nearly singular `V` shows up as a failed or tiny last pivot, which sends
/// it to the exact test.
pub fn is_whitenable(v: &Matrix3<f64>) -> bool {
    // far below MAX_WHITENING_CONDITION², where the factor is still accurate
    const SAFE: f64 = 1e12;
    let Some(l) = cholesky3(v) else {
        return false;
    };
    let (a, b, c) = (l[(0, 0)], l[(1, 1)], l[(2, 2)]);
    let (d, e, f) = (l[(1, 0)], l[(2, 0)], l[(2, 1)]);
    // entries of L⁻¹
    let (ia, ib, ic) = (1.0 / a, 1.0 / b, 1.0 / c);
    let i10 = -d * ia * ib;
    let i21 = -f * ib * ic;
    let i20 = (d * f - b * e) * ia * ib * ic;
    let inv2 = ia * ia + ib * ib + ic * ic + i10 * i10 + i21 * i21 + i20 * i20;
    if v.norm() * inv2 <= SAFE {
        return true;
    }
    whitening_condition(v) <= MAX_WHITENING_CONDITION
}

/// Whitens a ray-space covariance and carries a ray-space plane normal into
/// the whitened frame. Plane normals transform by the inverse transpose of the
/// whitening map `L⁻¹`, i.e. by `Lᵀ`.
pub fn whiten_frame(ray_cov: &Matrix3<f64>, ray_normal: &Vector3<f64>) -> Result<WhitenedFrame> {
    let condition = whitening_condition(ray_cov);
    if !(condition <= MAX_WHITENING_CONDITION) {
        return Err(HgsError::DegenerateFrame { condition });
    }
    let chol = cholesky3(ray_cov).ok_or(HgsError::DegenerateFrame { condition })?;
    let normal_raw = chol.transpose() * ray_normal;
    let len = normal_raw.norm();
    if !(len > 0.0) {
        return Err(HgsError::DegenerateFrame { condition });
    }
    Ok(WhitenedFrame {
        chol,
        whiten2d: lower2_inverse(&chol),
        normal_raw,
        normal: normal_raw / len,
    })
}

/// Splitting normal `n` (world space, unit) expressed in the whitened
/// ray-space frame of the Gaussian `(μ, Σ)` seen by `cam`.
pub fn project_normal(
    n: &Vector3<f64>,
    sigma: &Matrix3<f64>,
    mu: &Vector3<f64>,
    cam: &CameraModel,
) -> Result<Vector3<f64>> {
    let t = camera_space(mu, cam)?;
    let j = ray_jacobian(&t, cam);
    let v = ray_space_covariance(sigma, mu, cam)?;
    let ray_normal = ray_space_normal(&j, &(cam.rotation * n));
    Ok(whiten_frame(&v, &ray_normal)?.normal)
}

/// Plane normal under the ray-space map: `J⁻ᵀ n_cam`. `J` is upper triangular
/// with a unit last row, so the inverse is written out.
pub(crate) fn ray_space_normal(j: &Matrix3<f64>, n_cam: &Vector3<f64>) -> Vector3<f64> {
    let jinv = ray_jacobian_inverse(j);
    jinv.transpose() * n_cam
}

pub(crate) fn ray_jacobian_inverse(j: &Matrix3<f64>) -> Matrix3<f64> {
    let (a, b, c, d) = (j[(0, 0)], j[(0, 2)], j[(1, 1)], j[(1, 2)]);
    Matrix3::new(1.0 / a, 0.0, -b / a, 0.0, 1.0 / c, -d / c, 0.0, 0.0, 1.0)
}

/// Orthonormal basis `[e1 e2 d]` whose third axis is `dir`.
pub fn frame_along(dir: &Vector3<f64>) -> Matrix3<f64> {
    let d = dir.normalize();
    let helper = if d.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = helper.cross(&d).normalize();
    let e2 = d.cross(&e1);
    Matrix3::from_columns(&[e1, e2, d])
}
