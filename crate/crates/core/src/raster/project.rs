//! Per-view projection of primitives, keeping every intermediate the
//! backward pass needs.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use super::erf_table::ErfTable;
use super::{Kernel, TileRect, MIN_WEIGHT, TILE_SIZE};
use crate::geometry::{
    cholesky3, lower2_inverse, project_mean, quat_to_rotation, ray_jacobian, ray_space_normal, sigmoid,
    is_whitenable, CameraModel, HalfGaussianPrimitive, SCREEN_DILATION,
};
use crate::kernel::NORMAL_EPS;
use crate::sh::{eval_sh_basis, SH_C0};

/// Whitened split frame; absent for the full-Gaussian kernel and for
/// degenerate frames.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SplitFrame {
    pub chol: Matrix3<f64>,
    pub whiten2d: Matrix2<f64>,
    pub n_rs: Vector3<f64>,
    pub n_w: Vector3<f64>,
    pub n_ray: Vector3<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct Projection {
    pub prim_index: usize,
    pub t: Vector3<f64>,
    pub m: Matrix3<f64>,
    pub rot: Matrix3<f64>,
    pub scale2: Vector3<f64>,
    pub sigma_cam: Matrix3<f64>,
    pub conic: Matrix2<f64>,
    pub mu_hat: Vector2<f64>,
    pub tile_span: TileRect,
    pub frame: Option<SplitFrame>,
    pub n_len: f64,
    pub n_unit: Vector3<f64>,
    pub view_dir: Vector3<f64>,
    pub view_len: f64,
    pub rgb_raw: Vector3<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Projection {
    pub fn rgb(&self) -> Vector3<f64> {
        self.rgb_raw.map(|v| v.max(0.0))
    }

    /// Ray-space split normal used by the kernel; `(0, 0, 1)` when the split
    /// is not evaluated, which makes the erf factor vanish.
    pub fn n_ray(&self) -> Vector3<f64> {
        self.frame.map_or(Vector3::z(), |f| f.n_ray)
    }

    pub fn whiten2d(&self) -> Matrix2<f64> {
        self.frame.map_or(Matrix2::zeros(), |f| f.whiten2d)
    }
}

pub(crate) fn tile_grid(cam: &CameraModel) -> (usize, usize) {
    (
        (cam.width as usize).div_ceil(TILE_SIZE),
        (cam.height as usize).div_ceil(TILE_SIZE),
    )
}

fn inverse2(m: &Matrix2<f64>) -> Option<Matrix2<f64>> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if !(det > 0.0) {
        return None;
    }
    let inv = 1.0 / det;
    Some(Matrix2::new(m[(1, 1)] * inv, -m[(0, 1)] * inv, -m[(1, 0)] * inv, m[(0, 0)] * inv))
}

/// Tiles touched by the 3σ box of a splat, clamped to the image.
fn tile_span(mu_hat: &Vector2<f64>, cov: &Matrix2<f64>, cam: &CameraModel) -> TileRect {
    let mid = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    let lambda = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = (3.0 * lambda.sqrt()).ceil();
    let (tx, ty) = tile_grid(cam);
    let ts = TILE_SIZE as f64;
    let clamp = |v: f64, hi: usize| v.max(0.0).min(hi as f64) as u32;
    TileRect {
        x0: clamp(((mu_hat.x - radius) / ts).floor(), tx),
        y0: clamp(((mu_hat.y - radius) / ts).floor(), ty),
        x1: clamp(((mu_hat.x + radius) / ts).floor() + 1.0, tx),
        y1: clamp(((mu_hat.y + radius) / ts).floor() + 1.0, ty),
    }
}

/// Projects one primitive; `None` when it is culled for this view.
pub(crate) fn project_primitive(
    index: usize,
    p: &HalfGaussianPrimitive,
    cam: &CameraModel,
    cam_center: &Vector3<f64>,
    sh_degree: usize,
    kernel: Kernel,
) -> Option<Projection> {
    let t = cam.to_camera(&p.mu);
    if !(t.z > cam.near_clip) {
        return None;
    }
    let m = ray_jacobian(&t, cam);
    let rot = quat_to_rotation(&p.rotation);
    let scale2 = p.log_scale.map(|l| (2.0 * l).exp());
    let sigma = rot * Matrix3::from_diagonal(&scale2) * rot.transpose();
    let sigma = (sigma + sigma.transpose()) * 0.5;
    let sigma_cam = cam.rotation * sigma * cam.rotation.transpose();
    let mut v = m * sigma_cam * m.transpose();
    v = (v + v.transpose()) * 0.5;
    v[(0, 0)] += SCREEN_DILATION;
    v[(1, 1)] += SCREEN_DILATION;

    let cov2d = v.fixed_view::<2, 2>(0, 0).into_owned();
    let conic = inverse2(&cov2d)?;
    let mu_hat = project_mean(&t, cam);
    let span = tile_span(&mu_hat, &cov2d, cam);
    if span.is_empty() {
        return None;
    }

    let n_len = p.normal.norm();
    let n_unit = p.normal / n_len;
    let frame = match kernel {
        Kernel::FullGaussian => None,
        Kernel::HalfGaussian => split_frame(&v, &m, &(cam.rotation * n_unit)),
    };

    let offset = p.mu - cam_center;
    let view_len = offset.norm();
    let view_dir = offset / view_len;
    let basis = eval_sh_basis(&view_dir, sh_degree);
    let mut rgb_raw = Vector3::repeat(0.5);
    for (b, k) in basis.as_slice().iter().zip(&p.sh_coeffs) {
        rgb_raw += k * *b;
    }
    debug_assert!(basis.as_slice()[0] == SH_C0);

    Some(Projection {
        prim_index: index,
        t,
        m,
        rot,
        scale2,
        sigma_cam,
        conic,
        mu_hat,
        tile_span: span,
        frame,
        n_len,
        n_unit,
        view_dir,
        view_len,
        rgb_raw,
        alpha1: sigmoid(p.raw_opacity_a),
        alpha2: sigmoid(p.raw_opacity_b),
    })
}

fn split_frame(v: &Matrix3<f64>, m: &Matrix3<f64>, n_cam: &Vector3<f64>) -> Option<SplitFrame> {
    if !is_whitenable(v) {
        return None;
    }
    let chol = cholesky3(v)?;
    let n_rs = ray_space_normal(m, n_cam);
    let n_w = chol.transpose() * n_rs;
    let len = n_w.norm();
    if !(len > 0.0) || !len.is_finite() {
        return None;
    }
    Some(SplitFrame {
        chol,
        whiten2d: lower2_inverse(&chol),
        n_rs,
        n_w,
        n_ray: n_w / len,
    })
}

/// Compact per-splat record for the pixel loop.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Packed {
    pub mx: f64,
    pub my: f64,
    pub c00: f64,
    pub c01: f64,
    pub c11: f64,
    /// Linear map from the pixel offset to the erf argument.
    pub k: Vector2<f64>,
    pub split: SplitMode,
    /// `split` for the forward pass alone: `Off` when the halves are equal,
    /// since the erf factor then cannot change the weight.
    pub forward_split: SplitMode,
    /// `(α₁ + α₂) / 2`
    pub mean_alpha: f64,
    /// `(α₁ − α₂) / 2`
    pub half_diff: f64,
    pub rgb: Vector3<f64>,
    pub depth: f64,
    /// Pixels with a larger Mahalanobis term cannot reach `MIN_WEIGHT`.
    pub q_cut: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum SplitMode {
    /// Weight is `½(α₁+α₂)·g`.
    Off,
    /// `k·d` is the erf argument.
    Erf,
    /// Split plane contains the ray; only the sign of `k·d` matters.
    Sign,
}

impl Packed {
    pub fn new(p: &Projection, kernel: Kernel) -> Self {
        let (k, split) = match (kernel, p.frame) {
            (Kernel::HalfGaussian, Some(f)) => {
                let nxy = Vector2::new(f.n_ray.x, f.n_ray.y);
                let dir = f.whiten2d.transpose() * nxy;
                let n3 = f.n_ray.z.abs();
                if n3 < NORMAL_EPS {
                    (dir, SplitMode::Sign)
                } else {
                    (dir / (std::f64::consts::SQRT_2 * n3), SplitMode::Erf)
                }
            }
            _ => (Vector2::zeros(), SplitMode::Off),
        };
        let peak = match kernel {
            Kernel::HalfGaussian => p.alpha1.max(p.alpha2),
            Kernel::FullGaussian => 0.5 * (p.alpha1 + p.alpha2),
        };
        let q_cut = if peak > MIN_WEIGHT { 2.0 * (peak / MIN_WEIGHT).ln() } else { -1.0 };
        Packed {
            mx: p.mu_hat.x,
            my: p.mu_hat.y,
            c00: p.conic[(0, 0)],
            c01: p.conic[(0, 1)],
            c11: p.conic[(1, 1)],
            k,
            split,
            forward_split: if p.alpha1 == p.alpha2 { SplitMode::Off } else { split },
            mean_alpha: 0.5 * (p.alpha1 + p.alpha2),
            half_diff: 0.5 * (p.alpha1 - p.alpha2),
            rgb: p.rgb(),
            depth: p.t.z,
            q_cut,
        }
    }
}

/// Intermediate values of one pixel/splat evaluation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PairEval {
    pub dx: f64,
    pub dy: f64,
    pub g: f64,
    pub arg: f64,
    pub e: f64,
    pub weight: f64,
}

/// Evaluates one splat at one pixel center; `None` when the blend weight is
/// below `MIN_WEIGHT` and the pair is skipped. Without `SPLIT`, the erf
/// factor is left at zero for equal halves; the backward pass still needs it
/// for the opacity partials.
#[inline(always)]
pub(crate) fn eval_pair<const SPLIT: bool>(
    s: &Packed,
    kernel: Kernel,
    erf: &ErfTable,
    px: f64,
    py: f64,
) -> Option<PairEval> {
    let dx = px - s.mx;
    let dy = py - s.my;
    let q = s.c00 * dx * dx + 2.0 * s.c01 * dx * dy + s.c11 * dy * dy;
    if q > s.q_cut {
        return None;
    }
    let g = (-0.5 * q).exp();
    let ev = match kernel {
        Kernel::FullGaussian => PairEval {
            dx,
            dy,
            g,
            arg: 0.0,
            e: 0.0,
            weight: s.mean_alpha * g,
        },
        Kernel::HalfGaussian => {
            let arg = s.k.x * dx + s.k.y * dy;
            let e = match if SPLIT { s.split } else { s.forward_split } {
                SplitMode::Off => 0.0,
                SplitMode::Erf => erf.eval(arg),
                SplitMode::Sign => {
                    if arg > 0.0 {
                        1.0
                    } else if arg < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
            };
            PairEval {
                dx,
                dy,
                g,
                arg,
                e,
                weight: (s.mean_alpha + s.half_diff * e) * g,
            }
        }
    };
    (ev.weight >= MIN_WEIGHT).then_some(ev)
}
