//! Reverse-mode pass through blending, the paired kernel, projection,
//! whitening and the primitive parameterization.

use std::ops::AddAssign;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};

use super::erf_table::ErfTable;
use super::project::{eval_pair, Projection, SplitMode};
use super::{check_inputs, par_map, setup_view, tile_pixels, Kernel, RenderOutput};
use crate::error::{HgsError, Result};
use crate::geometry::{ray_jacobian_inverse, CameraModel, HalfGaussianPrimitive, Scene};
use crate::image::Image;
use crate::kernel::MAX_WEIGHT;
use crate::sh::{eval_sh_basis, eval_sh_basis_grad};

/// Gradient with respect to every learnable field of one primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimitiveGrad {
    pub d_mu: Vector3<f64>,
    pub d_log_scale: Vector3<f64>,
    pub d_rotation: Vector4<f64>,
    pub d_sh: Vec<Vector3<f64>>,
    pub d_normal: Vector3<f64>,
    pub d_raw_opacity_a: f64,
    pub d_raw_opacity_b: f64,
}

impl PrimitiveGrad {
    pub fn zeros(sh_coeffs: usize) -> Self {
        PrimitiveGrad {
            d_mu: Vector3::zeros(),
            d_log_scale: Vector3::zeros(),
            d_rotation: Vector4::zeros(),
            d_sh: vec![Vector3::zeros(); sh_coeffs],
            d_normal: Vector3::zeros(),
            d_raw_opacity_a: 0.0,
            d_raw_opacity_b: 0.0,
        }
    }

    pub fn add_assign(&mut self, o: &PrimitiveGrad) {
        self.d_mu += o.d_mu;
        self.d_log_scale += o.d_log_scale;
        self.d_rotation += o.d_rotation;
        for (a, b) in self.d_sh.iter_mut().zip(&o.d_sh) {
            *a += b;
        }
        self.d_normal += o.d_normal;
        self.d_raw_opacity_a += o.d_raw_opacity_a;
        self.d_raw_opacity_b += o.d_raw_opacity_b;
    }

    /// All components in a fixed order: μ, log-scale, rotation, SH, normal,
    /// opacity a, opacity b.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(15 + 3 * self.d_sh.len());
        v.extend(self.d_mu.iter());
        v.extend(self.d_log_scale.iter());
        v.extend(self.d_rotation.iter());
        for c in &self.d_sh {
            v.extend(c.iter());
        }
        v.extend(self.d_normal.iter());
        v.push(self.d_raw_opacity_a);
        v.push(self.d_raw_opacity_b);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// Gradients for a whole scene plus the statistics used by density control.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub grads: Vec<PrimitiveGrad>,
    /// Norm of the projected-mean gradient in normalized device units.
    pub mean2d_grad_norm: Vec<f64>,
    /// 1 for primitives that landed on at least one tile of this view.
    pub touch_count: Vec<u32>,
}

impl GradientSet {
    pub fn zeros(n: usize, sh_coeffs: usize) -> Self {
        GradientSet {
            grads: vec![PrimitiveGrad::zeros(sh_coeffs); n],
            mean2d_grad_norm: vec![0.0; n],
            touch_count: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Per-splat screen-space cotangents, accumulated over pixels.
#[derive(Clone, Copy, Debug)]
struct ScreenGrad {
    alpha1: f64,
    alpha2: f64,
    mu_hat: Vector2<f64>,
    /// Conic cotangent as a full symmetric matrix: `[c00, c01, c11]`.
    conic: [f64; 3],
    /// `Σ ā·d` and `Σ ā·arg` over pixels, where `ā` is the cotangent of the
    /// erf argument.
    erf_d: Vector2<f64>,
    erf_arg: f64,
    rgb: Vector3<f64>,
}

impl ScreenGrad {
    fn zero() -> Self {
        ScreenGrad {
            alpha1: 0.0,
            alpha2: 0.0,
            mu_hat: Vector2::zeros(),
            conic: [0.0; 3],
            erf_d: Vector2::zeros(),
            erf_arg: 0.0,
            rgb: Vector3::zeros(),
        }
    }

    fn add(&mut self, o: &ScreenGrad) {
        self.alpha1 += o.alpha1;
        self.alpha2 += o.alpha2;
        self.mu_hat += o.mu_hat;
        for k in 0..3 {
            self.conic[k] += o.conic[k];
        }
        self.erf_d += o.erf_d;
        self.erf_arg += o.erf_arg;
        self.rgb += o.rgb;
    }
}

struct Step {
    pos: usize,
    weight: f64,
    clamped: bool,
    transmittance: f64,
    dx: f64,
    dy: f64,
    g: f64,
    arg: f64,
    e: f64,
}

/// Gradients of `Σ_pixels ⟨d_color, C⟩` with respect to every primitive
/// parameter, given the forward output of the same scene and camera.
pub fn render_backward(scene: &Scene, cam: &CameraModel, out: &RenderOutput, d_color: &Image) -> Result<GradientSet> {
    check_inputs(scene, cam)?;
    let (w, h) = (cam.width as usize, cam.height as usize);
    if out.width() != w || out.height() != h {
        return Err(HgsError::MismatchedForward(format!(
            "render is {}x{}, camera is {w}x{h}",
            out.width(),
            out.height()
        )));
    }
    if d_color.width != w || d_color.height != h {
        return Err(HgsError::MismatchedForward(format!(
            "cotangent is {}x{}, render is {w}x{h}",
            d_color.width, d_color.height
        )));
    }
    if out.per_pixel_terminal_index.len() != w * h || out.intrinsics != [cam.fx, cam.fy, cam.cx, cam.cy] {
        return Err(HgsError::MismatchedForward("render bookkeeping does not match the camera".into()));
    }

    let kernel = out.kernel;
    let view = setup_view(scene, cam, kernel);
    let bg = scene.background;

    let erf = ErfTable::get();
    let tile_grads: Vec<Result<Vec<ScreenGrad>>> = par_map(view.tiles.len(), |tile| {
        let (x0, y0, x1, y1) = tile_pixels(tile, view.tiles_x, cam);
        let list = &view.tiles[tile];
        let mut acc = vec![ScreenGrad::zero(); list.len()];
        let mut steps: Vec<Step> = Vec::with_capacity(list.len());
        for y in y0..y1 {
            let py = y as f64 + 0.5;
            for x in x0..x1 {
                let px = x as f64 + 0.5;
                let pix = y * w + x;
                let cbar = Vector3::new(d_color.data[pix * 3], d_color.data[pix * 3 + 1], d_color.data[pix * 3 + 2]);
                if cbar == Vector3::zeros() {
                    continue;
                }
                let terminal = out.per_pixel_terminal_index[pix] as usize;
                if terminal > list.len() {
                    return Err(HgsError::MismatchedForward(format!(
                        "pixel ({x}, {y}) consumed {terminal} splats but its tile holds {}",
                        list.len()
                    )));
                }
                steps.clear();
                let mut t = 1.0;
                for (pos, &si) in list[..terminal].iter().enumerate() {
                    let Some(ev) = eval_pair::<true>(&view.packed[si as usize], kernel, erf, px, py) else {
                        continue;
                    };
                    let weight = ev.weight.min(MAX_WEIGHT);
                    steps.push(Step {
                        pos,
                        weight,
                        clamped: ev.weight > MAX_WEIGHT,
                        transmittance: t,
                        dx: ev.dx,
                        dy: ev.dy,
                        g: ev.g,
                        arg: ev.arg,
                        e: ev.e,
                    });
                    t *= 1.0 - weight;
                }

                let mut rest = bg;
                for st in steps.iter().rev() {
                    let s = &view.packed[list[st.pos] as usize];
                    let a = &mut acc[st.pos];
                    let tw = st.transmittance * st.weight;
                    a.rgb += cbar * tw;
                    let wbar = st.transmittance * cbar.dot(&(s.rgb - rest));
                    rest = s.rgb * st.weight + rest * (1.0 - st.weight);
                    if st.clamped {
                        continue;
                    }
                    let gbar;
                    let mut dbar = Vector2::zeros();
                    match kernel {
                        Kernel::FullGaussian => {
                            a.alpha1 += wbar * 0.5 * st.g;
                            a.alpha2 += wbar * 0.5 * st.g;
                            gbar = wbar * s.mean_alpha;
                        }
                        Kernel::HalfGaussian => {
                            a.alpha1 += wbar * 0.5 * (1.0 + st.e) * st.g;
                            a.alpha2 += wbar * 0.5 * (1.0 - st.e) * st.g;
                            gbar = wbar * (s.mean_alpha + s.half_diff * st.e);
                            if s.split == SplitMode::Erf {
                                let ebar = wbar * s.half_diff * st.g;
                                let abar = ebar * erf.slope(st.arg);
                                a.erf_d += Vector2::new(st.dx, st.dy) * abar;
                                a.erf_arg += abar * st.arg;
                                dbar += s.k * abar;
                            }
                        }
                    }
                    let qbar = -0.5 * gbar * st.g;
                    a.conic[0] += qbar * st.dx * st.dx;
                    a.conic[1] += qbar * st.dx * st.dy;
                    a.conic[2] += qbar * st.dy * st.dy;
                    dbar.x += 2.0 * qbar * (s.c00 * st.dx + s.c01 * st.dy);
                    dbar.y += 2.0 * qbar * (s.c01 * st.dx + s.c11 * st.dy);
                    a.mu_hat -= dbar;
                }
            }
        }
        Ok(acc)
    });

    let mut screen = vec![ScreenGrad::zero(); view.projections.len()];
    let mut touched = vec![false; view.projections.len()];
    for (tile, grads) in tile_grads.into_iter().enumerate() {
        let grads = grads?;
        for (pos, &si) in view.tiles[tile].iter().enumerate() {
            screen[si as usize].add(&grads[pos]);
            touched[si as usize] = true;
        }
    }

    let coeffs = crate::geometry::sh_coeff_count(scene.sh_degree);
    let per_proj = par_map(view.projections.len(), |i| {
        let p = &view.projections[i];
        primitive_backward(p, &screen[i], &scene.primitives[p.prim_index], cam, kernel, scene.sh_degree)
    });

    let mut set = GradientSet::zeros(scene.primitives.len(), coeffs);
    for ((p, (grad, mean2d)), hit) in view.projections.iter().zip(per_proj).zip(touched) {
        set.grads[p.prim_index] = grad;
        if hit {
            set.touch_count[p.prim_index] = 1;
            set.mean2d_grad_norm[p.prim_index] = Vector2::new(mean2d.x * w as f64 * 0.5, mean2d.y * h as f64 * 0.5).norm();
        }
    }
    Ok(set)
}

/// Lower triangle, diagonal halved.
fn phi(m: &Matrix3<f64>) -> Matrix3<f64> {
    let mut r = m.lower_triangle();
    for i in 0..3 {
        r[(i, i)] *= 0.5;
    }
    r
}

fn sym3(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

/// Partial derivatives of the rotation matrix with respect to a unit
/// quaternion `(w, x, y, z)`.
fn rotation_partials(q: &Vector4<f64>) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0),
        Matrix3::new(0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x),
        Matrix3::new(-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y),
        Matrix3::new(-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0),
    ]
}

/// Chains the screen-space cotangents of one splat back to its parameters.
/// Also returns the projected-mean cotangent for the density statistics.
fn primitive_backward(
    p: &Projection,
    sg: &ScreenGrad,
    prim: &HalfGaussianPrimitive,
    cam: &CameraModel,
    kernel: Kernel,
    sh_degree: usize,
) -> (PrimitiveGrad, Vector2<f64>) {
    let sh_coeffs = &prim.sh_coeffs;
    let prim_rotation = p.rot;
    let mut grad = PrimitiveGrad::zeros(sh_coeffs.len());

    // opacities through the sigmoid
    grad.d_raw_opacity_a = sg.alpha1 * p.alpha1 * (1.0 - p.alpha1);
    grad.d_raw_opacity_b = sg.alpha2 * p.alpha2 * (1.0 - p.alpha2);

    // color through SH, masked by the zero floor
    let rgb_bar = Vector3::from_fn(|c, _| if p.rgb_raw[c] > 0.0 { sg.rgb[c] } else { 0.0 });
    let basis = eval_sh_basis(&p.view_dir, sh_degree);
    let basis_grad = eval_sh_basis_grad(&p.view_dir, sh_degree);
    let mut dir_bar = Vector3::zeros();
    for (k, b) in basis.as_slice().iter().enumerate() {
        grad.d_sh[k] = rgb_bar * *b;
        dir_bar += basis_grad[k] * rgb_bar.dot(&sh_coeffs[k]);
    }
    let mut mu_bar = (dir_bar - p.view_dir * p.view_dir.dot(&dir_bar)) / p.view_len;

    let m = p.m;
    let mut m_bar = Matrix3::zeros();
    let mut v_bar = Matrix3::zeros();

    // split normal and whitening
    if let (Kernel::HalfGaussian, Some(f)) = (kernel, p.frame) {
        let n3 = f.n_ray.z;
        if n3.abs() >= crate::kernel::NORMAL_EPS {
            let c = 1.0 / (std::f64::consts::SQRT_2 * n3.abs());
            let nxy = Vector2::new(f.n_ray.x, f.n_ray.y);
            let n12_bar = f.whiten2d * sg.erf_d * c;
            let n_ray_bar = Vector3::new(n12_bar.x, n12_bar.y, -sg.erf_arg / n3);
            let w2_bar = nxy * sg.erf_d.transpose() * c;

            let n_w_len = f.n_w.norm();
            let n_w_bar = (n_ray_bar - f.n_ray * f.n_ray.dot(&n_ray_bar)) / n_w_len;
            let mut l_bar = f.n_rs * n_w_bar.transpose();
            let n_rs_bar = f.chol * n_w_bar;
            let lpp_bar = -(f.whiten2d.transpose() * w2_bar * f.whiten2d.transpose());
            l_bar.fixed_view_mut::<2, 2>(0, 0).add_assign(&lpp_bar);
            let l_bar = l_bar.lower_triangle();

            let l_inv = f
                .chol
                .solve_lower_triangular(&Matrix3::identity())
                .expect("Cholesky factor is nonsingular");
            v_bar += sym3(&(l_inv.transpose() * phi(&(f.chol.transpose() * l_bar)) * l_inv));

            let m_inv = ray_jacobian_inverse(&m);
            let n_cam_bar = m_inv * n_rs_bar;
            m_bar -= f.n_rs * n_cam_bar.transpose();
            let n_unit_bar = cam.rotation.transpose() * n_cam_bar;
            grad.d_normal = (n_unit_bar - p.n_unit * p.n_unit.dot(&n_unit_bar)) / p.n_len;
        }
    }

    // conic = inverse of the top-left block of V
    let conic_bar = Matrix2::new(sg.conic[0], sg.conic[1], sg.conic[1], sg.conic[2]);
    let vpp_bar = -(p.conic * conic_bar * p.conic);
    v_bar.fixed_view_mut::<2, 2>(0, 0).add_assign(&vpp_bar);

    // V = M Σc Mᵀ
    m_bar += v_bar * m * p.sigma_cam * 2.0;
    let sigma_cam_bar = m.transpose() * v_bar * m;

    // M and the projected mean as functions of the camera-space center
    let (fx, fy) = (cam.fx, cam.fy);
    let t = p.t;
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut t_bar = Vector3::new(
        m_bar[(0, 2)] * (-fx * iz2),
        m_bar[(1, 2)] * (-fy * iz2),
        m_bar[(0, 0)] * (-fx * iz2)
            + m_bar[(1, 1)] * (-fy * iz2)
            + m_bar[(0, 2)] * (2.0 * fx * t.x * iz3)
            + m_bar[(1, 2)] * (2.0 * fy * t.y * iz3),
    );
    t_bar.x += sg.mu_hat.x * fx * iz;
    t_bar.y += sg.mu_hat.y * fy * iz;
    t_bar.z -= sg.mu_hat.x * fx * t.x * iz2 + sg.mu_hat.y * fy * t.y * iz2;
    mu_bar += cam.rotation.transpose() * t_bar;
    grad.d_mu = mu_bar;

    // Σ = R D Rᵀ
    let sigma_bar = sym3(&(cam.rotation.transpose() * sigma_cam_bar * cam.rotation));
    let d = Matrix3::from_diagonal(&p.scale2);
    let r_bar = sigma_bar * prim_rotation * d * 2.0;
    let inner = prim_rotation.transpose() * sigma_bar * prim_rotation;
    grad.d_log_scale = Vector3::from_fn(|k, _| 2.0 * p.scale2[k] * inner[(k, k)]);

    // quaternion, through its normalization
    let q = prim.rotation;
    let q_len = q.norm();
    let q_unit = q / q_len;
    let partials = rotation_partials(&q_unit);
    let q_unit_bar = Vector4::from_fn(|i, _| r_bar.component_mul(&partials[i]).sum());
    grad.d_rotation = (q_unit_bar - q_unit * q_unit.dot(&q_unit_bar)) / q_len;

    (grad, sg.mu_hat)
}
