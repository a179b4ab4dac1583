//! Oracle suites shared by the test harness and `hgs verify`.

use nalgebra::{Matrix3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::geometry::{build_covariance, logit, param_mut, CameraModel, HalfGaussianPrimitive, Scene};
use crate::image::Image;
use crate::kernel::oracle::{closed_form_factors, oracle_line_integral};
use crate::kernel::paired_weight;
use crate::raster::{render_backward, render_with, Kernel};
use crate::sh::eval_sh_basis;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub trials: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

pub(crate) fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        let len = v.norm();
        if len > 1e-6 {
            return v / len;
        }
    }
}

pub(crate) fn random_quaternion(rng: &mut ChaCha8Rng) -> Vector4<f64> {
    let v: Vector4<f64> = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
    v.normalize()
}

/// One random configuration for the closed-form check: `(μ, Σ, n, α₁, α₂,
/// ray origin, ray direction)`.
pub type OracleConfig = (
    Vector3<f64>,
    Matrix3<f64>,
    Vector3<f64>,
    f64,
    f64,
    Vector3<f64>,
    Vector3<f64>,
);

pub fn random_oracle_config(rng: &mut ChaCha8Rng) -> OracleConfig {
    let mu = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let log_scale = Vector3::from_fn(|_, _| rng.random_range(-1.5..0.5));
    let sigma = build_covariance(&log_scale, &random_quaternion(rng));
    let n = unit_vector(rng);
    let a1 = rng.random_range(0.02..0.98);
    let a2 = rng.random_range(0.02..0.98);
    let dir = unit_vector(rng);
    // the ray passes through a point drawn from the Gaussian itself
    let chol = sigma.cholesky().expect("covariance is positive definite").l();
    let z: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
    let through = mu + chol * z;
    let origin = through - dir * rng.random_range(5.0..20.0);
    (mu, sigma, n, a1, a2, origin, dir)
}

/// Closed-form paired integral against adaptive quadrature. With
/// `flip_erf` the erf term's sign is inverted, which must make the suite fail.
pub fn closed_form_vs_quadrature(trials: usize, seed: u64, flip_erf: bool) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut detail = String::new();
    for i in 0..trials {
        let (mu, sigma, n, a1, a2, origin, dir) = random_oracle_config(&mut rng);
        let oracle = oracle_line_integral(&mu, &sigma, &n, a1, a2, &origin, &dir)?;
        let (scale, g, e) = closed_form_factors(&mu, &sigma, &n, &origin, &dir)?;
        let e = if flip_erf { -e } else { e };
        let closed = scale * paired_weight(a1, a2, e, g);
        let err = (closed - oracle).abs() / oracle.max(1e-12);
        if err > worst {
            worst = err;
            detail = format!("trial {i}: closed form {closed:.12e}, quadrature {oracle:.12e}");
        }
    }
    Ok(SuiteReport {
        name: "closed form vs quadrature",
        trials,
        max_error: worst,
        tolerance: 1e-5,
        detail,
    })
}

/// Monte-Carlo Gram matrix of the degree-3 basis over the sphere; reports the
/// largest deviation from the identity.
pub fn sh_orthonormality(samples: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gram = [[0.0f64; 16]; 16];
    for _ in 0..samples {
        let b = eval_sh_basis(&unit_vector(&mut rng), 3);
        let v = b.as_slice();
        for i in 0..16 {
            for j in i..16 {
                gram[i][j] += v[i] * v[j];
            }
        }
    }
    let area = 4.0 * std::f64::consts::PI;
    let mut worst = 0.0f64;
    let mut detail = String::new();
    for i in 0..16 {
        for j in i..16 {
            let m = gram[i][j] * area / samples.max(1) as f64;
            let dev = (m - if i == j { 1.0 } else { 0.0 }).abs();
            if dev > worst {
                worst = dev;
                detail = format!("<Y{i}, Y{j}> = {m:.5}");
            }
        }
    }
    SuiteReport {
        name: "SH orthonormality",
        trials: samples,
        max_error: worst,
        tolerance: 0.02,
        detail,
    }
}

pub fn param_name(k: usize, coeffs: usize) -> String {
    match k {
        0..=2 => format!("mu[{k}]"),
        3..=5 => format!("log_scale[{}]", k - 3),
        6..=9 => format!("rotation[{}]", k - 6),
        _ if k < 10 + 3 * coeffs => format!("sh[{}][{}]", (k - 10) / 3, (k - 10) % 3),
        _ => match k - 10 - 3 * coeffs {
            j @ 0..=2 => format!("normal[{j}]"),
            3 => "raw_opacity_a".into(),
            _ => "raw_opacity_b".into(),
        },
    }
}

/// Camera for the gradient-check scenes: 32×32, focal 96, looking at the
/// origin from distance 4.
pub fn gradient_camera() -> CameraModel {
    CameraModel::look_at(
        Vector3::new(0.0, 0.0, -4.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
        96.0,
        32,
        32,
    )
    .expect("valid camera")
}

/// A smooth random scene for finite-difference checks.
///
/// Splats are wide enough that every pixel/splat weight stays above the skip
/// threshold, opacities stay below the weight clamp, transmittance never
/// reaches the cutoff and depths are well separated, so the rendered image
/// is a smooth function of every parameter.
pub fn gradient_scene(seed: u64, primitives: usize) -> (Scene, Image) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut depths: Vec<f64> = (0..primitives)
        .map(|i| -0.5 + (i as f64 + 0.5) / primitives as f64 + rng.random_range(-0.02..0.02))
        .collect();
    // random depth order
    for i in (1..depths.len()).rev() {
        let j = rng.random_range(0..=i);
        depths.swap(i, j);
    }
    let prims = depths
        .into_iter()
        .map(|z| {
            let dc = Vector3::from_fn(|_, _| rng.random_range(0.2..0.8));
            let mut sh = vec![crate::sh::rgb_to_dc(&dc)];
            for _ in 0..3 {
                sh.push(Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05)));
            }
            HalfGaussianPrimitive {
                mu: Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), z),
                log_scale: Vector3::from_fn(|_, _| rng.random_range(0.55f64..0.85).ln()),
                rotation: random_quaternion(&mut rng) * rng.random_range(0.7..1.3),
                sh_coeffs: sh,
                normal: unit_vector(&mut rng) * rng.random_range(0.7..1.3),
                raw_opacity_a: logit(rng.random_range(0.25..0.6)),
                raw_opacity_b: logit(rng.random_range(0.25..0.6)),
            }
        })
        .collect();
    let scene = Scene::new(prims, 1, Vector3::from_fn(|_, _| rng.random_range(0.0..1.0))).expect("valid scene");
    let target = Image::from_data(32, 32, (0..32 * 32 * 3).map(|_| rng.random_range(0.0..1.0)).collect())
        .expect("sized target");
    (scene, target)
}

fn l2_loss(scene: &Scene, cam: &CameraModel, target: &Image, kernel: Kernel) -> Result<(f64, Image)> {
    let out = render_with(scene, cam, kernel)?;
    let mut grad = Image::new(target.width, target.height);
    let mut loss = 0.0;
    for (i, (r, t)) in out.color.data.iter().zip(&target.data).enumerate() {
        let d = r - t;
        loss += 0.5 * d * d;
        grad.data[i] = d;
    }
    Ok((loss, grad))
}

/// Analytic gradients of an L2 image loss against central differences over
/// every scalar parameter of every primitive.
///
/// The error of one parameter is `|analytic − fd| / max(|analytic|, |fd|,
/// 1e-4·G)` with `G` the largest finite-difference magnitude in the scene;
/// the floor keeps parameters whose true gradient is essentially zero from
/// being judged on truncation noise alone.
pub fn gradient_check(scene: &Scene, cam: &CameraModel, target: &Image, kernel: Kernel) -> Result<SuiteReport> {
    let out = render_with(scene, cam, kernel)?;
    let (_, d_color) = l2_loss(scene, cam, target, kernel)?;
    let grads = render_backward(scene, cam, &out, &d_color)?;
    let coeffs = scene.primitives[0].sh_coeffs.len();

    let mut entries = Vec::new();
    let mut work = scene.clone();
    for (pi, g) in grads.grads.iter().enumerate() {
        let analytic = g.flatten();
        for (k, &an) in analytic.iter().enumerate() {
            let base = *param_mut(&mut work.primitives[pi], k);
            let h = 1e-4 * base.abs().max(1.0);
            *param_mut(&mut work.primitives[pi], k) = base + h;
            let (lp, _) = l2_loss(&work, cam, target, kernel)?;
            *param_mut(&mut work.primitives[pi], k) = base - h;
            let (lm, _) = l2_loss(&work, cam, target, kernel)?;
            *param_mut(&mut work.primitives[pi], k) = base;
            entries.push((pi, k, an, (lp - lm) / (2.0 * h)));
        }
    }
    let scale = entries.iter().map(|e| e.3.abs()).fold(0.0, f64::max);
    let floor = 1e-4 * scale;
    let mut worst = 0.0f64;
    let mut detail = String::new();
    for &(pi, k, an, fd) in &entries {
        let err = (an - fd).abs() / an.abs().max(fd.abs()).max(floor).max(1e-300);
        if err > worst {
            worst = err;
            detail = format!(
                "primitive {pi} {}: analytic {an:.6e}, finite difference {fd:.6e}",
                param_name(k, coeffs)
            );
        }
    }
    Ok(SuiteReport {
        name: "analytic vs finite-difference gradients",
        trials: entries.len(),
        max_error: worst,
        tolerance: 1e-3,
        detail,
    })
}

/// Runs [`gradient_check`] on `scenes` seeded 8-primitive scenes and keeps
/// the worst result.
pub fn gradient_suite(scenes: usize, seed: u64, kernel: Kernel) -> Result<SuiteReport> {
    let cam = gradient_camera();
    let mut worst: Option<SuiteReport> = None;
    let mut total = 0;
    for s in 0..scenes {
        let (scene, target) = gradient_scene(seed.wrapping_add(s as u64), 8);
        let r = gradient_check(&scene, &cam, &target, kernel)?;
        total += r.trials;
        if worst.as_ref().is_none_or(|w| r.max_error > w.max_error) {
            worst = Some(SuiteReport {
                detail: format!("scene seed {}: {}", seed.wrapping_add(s as u64), r.detail),
                ..r
            });
        }
    }
    let mut report = worst.unwrap_or(SuiteReport {
        name: "analytic vs finite-difference gradients",
        trials: 0,
        max_error: 0.0,
        tolerance: 1e-3,
        detail: String::new(),
    });
    report.trials = total;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::param_count;

    #[test]
    fn oracle_suite_passes_and_canary_fails() {
        let ok = closed_form_vs_quadrature(100, 1, false).unwrap();
        assert!(ok.passed(), "{ok:?}");
        let bad = closed_form_vs_quadrature(100, 1, true).unwrap();
        assert!(!bad.passed());
    }

    #[test]
    fn gradients_match_on_one_scene() {
        let cam = gradient_camera();
        let (scene, target) = gradient_scene(11, 8);
        let r = gradient_check(&scene, &cam, &target, Kernel::HalfGaussian).unwrap();
        eprintln!("{r:?}");
        assert!(r.passed(), "{r:?}");
        let r = gradient_check(&scene, &cam, &target, Kernel::FullGaussian).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn gradient_scenes_stay_inside_the_smooth_regime() {
        use crate::raster::{setup_view, tile_pixels, MIN_TRANSMITTANCE};
        let cam = gradient_camera();
        for seed in 0..20 {
            let (scene, _) = gradient_scene(seed, 8);
            for kernel in [Kernel::HalfGaussian, Kernel::FullGaussian] {
                let view = setup_view(&scene, &cam, kernel);
                for (tile, list) in view.tiles.iter().enumerate() {
                    assert_eq!(list.len(), 8);
                    let (x0, y0, x1, y1) = tile_pixels(tile, view.tiles_x, &cam);
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let mut t = 1.0;
                            for &si in list {
                                let ev = crate::raster::project::eval_pair::<true>(
                                    &view.packed[si as usize],
                                    kernel,
                                    crate::raster::erf_table::ErfTable::get(),
                                    x as f64 + 0.5,
                                    y as f64 + 0.5,
                                )
                                .expect("no skipped pair");
                                assert!(ev.weight < crate::kernel::MAX_WEIGHT && ev.weight > 1.5 * crate::raster::MIN_WEIGHT);
                                t *= 1.0 - ev.weight;
                            }
                            assert!(t > 10.0 * MIN_TRANSMITTANCE);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn param_indexing_round_trips() {
        let (mut scene, _) = gradient_scene(1, 1);
        let p = &mut scene.primitives[0];
        let n = param_count(p.sh_coeffs.len());
        for k in 0..n {
            *param_mut(p, k) = k as f64;
        }
        let g = crate::PrimitiveGrad {
            d_mu: p.mu,
            d_log_scale: p.log_scale,
            d_rotation: p.rotation,
            d_sh: p.sh_coeffs.clone(),
            d_normal: p.normal,
            d_raw_opacity_a: p.raw_opacity_a,
            d_raw_opacity_b: p.raw_opacity_b,
        };
        let flat = g.flatten();
        assert_eq!(flat, (0..n).map(|k| k as f64).collect::<Vec<_>>());
    }
}
