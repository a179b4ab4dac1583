//! Image-quality metrics.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5) over the valid region only,
//! with the usual `C₁ = 0.01²`, `C₂ = 0.03²` stabilizers, and averages the
//! three channels. The same code path provides the analytic gradient used by
//! the training loss.

use std::fmt::Write as _;

use crate::error::{HgsError, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Peak signal-to-noise ratio for signals in `[0, 1]`; `+∞` for identical
/// images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    let mse = sum / a.data.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Formats a PSNR value, printing `inf` for identical images.
pub fn format_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Single-channel plane with valid-region separable filtering.
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn channel(img: &Image, c: usize) -> Self {
        Plane {
            w: img.width,
            h: img.height,
            v: img.channel(c),
        }
    }

    fn map2(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&o.v).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// Valid correlation with the window; output is `(w-10)×(h-10)`.
    fn filter(&self, k: &[f64; SSIM_WINDOW]) -> Plane {
        let (ow, oh) = (self.w + 1 - SSIM_WINDOW, self.h + 1 - SSIM_WINDOW);
        let mut rows = vec![0.0; ow * self.h];
        for y in 0..self.h {
            let src = &self.v[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                rows[y * ow + x] = k.iter().zip(&src[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                let mut s = 0.0;
                for (j, kj) in k.iter().enumerate() {
                    s += kj * rows[(y + j) * ow + x];
                }
                out[y * ow + x] = s;
            }
        }
        Plane { w: ow, h: oh, v: out }
    }

    /// Adjoint of [`Plane::filter`]: scatters a valid-region map back to a
    /// `w×h` plane.
    fn filter_adjoint(&self, k: &[f64; SSIM_WINDOW], w: usize, h: usize) -> Plane {
        let (ow, oh) = (self.w, self.h);
        let mut rows = vec![0.0; ow * h];
        for y in 0..oh {
            for x in 0..ow {
                let g = self.v[y * ow + x];
                for (j, kj) in k.iter().enumerate() {
                    rows[(y + j) * ow + x] += kj * g;
                }
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..ow {
                let g = rows[y * ow + x];
                for (i, ki) in k.iter().enumerate() {
                    out[y * w + x + i] += ki * g;
                }
            }
        }
        Plane { w, h, v: out }
    }
}

fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    a.same_shape(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(HgsError::ImageTooSmall {
            width: a.width,
            height: a.height,
            min: SSIM_WINDOW,
        });
    }
    let k = gaussian_window();
    let positions = (a.width + 1 - SSIM_WINDOW) * (a.height + 1 - SSIM_WINDOW);
    let norm = 1.0 / (3 * positions) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(a.width, a.height));

    for c in 0..3 {
        let x = Plane::channel(a, c);
        let y = Plane::channel(b, c);
        let mx = x.filter(&k);
        let my = y.filter(&k);
        let exx = x.map2(&x, |p, q| p * q).filter(&k);
        let eyy = y.map2(&y, |p, q| p * q).filter(&k);
        let exy = x.map2(&y, |p, q| p * q).filter(&k);

        let n = mx.v.len();
        let (mut d_mx, mut d_exx, mut d_exy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let (ux, uy) = (mx.v[i], my.v[i]);
            let sxx = exx.v[i] - ux * ux;
            let syy = eyy.v[i] - uy * uy;
            let sxy = exy.v[i] - ux * uy;
            let a1 = 2.0 * ux * uy + C1;
            let a2 = 2.0 * sxy + C2;
            let b1 = ux * ux + uy * uy + C1;
            let b2 = sxx + syy + C2;
            let s = (a1 * a2) / (b1 * b2);
            total += s;
            if want_grad {
                let den = b1 * b2;
                let ds_dux = 2.0 * uy * a2 / den - s * 2.0 * ux / b1;
                let ds_dsxx = -s / b2;
                let ds_dsxy = 2.0 * a1 / den;
                d_mx[i] = norm * (ds_dux - 2.0 * ux * ds_dsxx - uy * ds_dsxy);
                d_exx[i] = norm * ds_dsxx;
                d_exy[i] = norm * ds_dsxy;
            }
        }
        if let Some(g) = grad.as_mut() {
            let (ow, oh) = (mx.w, mx.h);
            let back = |v: Vec<f64>| Plane { w: ow, h: oh, v }.filter_adjoint(&k, a.width, a.height);
            let gm = back(d_mx);
            let gxx = back(d_exx);
            let gxy = back(d_exy);
            for i in 0..x.v.len() {
                g.data[i * 3 + c] = gm.v[i] + 2.0 * x.v[i] * gxx.v[i] + y.v[i] * gxy.v[i];
            }
        }
    }
    Ok((total * norm, grad))
}

/// Mean structural similarity over the valid window positions.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_impl(a, b, false).map(|(s, _)| s)
}

/// SSIM together with its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    let (s, g) = ssim_impl(a, b, true)?;
    Ok((s, g.expect("gradient requested")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub render_ms: f64,
}

/// Per-image scores plus dataset means. LPIPS is not computed and has no
/// field.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub images: Vec<ImageScore>,
    pub primitive_count: usize,
}

impl EvalReport {
    fn mean(&self, f: impl Fn(&ImageScore) -> f64) -> f64 {
        if self.images.is_empty() {
            return f64::NAN;
        }
        self.images.iter().map(f).sum::<f64>() / self.images.len() as f64
    }

    pub fn mean_psnr(&self) -> f64 {
        self.mean(|s| s.psnr)
    }

    pub fn mean_ssim(&self) -> f64 {
        self.mean(|s| s.ssim)
    }

    pub fn mean_render_ms(&self) -> f64 {
        self.mean(|s| s.render_ms)
    }

    pub const CSV_HEADER: &'static str = "label,image,psnr,ssim,render_ms,primitives";

    /// One row per image followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for r in &self.images {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.3},{}",
                self.label,
                r.name,
                format_psnr(r.psnr),
                r.ssim,
                r.render_ms,
                self.primitive_count
            );
        }
        let _ = writeln!(
            s,
            "{},mean,{},{:.6},{:.3},{}",
            self.label,
            format_psnr(self.mean_psnr()),
            self.mean_ssim(),
            self.mean_render_ms(),
            self.primitive_count
        );
        s
    }

    pub fn to_table(&self) -> String {
        let width = self.images.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        let mut s = format!(
            "{}  ({} primitives)\n{:<width$}  {:>9}  {:>7}  {:>9}\n",
            self.label, self.primitive_count, "image", "PSNR", "SSIM", "ms/frame"
        );
        for r in &self.images {
            let _ = writeln!(
                s,
                "{:<width$}  {:>9}  {:>7.4}  {:>9.2}",
                r.name,
                format_psnr(r.psnr),
                r.ssim,
                r.render_ms
            );
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:>9}  {:>7.4}  {:>9.2}",
            "mean",
            format_psnr(self.mean_psnr()),
            self.mean_ssim(),
            self.mean_render_ms()
        );
        s
    }
}

/// Renders every view with `kernel` and scores it against the view's image.
pub fn evaluate(
    scene: &crate::geometry::Scene,
    views: &[crate::trainer::TrainView],
    kernel: crate::raster::Kernel,
    label: &str,
) -> Result<EvalReport> {
    let mut images = Vec::with_capacity(views.len());
    for v in views {
        let t0 = std::time::Instant::now();
        let out = crate::raster::render_with(scene, &v.camera, kernel)?;
        let render_ms = t0.elapsed().as_secs_f64() * 1e3;
        images.push(ImageScore {
            name: v.name.clone(),
            psnr: psnr(&out.color, &v.image)?,
            ssim: ssim(&out.color, &v.image)?,
            render_ms,
        });
    }
    Ok(EvalReport {
        label: label.to_string(),
        images,
        primitive_count: scene.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_data(w, h, (0..w * h * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn textured(w: usize, h: usize) -> Image {
        let mut img = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = 0.5 + 0.4 * ((x as f64 * 0.7).sin() * (y as f64 * 0.45).cos());
                img.set(x, y, [v, 1.0 - v, 0.5 + 0.3 * (x as f64 * 0.2).cos()]);
            }
        }
        img
    }

    fn ssim_direct(a: &Image, b: &Image) -> f64 {
        ssim_direct_with(a, b, C1, C2)
    }

    /// Direct 2D-window SSIM, no separability, no shared code.
    fn ssim_direct_with(a: &Image, b: &Image, c1: f64, c2: f64) -> f64 {
        let half = 5i64;
        let mut k = [[0.0; 11]; 11];
        let mut s = 0.0;
        for j in -half..=half {
            for i in -half..=half {
                let v = (-((i * i + j * j) as f64) / 4.5).exp();
                k[(j + half) as usize][(i + half) as usize] = v;
                s += v;
            }
        }
        let mut total = 0.0;
        let mut count = 0;
        for c in 0..3 {
            for y in 0..=a.height - 11 {
                for x in 0..=a.width - 11 {
                    let (mut ux, mut uy, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for j in 0..11 {
                        for i in 0..11 {
                            let w = k[j][i] / s;
                            let p = a.get(x + i, y + j)[c];
                            let q = b.get(x + i, y + j)[c];
                            ux += w * p;
                            uy += w * q;
                            xx += w * p * p;
                            yy += w * q * q;
                            xy += w * p * q;
                        }
                    }
                    let (vx, vy, cxy) = (xx - ux * ux, yy - uy * uy, xy - ux * uy);
                    total += (2.0 * ux * uy + c1) * (2.0 * cxy + c2)
                        / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    #[test]
    fn psnr_examples() {
        let a = random_image(8, 8, 1);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = Image::filled(8, 8, [0.2; 3]);
        let c = Image::filled(8, 8, [0.3; 3]);
        assert!((psnr(&b, &c).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(format_psnr(f64::INFINITY), "inf");
    }

    #[test]
    fn psnr_matches_double_loop() {
        let a = random_image(13, 7, 2);
        let b = random_image(13, 7, 3);
        let mut sum = 0.0;
        for y in 0..7 {
            for x in 0..13 {
                for c in 0..3 {
                    let d = a.get(x, y)[c] - b.get(x, y)[c];
                    sum += d * d;
                }
            }
        }
        let direct = 10.0 * (13.0 * 7.0 * 3.0 / sum).log10();
        assert!((psnr(&a, &b).unwrap() - direct).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_identity_and_errors() {
        let a = random_image(16, 12, 4);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let t = textured(20, 20);
        assert_eq!(ssim(&t, &t).unwrap(), 1.0);
        assert!(matches!(
            ssim(&Image::new(10, 20), &Image::new(10, 20)),
            Err(HgsError::ImageTooSmall { .. })
        ));
        assert!(matches!(ssim(&a, &Image::new(16, 13)), Err(HgsError::ShapeMismatch(_))));
        assert!(matches!(psnr(&a, &Image::new(3, 3)), Err(HgsError::ShapeMismatch(_))));
    }

    #[test]
    fn ssim_matches_direct_window() {
        let a = random_image(17, 14, 5);
        let b = random_image(17, 14, 6);
        assert!((ssim(&a, &b).unwrap() - ssim_direct(&a, &b)).abs() < 1e-12);
        let t = textured(24, 24);
        let inv = Image::from_data(24, 24, t.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        let s = ssim(&t, &inv).unwrap();
        assert!((s - ssim_direct(&t, &inv)).abs() < 1e-12);
        assert!(s < 0.2, "{s}");
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    }

    #[test]
    fn luminance_term_raises_shifted_score() {
        // without the stabilizers the index reduces to the plain
        // normalized-correlation form, which punishes a brightness shift harder
        let t = textured(24, 24);
        let shifted = Image::from_data(24, 24, t.data.iter().map(|v| v + 0.05).collect()).unwrap();
        let s = ssim(&t, &shifted).unwrap();
        let plain = ssim_direct_with(&t, &shifted, 0.0, 0.0);
        assert!(s > plain, "ssim {s} plain {plain}");
        assert!(s < 1.0);
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let a = random_image(14, 13, 7);
        let b = random_image(14, 13, 8);
        let (_, g) = ssim_with_grad(&a, &b).unwrap();
        let h = 1e-6;
        let mut worst = 0.0f64;
        for i in (0..a.data.len()).step_by(7) {
            let mut p = a.clone();
            p.data[i] += h;
            let mut m = a.clone();
            m.data[i] -= h;
            let fd = (ssim(&p, &b).unwrap() - ssim(&m, &b).unwrap()) / (2.0 * h);
            let scale = fd.abs().max(g.data[i].abs()).max(1e-6);
            worst = worst.max((fd - g.data[i]).abs() / scale);
        }
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn report_means_and_csv() {
        let r = EvalReport {
            label: "hgs".into(),
            images: vec![
                ImageScore { name: "a".into(), psnr: 30.0, ssim: 0.9, render_ms: 2.0 },
                ImageScore { name: "b".into(), psnr: 20.0, ssim: 0.7, render_ms: 4.0 },
            ],
            primitive_count: 12,
        };
        assert_eq!(r.mean_psnr(), 25.0);
        assert!((r.mean_ssim() - 0.8).abs() < 1e-15);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().last().unwrap().starts_with("hgs,mean,25.0000,0.800000"));
        assert!(r.to_table().contains("mean"));
    }
}
