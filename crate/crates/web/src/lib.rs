//! Browser demo: orbit a small half-Gaussian scene, switch between the paired
//! and the plain Gaussian kernel, and dial the opacity asymmetry up and down.

use nalgebra::Vector3;
use wasm_bindgen::prelude::*;

use hgs_core::fixtures::{orbit_camera, random_scene};
use hgs_core::geometry::logit;
use hgs_core::trainer::opacity_disparity;
use hgs_core::{render_with, Kernel, Scene};

const PRIMITIVES: usize = 700;
const DISTANCE: f64 = 3.5;

/// Scene state held on the Rust side between frames.
#[wasm_bindgen]
pub struct Demo {
    /// Opacity pairs as generated; the live scene interpolates towards them.
    original: Vec<(f64, f64)>,
    scene: Scene,
    size: u32,
    yaw: f64,
    pitch: f64,
    kernel: Kernel,
}

#[wasm_bindgen]
impl Demo {
    /// Random scene of wide splats with independent opacity pairs.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, size: u32) -> Result<Demo, JsError> {
        let mut scene = random_scene(PRIMITIVES, seed as u64).map_err(|e| JsError::new(&e.to_string()))?;
        for p in &mut scene.primitives {
            p.log_scale += Vector3::repeat(4.0f64.ln());
        }
        let original = scene
            .primitives
            .iter()
            .map(|p| (p.opacity_a(), p.opacity_b()))
            .collect();
        Ok(Demo {
            original,
            scene,
            size: size.clamp(16, 1024),
            yaw: 0.0,
            pitch: 0.0,
            kernel: Kernel::HalfGaussian,
        })
    }

    /// Camera angles in degrees.
    pub fn set_view(&mut self, yaw: f64, pitch: f64) {
        self.yaw = yaw;
        self.pitch = pitch.clamp(-80.0, 80.0);
    }

    /// `true` for paired half-Gaussians, `false` for the plain Gaussian
    /// kernel with the mean opacity.
    pub fn set_half_gaussian(&mut self, on: bool) {
        self.kernel = if on { Kernel::HalfGaussian } else { Kernel::FullGaussian };
    }

    /// 0 gives both halves the mean opacity, 1 restores the generated pairs.
    pub fn set_asymmetry(&mut self, t: f64) {
        let t = t.clamp(0.0, 1.0);
        for (p, (a, b)) in self.scene.primitives.iter_mut().zip(&self.original) {
            let mean = 0.5 * (a + b);
            p.raw_opacity_a = logit(mean + t * (a - mean));
            p.raw_opacity_b = logit(mean + t * (b - mean));
        }
    }

    /// Mean absolute opacity difference of the live scene.
    pub fn disparity(&self) -> f64 {
        opacity_disparity(&self.scene).unwrap_or(0.0)
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    /// RGBA bytes, row-major, ready for `ImageData`.
    pub fn render(&self) -> Result<Vec<u8>, JsError> {
        let err = |e: hgs_core::HgsError| JsError::new(&e.to_string());
        let cam = orbit_camera(self.yaw, self.pitch, DISTANCE, 1.25 * self.size as f64, self.size).map_err(err)?;
        let out = render_with(&self.scene, &cam, self.kernel).map_err(err)?;
        Ok(to_rgba(&out.color.data))
    }
}

fn to_rgba(rgb: &[f64]) -> Vec<u8> {
    rgb.chunks(3)
        .flat_map(|px| {
            let q = |v: f64| hgs_core::io::quantize(v);
            [q(px[0]), q(px[1]), q(px[2]), 255]
        })
        .collect()
}
