//! Tile-based software rasterizer with an exact analytic backward pass.
//!
//! Each view is processed as: project every primitive, bin the surviving
//! splats into 16×16 pixel tiles by their 3σ footprint, sort each tile's list
//! by depth, then alpha-blend front to back per pixel. Tiles own disjoint
//! pixels, so they run in parallel; every reduction is done in a fixed order
//! and results do not depend on the number of worker threads.

use nalgebra::{Matrix2, Vector2, Vector3};

use crate::error::{HgsError, Result};
use crate::geometry::{CameraModel, Scene};
use crate::image::Image;

mod backward;
pub(crate) mod erf_table;
mod normals;
pub(crate) mod project;

pub use backward::{render_backward, GradientSet, PrimitiveGrad};
pub use normals::{depth_to_image, normals_to_image, render_depth_normalmap};

use project::{eval_pair, project_primitive, tile_grid, Packed, Projection};

pub const TILE_SIZE: usize = 16;

/// Blending stops once transmittance would drop below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

/// Pixel/splat pairs whose blend weight falls below this are skipped.
pub const MIN_WEIGHT: f64 = 1.0 / 255.0;

const MAX_PIXELS: u64 = 1 << 31;

/// Reconstruction kernel used for the blend weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    /// Paired half-Gaussians with the erf-scaled footprint.
    #[default]
    HalfGaussian,
    /// Plain Gaussian footprint with opacity `(α₁ + α₂) / 2`; the reference
    /// path for the `α₁ = α₂` special case.
    FullGaussian,
}

/// Half-open rectangle of tile indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl TileRect {
    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }
}

/// A primitive as seen by one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct ScreenSplat {
    pub prim_index: usize,
    pub mu_hat: Vector2<f64>,
    pub conic: Matrix2<f64>,
    pub whiten2d: Matrix2<f64>,
    pub n_ray: Vector3<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub rgb: Vector3<f64>,
    pub depth: f64,
    pub tile_span: TileRect,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub color: Image,
    pub alpha: Vec<f64>,
    /// Blended camera-space depth normalized by `alpha`; 0 where nothing was
    /// drawn.
    pub depth: Vec<f64>,
    /// Number of entries of the pixel's tile list consumed before blending
    /// stopped.
    pub per_pixel_terminal_index: Vec<u32>,
    pub kernel: Kernel,
    pub intrinsics: [f64; 4],
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }
}

/// Everything shared by the forward and backward passes of one view.
pub(crate) struct ViewSetup {
    pub projections: Vec<Projection>,
    pub packed: Vec<Packed>,
    /// Per tile, indices into `projections` in blend order.
    pub tiles: Vec<Vec<u32>>,
    pub tiles_x: usize,
}

pub(crate) fn check_inputs(scene: &Scene, cam: &CameraModel) -> Result<()> {
    if scene.primitives.is_empty() {
        return Err(HgsError::EmptyScene);
    }
    if cam.width as u64 * cam.height as u64 > MAX_PIXELS {
        return Err(HgsError::ImageTooLarge {
            width: cam.width,
            height: cam.height,
        });
    }
    Ok(())
}

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

pub(crate) fn setup_view(scene: &Scene, cam: &CameraModel, kernel: Kernel) -> ViewSetup {
    let center = cam.center();
    let projections: Vec<Projection> = par_map(scene.primitives.len(), |i| {
        project_primitive(i, &scene.primitives[i], cam, &center, scene.sh_degree, kernel)
    })
    .into_iter()
    .flatten()
    .collect();
    let packed: Vec<Packed> = projections.iter().map(|p| Packed::new(p, kernel)).collect();

    let (tiles_x, tiles_y) = tile_grid(cam);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (i, p) in projections.iter().enumerate() {
        let r = p.tile_span;
        for ty in r.y0..r.y1 {
            for tx in r.x0..r.x1 {
                tiles[ty as usize * tiles_x + tx as usize].push(i as u32);
            }
        }
    }
    let sort_key = |i: &u32| {
        let p = &projections[*i as usize];
        (p.t.z, p.prim_index)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        tiles
            .par_iter_mut()
            .for_each(|list| list.sort_unstable_by(|a, b| cmp_key(sort_key(a), sort_key(b))));
    }
    #[cfg(not(feature = "parallel"))]
    for list in tiles.iter_mut() {
        list.sort_unstable_by(|a, b| cmp_key(sort_key(a), sort_key(b)));
    }
    ViewSetup {
        projections,
        packed,
        tiles,
        tiles_x,
    }
}

fn cmp_key(a: (f64, usize), b: (f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Pixel rectangle covered by a tile, clipped to the image.
pub(crate) fn tile_pixels(tile: usize, tiles_x: usize, cam: &CameraModel) -> (usize, usize, usize, usize) {
    let x0 = (tile % tiles_x) * TILE_SIZE;
    let y0 = (tile / tiles_x) * TILE_SIZE;
    (
        x0,
        y0,
        (x0 + TILE_SIZE).min(cam.width as usize),
        (y0 + TILE_SIZE).min(cam.height as usize),
    )
}

/// Projects every primitive for `cam`; culled primitives are omitted.
pub fn project_scene(scene: &Scene, cam: &CameraModel, kernel: Kernel) -> Vec<ScreenSplat> {
    let center = cam.center();
    scene
        .primitives
        .iter()
        .enumerate()
        .filter_map(|(i, p)| project_primitive(i, p, cam, &center, scene.sh_degree, kernel))
        .map(|p| ScreenSplat {
            prim_index: p.prim_index,
            mu_hat: p.mu_hat,
            conic: p.conic,
            whiten2d: p.whiten2d(),
            n_ray: p.n_ray(),
            alpha1: p.alpha1,
            alpha2: p.alpha2,
            rgb: p.rgb(),
            depth: p.t.z,
            tile_span: p.tile_span,
        })
        .collect()
}

/// Renders with the half-Gaussian kernel.
pub fn render(scene: &Scene, cam: &CameraModel) -> Result<RenderOutput> {
    render_with(scene, cam, Kernel::HalfGaussian)
}

struct TileResult {
    color: Vec<[f64; 3]>,
    alpha: Vec<f64>,
    depth: Vec<f64>,
    terminal: Vec<u32>,
}

pub fn render_with(scene: &Scene, cam: &CameraModel, kernel: Kernel) -> Result<RenderOutput> {
    check_inputs(scene, cam)?;
    let view = setup_view(scene, cam, kernel);
    let bg = scene.background;

    let erf = erf_table::ErfTable::get();
    let results = par_map(view.tiles.len(), |tile| {
        let (x0, y0, x1, y1) = tile_pixels(tile, view.tiles_x, cam);
        let list = &view.tiles[tile];
        let n = (x1 - x0) * (y1 - y0);
        let mut out = TileResult {
            color: Vec::with_capacity(n),
            alpha: Vec::with_capacity(n),
            depth: Vec::with_capacity(n),
            terminal: Vec::with_capacity(n),
        };
        for y in y0..y1 {
            let py = y as f64 + 0.5;
            for x in x0..x1 {
                let px = x as f64 + 0.5;
                let mut t = 1.0;
                let mut c = Vector3::zeros();
                let mut d = 0.0;
                let mut consumed = list.len() as u32;
                for (pos, &si) in list.iter().enumerate() {
                    let s = &view.packed[si as usize];
                    let Some(ev) = eval_pair::<false>(s, kernel, erf, px, py) else {
                        continue;
                    };
                    let w = ev.weight.min(crate::kernel::MAX_WEIGHT);
                    let next = t * (1.0 - w);
                    if next < MIN_TRANSMITTANCE {
                        consumed = pos as u32;
                        break;
                    }
                    let tw = w * t;
                    c += s.rgb * tw;
                    d += s.depth * tw;
                    t = next;
                }
                c += bg * t;
                let a = 1.0 - t;
                out.color.push([c.x, c.y, c.z]);
                out.alpha.push(a);
                out.depth.push(if a > 0.0 { d / a } else { 0.0 });
                out.terminal.push(consumed);
            }
        }
        out
    });

    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut color = Image::new(w, h);
    let mut alpha = vec![0.0; w * h];
    let mut depth = vec![0.0; w * h];
    let mut terminal = vec![0u32; w * h];
    for (tile, r) in results.into_iter().enumerate() {
        let (x0, y0, x1, y1) = tile_pixels(tile, view.tiles_x, cam);
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let i = y * w + x;
                color.data[i * 3..i * 3 + 3].copy_from_slice(&r.color[k]);
                alpha[i] = r.alpha[k];
                depth[i] = r.depth[k];
                terminal[i] = r.terminal[k];
                k += 1;
            }
        }
    }
    Ok(RenderOutput {
        color,
        alpha,
        depth,
        per_pixel_terminal_index: terminal,
        kernel,
        intrinsics: [cam.fx, cam.fy, cam.cx, cam.cy],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{logit, HalfGaussianPrimitive};
    use crate::sh::rgb_to_dc;
    use nalgebra::{Vector3, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn front_camera(size: u32) -> CameraModel {
        CameraModel::look_at(
            Vector3::new(0.0, 0.0, -4.0),
            Vector3::zeros(),
            Vector3::new(0.0, -1.0, 0.0),
            size as f64,
            size,
            size,
        )
        .unwrap()
    }

    fn prim(mu: Vector3<f64>, scale: f64, rgb: Vector3<f64>, a1: f64, a2: f64) -> HalfGaussianPrimitive {
        HalfGaussianPrimitive {
            mu,
            log_scale: Vector3::repeat(scale.ln()),
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            sh_coeffs: vec![rgb_to_dc(&rgb)],
            normal: Vector3::new(1.0, 0.0, 0.0),
            raw_opacity_a: logit(a1),
            raw_opacity_b: logit(a2),
        }
    }

    fn random_scene(rng: &mut ChaCha8Rng, n: usize, equal: bool) -> Scene {
        let prims = (0..n)
            .map(|_| {
                let a1 = rng.random_range(0.05..0.95);
                let a2 = if equal { a1 } else { rng.random_range(0.05..0.95) };
                let mut p = prim(
                    Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ),
                    rng.random_range(0.05..0.4),
                    Vector3::new(rng.random(), rng.random(), rng.random()),
                    a1,
                    a2,
                );
                p.rotation = Vector4::new(rng.random(), rng.random(), rng.random(), rng.random());
                p.normal = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                p
            })
            .collect();
        Scene::new(prims, 0, Vector3::new(0.1, 0.2, 0.3)).unwrap()
    }

    #[test]
    fn transparent_scene_shows_background() {
        let bg = Vector3::new(0.2, 0.4, 0.6);
        let p = prim(Vector3::zeros(), 0.5, Vector3::new(1.0, 0.0, 0.0), 1e-300, 1e-300);
        let scene = Scene::new(vec![p], 0, bg).unwrap();
        let out = render(&scene, &front_camera(32)).unwrap();
        assert!(out.alpha.iter().all(|&a| a == 0.0));
        for px in out.color.data.chunks(3) {
            assert!((Vector3::new(px[0], px[1], px[2]) - bg).amax() < 1e-12);
        }
    }

    #[test]
    fn single_opaque_splat_matches_closed_form_blend() {
        let bg = Vector3::new(0.0, 0.0, 1.0);
        let p = prim(Vector3::zeros(), 0.5, Vector3::new(1.0, 0.0, 0.0), 0.99, 0.99);
        let scene = Scene::new(vec![p], 0, bg).unwrap();
        let cam = front_camera(64);
        let out = render(&scene, &cam).unwrap();
        // pixel (32, 32) has its center half a pixel off the projected mean
        let splats = project_scene(&scene, &cam, Kernel::HalfGaussian);
        let s = &splats[0];
        let d = Vector2::new(32.5, 32.5) - s.mu_hat;
        let g = (-0.5 * (d.transpose() * s.conic * d)[0]).exp();
        let w = 0.99 * g;
        let i = 32 * 64 + 32;
        assert!((out.alpha[i] - w).abs() < 1e-12);
        assert!(out.alpha[i] > 0.98);
        let expect = Vector3::new(1.0, 0.0, 0.0) * w + bg * (1.0 - w);
        let got = out.color.get(32, 32);
        assert!((Vector3::from(got) - expect).amax() < 1e-9);
    }

    #[test]
    fn transmittance_telescopes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scene = random_scene(&mut rng, 60, false);
        let cam = front_camera(48);
        let out = render(&scene, &cam).unwrap();
        let black = Scene {
            background: Vector3::zeros(),
            ..scene.clone()
        };
        let white = Scene {
            background: Vector3::repeat(1.0),
            ..scene
        };
        let a = render(&black, &cam).unwrap();
        let b = render(&white, &cam).unwrap();
        for i in 0..out.alpha.len() {
            // the residual transmittance is what the background contributes
            let t = b.color.data[i * 3] - a.color.data[i * 3];
            assert!((out.alpha[i] + t - 1.0).abs() < 1e-6);
            assert!((0.0..=1.0).contains(&out.alpha[i]));
        }
    }

    #[test]
    fn equal_opacities_match_reference_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let scene = random_scene(&mut rng, 40, true);
            let cam = front_camera(40);
            let a = render_with(&scene, &cam, Kernel::HalfGaussian).unwrap();
            let b = render_with(&scene, &cam, Kernel::FullGaussian).unwrap();
            assert_eq!(a.color, b.color);
            assert_eq!(a.alpha, b.alpha);
            assert_eq!(a.depth, b.depth);
        }
    }

    #[test]
    fn mirrored_split_renders_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scene = random_scene(&mut rng, 40, false);
        let mut mirrored = scene.clone();
        for p in &mut mirrored.primitives {
            p.normal = -p.normal;
            std::mem::swap(&mut p.raw_opacity_a, &mut p.raw_opacity_b);
        }
        let cam = front_camera(40);
        assert_eq!(render(&scene, &cam).unwrap(), render(&mirrored, &cam).unwrap());
    }

    #[test]
    fn permutation_invariance_with_distinct_depths() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scene = random_scene(&mut rng, 30, false);
        let mut shuffled = scene.clone();
        shuffled.primitives.reverse();
        let cam = front_camera(32);
        let a = render(&scene, &cam).unwrap();
        let b = render(&shuffled, &cam).unwrap();
        assert_eq!(a.color, b.color);
        assert_eq!(a.alpha, b.alpha);
    }

    #[test]
    fn split_halves_differ() {
        // a pair with one opaque half must not render like its average
        let mut p = prim(Vector3::zeros(), 0.6, Vector3::new(1.0, 1.0, 1.0), 0.9, 0.05);
        p.normal = Vector3::new(1.0, 0.0, 0.3);
        let scene = Scene::new(vec![p], 0, Vector3::zeros()).unwrap();
        let cam = front_camera(32);
        let a = render_with(&scene, &cam, Kernel::HalfGaussian).unwrap();
        let b = render_with(&scene, &cam, Kernel::FullGaussian).unwrap();
        // normal points to +x: right side brighter under the half kernel
        let right = a.color.get(21, 16)[0];
        let left = a.color.get(10, 16)[0];
        assert!(right > 2.0 * left, "{right} vs {left}");
        let (fr, fl) = (b.color.get(21, 16)[0], b.color.get(10, 16)[0]);
        assert!((fr - fl).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scene = random_scene(&mut rng, 3, false);
        let mut cam = front_camera(32);
        cam.width = 1 << 16;
        cam.height = 1 << 16;
        assert!(matches!(render(&scene, &cam), Err(HgsError::ImageTooLarge { .. })));
        let empty = Scene {
            primitives: vec![],
            ..scene
        };
        assert!(matches!(render(&empty, &front_camera(8)), Err(HgsError::EmptyScene)));
    }
}
