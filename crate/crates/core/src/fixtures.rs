//! Procedural datasets with analytic ground truth: a textured quad with hard
//! color edges, a two-plane corner, and a Lambertian sphere.
//!
//! Reference images are ray traced with a regular supersampling grid, so they
//! are anti-aliased and need no downloads. Initial point clouds are sampled
//! on the surfaces with the true surface color.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HgsError, Result};
use crate::geometry::{CameraModel, Scene};
use crate::image::Image;
use crate::io::{init_from_points, save_cameras_json, write_image, CameraEntry, ColoredPoint, Split};
use crate::trainer::TrainView;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FixtureKind {
    Edge,
    Corner,
    Sphere,
}

impl FixtureKind {
    pub const ALL: [FixtureKind; 3] = [FixtureKind::Edge, FixtureKind::Corner, FixtureKind::Sphere];

    pub fn name(self) -> &'static str {
        match self {
            FixtureKind::Edge => "edge",
            FixtureKind::Corner => "corner",
            FixtureKind::Sphere => "sphere",
        }
    }
}

impl std::str::FromStr for FixtureKind {
    type Err = HgsError;

    fn from_str(s: &str) -> Result<Self> {
        FixtureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HgsError::InvalidConfig(format!("unknown fixture `{s}` (edge, corner, sphere)")))
    }
}

#[derive(Clone, Copy, Debug)]
enum Texture {
    /// Two colors split by a slanted line, plus a bright band.
    Edge,
    Flat(Vector3<f64>),
}

#[derive(Clone, Copy, Debug)]
struct Quad {
    center: Vector3<f64>,
    /// Half-extent vectors spanning the quad.
    u: Vector3<f64>,
    v: Vector3<f64>,
    texture: Texture,
    shade: f64,
}

impl Quad {
    fn normal(&self) -> Vector3<f64> {
        self.u.cross(&self.v).normalize()
    }

    /// Texture coordinates in `[-1, 1]²` of the hit point, if any.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let n = self.normal();
        let denom = n.dot(d);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = n.dot(&(self.center - o)) / denom;
        if t <= 0.0 {
            return None;
        }
        let p = o + d * t - self.center;
        let a = p.dot(&self.u) / self.u.norm_squared();
        let b = p.dot(&self.v) / self.v.norm_squared();
        (a.abs() <= 1.0 && b.abs() <= 1.0).then_some((t, a, b))
    }

    fn color(&self, a: f64, b: f64) -> Vector3<f64> {
        let base = match self.texture {
            Texture::Flat(c) => c,
            Texture::Edge => {
                if (a - 0.45 * b - 0.1).abs() < 0.12 {
                    Vector3::new(0.95, 0.9, 0.3)
                } else if a - 0.45 * b > 0.1 {
                    Vector3::new(0.15, 0.35, 0.85)
                } else {
                    Vector3::new(0.85, 0.25, 0.2)
                }
            }
        };
        base * self.shade
    }

    fn area(&self) -> f64 {
        4.0 * self.u.cross(&self.v).norm()
    }
}

#[derive(Clone, Copy, Debug)]
struct Ball {
    center: Vector3<f64>,
    radius: f64,
    albedo: Vector3<f64>,
    light: Vector3<f64>,
}

impl Ball {
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let oc = o - self.center;
        let b = oc.dot(d);
        let c = oc.norm_squared() - self.radius * self.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let t = -b - disc.sqrt();
        (t > 0.0).then_some(t)
    }

    fn shade(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let n = (p - self.center) / self.radius;
        self.albedo * (0.25 + 0.75 * n.dot(&self.light).max(0.0))
    }
}

/// Analytic scene description used for ray tracing and point sampling.
#[derive(Clone, Debug)]
pub struct ProceduralScene {
    quads: Vec<Quad>,
    balls: Vec<Ball>,
    pub background: Vector3<f64>,
}

impl ProceduralScene {
    pub fn new(kind: FixtureKind) -> Self {
        let bg = Vector3::zeros();
        match kind {
            FixtureKind::Edge => ProceduralScene {
                quads: vec![Quad {
                    center: Vector3::zeros(),
                    u: Vector3::new(1.0, 0.0, 0.0),
                    v: Vector3::new(0.0, 1.0, 0.0),
                    texture: Texture::Edge,
                    shade: 1.0,
                }],
                balls: vec![],
                background: bg,
            },
            FixtureKind::Corner => {
                // two panels hinged at x = 0, opening away from the cameras
                let (s, c) = (PI / 5.0).sin_cos();
                ProceduralScene {
                    quads: vec![
                        Quad {
                            center: Vector3::new(-0.5 * c, 0.0, 0.5 * s),
                            u: Vector3::new(0.5 * c, 0.0, -0.5 * s),
                            v: Vector3::new(0.0, 0.9, 0.0),
                            texture: Texture::Flat(Vector3::new(0.9, 0.55, 0.2)),
                            shade: 0.95,
                        },
                        Quad {
                            center: Vector3::new(0.5 * c, 0.0, 0.5 * s),
                            u: Vector3::new(0.5 * c, 0.0, 0.5 * s),
                            v: Vector3::new(0.0, 0.9, 0.0),
                            texture: Texture::Flat(Vector3::new(0.2, 0.6, 0.45)),
                            shade: 0.8,
                        },
                    ],
                    balls: vec![],
                    background: bg,
                }
            }
            FixtureKind::Sphere => ProceduralScene {
                quads: vec![],
                balls: vec![Ball {
                    center: Vector3::zeros(),
                    radius: 0.8,
                    albedo: Vector3::new(0.85, 0.75, 0.6),
                    light: Vector3::new(-0.4, -0.6, -0.7).normalize(),
                }],
                background: bg,
            },
        }
    }

    fn trace(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Vector3<f64> {
        let mut best = f64::INFINITY;
        let mut color = self.background;
        for q in &self.quads {
            if let Some((t, a, b)) = q.intersect(o, d) {
                if t < best {
                    best = t;
                    color = q.color(a, b);
                }
            }
        }
        for s in &self.balls {
            if let Some(t) = s.intersect(o, d) {
                if t < best {
                    best = t;
                    color = s.shade(&(o + d * t));
                }
            }
        }
        color
    }

    /// Ray traced image with `ss × ss` samples per pixel.
    pub fn render(&self, cam: &CameraModel, ss: usize) -> Image {
        let (w, h) = (cam.width as usize, cam.height as usize);
        let origin = cam.center();
        let rt = cam.rotation.transpose();
        let mut img = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = Vector3::zeros();
                for sy in 0..ss {
                    for sx in 0..ss {
                        let px = x as f64 + (sx as f64 + 0.5) / ss as f64;
                        let py = y as f64 + (sy as f64 + 0.5) / ss as f64;
                        let dir_cam = Vector3::new((px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0);
                        let d = (rt * dir_cam).normalize();
                        acc += self.trace(&origin, &d);
                    }
                }
                let c = acc / (ss * ss) as f64;
                img.set(x, y, [c.x, c.y, c.z]);
            }
        }
        img
    }

    /// Area-uniform samples on the visible surfaces, with true colors.
    pub fn sample_points(&self, n: usize, seed: u64) -> Vec<ColoredPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let areas: Vec<f64> = self
            .quads
            .iter()
            .map(Quad::area)
            .chain(self.balls.iter().map(|b| 4.0 * PI * b.radius * b.radius))
            .collect();
        let total: f64 = areas.iter().sum();
        (0..n)
            .map(|_| {
                let mut r = rng.random_range(0.0..total);
                let mut k = 0;
                while k + 1 < areas.len() && r >= areas[k] {
                    r -= areas[k];
                    k += 1;
                }
                if k < self.quads.len() {
                    let q = &self.quads[k];
                    let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    ColoredPoint {
                        position: q.center + q.u * a + q.v * b,
                        color: q.color(a, b),
                    }
                } else {
                    let s = &self.balls[k - self.quads.len()];
                    let z: f64 = rng.random_range(-1.0..1.0);
                    let phi: f64 = rng.random_range(0.0..2.0 * PI);
                    let r = (1.0 - z * z).sqrt();
                    let p = s.center + Vector3::new(r * phi.cos(), r * phi.sin(), z) * s.radius;
                    ColoredPoint {
                        position: p,
                        color: s.shade(&p),
                    }
                }
            })
            .collect()
    }
}

/// Camera on a sphere around the origin, looking at it from the `-z` side.
/// Yaw turns about the vertical axis, pitch lifts the camera.
pub fn orbit_camera(yaw_deg: f64, pitch_deg: f64, distance: f64, focal: f64, size: u32) -> Result<CameraModel> {
    let (yaw, pitch) = (yaw_deg.to_radians(), pitch_deg.to_radians());
    let eye = Vector3::new(yaw.sin() * pitch.cos(), -pitch.sin(), -yaw.cos() * pitch.cos()) * distance;
    CameraModel::look_at(eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0), focal, size, size)
}

/// Train views spread around the front of the scene; the held-out view sits
/// between them.
const TRAIN_POSES: [(f64, f64); 3] = [(-24.0, 6.0), (0.0, -12.0), (24.0, 6.0)];
const TEST_POSES: [(f64, f64); 1] = [(10.0, 0.0)];
pub const FIXTURE_DISTANCE: f64 = 3.5;
pub const FIXTURE_SUPERSAMPLING: usize = 4;

#[derive(Clone, Debug)]
pub struct Fixture {
    pub kind: FixtureKind,
    pub scene: ProceduralScene,
    pub train: Vec<TrainView>,
    pub test: Vec<TrainView>,
}

impl Fixture {
    /// `size×size` views with focal length `1.25·size`.
    pub fn new(kind: FixtureKind, size: u32) -> Result<Self> {
        let scene = ProceduralScene::new(kind);
        let focal = 1.25 * size as f64;
        let view = |name: String, (yaw, pitch): (f64, f64)| -> Result<TrainView> {
            let camera = orbit_camera(yaw, pitch, FIXTURE_DISTANCE, focal, size)?;
            let image = scene.render(&camera, FIXTURE_SUPERSAMPLING);
            Ok(TrainView { name, camera, image })
        };
        let train = TRAIN_POSES
            .iter()
            .enumerate()
            .map(|(i, p)| view(format!("train_{i}"), *p))
            .collect::<Result<_>>()?;
        let test = TEST_POSES
            .iter()
            .enumerate()
            .map(|(i, p)| view(format!("test_{i}"), *p))
            .collect::<Result<_>>()?;
        Ok(Fixture { kind, scene, train, test })
    }

    /// Initial scene from `n` surface samples.
    pub fn initial_scene(&self, n: usize, sh_degree: usize, seed: u64) -> Result<Scene> {
        let mut s = init_from_points(&self.scene.sample_points(n, seed), sh_degree, seed)?;
        s.background = self.scene.background;
        Ok(s)
    }

    /// Writes `cameras.json`, `images/*.png` and a `points.ply` with `n`
    /// surface samples.
    pub fn write(&self, dir: &Path, points: usize, seed: u64) -> Result<()> {
        let images = dir.join("images");
        std::fs::create_dir_all(&images).map_err(|e| HgsError::io(&images, e))?;
        let mut entries = Vec::new();
        for (views, split) in [(&self.train, Split::Train), (&self.test, Split::Test)] {
            for v in views {
                let path = images.join(format!("{}.png", v.name));
                write_image(&v.image, &path)?;
                entries.push(CameraEntry {
                    image: path,
                    camera: v.camera.clone(),
                    split,
                });
            }
        }
        save_cameras_json(&entries, &dir.join("cameras.json"))?;
        let pts = self.scene.sample_points(points, seed);
        write_point_cloud(&pts, &dir.join("points.ply"))
    }
}

/// Writes `x y z red green blue` (doubles, colors in `[0, 1]`).
pub fn write_point_cloud(points: &[ColoredPoint], path: &Path) -> Result<()> {
    let names: Vec<String> = ["x", "y", "z", "red", "green", "blue"].map(String::from).to_vec();
    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            vec![
                p.position.x,
                p.position.y,
                p.position.z,
                p.color.x,
                p.color.y,
                p.color.z,
            ]
        })
        .collect();
    let bytes = crate::io::ply::encode_points(&names, &rows, &[]);
    std::fs::write(path, bytes).map_err(|e| HgsError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_cover_the_views() {
        for kind in FixtureKind::ALL {
            let f = Fixture::new(kind, 24).unwrap();
            assert_eq!((f.train.len(), f.test.len()), (3, 1));
            for v in f.train.iter().chain(&f.test) {
                let lit = v.image.data.chunks(3).filter(|p| p.iter().any(|c| *c > 0.05)).count();
                let frac = lit as f64 / v.image.pixel_count() as f64;
                assert!(frac > 0.2 && frac < 0.95, "{kind:?} {}: {frac}", v.name);
            }
        }
    }

    #[test]
    fn points_lie_on_surfaces() {
        let s = ProceduralScene::new(FixtureKind::Sphere);
        for p in s.sample_points(100, 3) {
            assert!((p.position.norm() - 0.8).abs() < 1e-12);
        }
        let s = ProceduralScene::new(FixtureKind::Edge);
        for p in s.sample_points(100, 3) {
            assert_eq!(p.position.z, 0.0);
        }
    }

    #[test]
    fn center_ray_hits_the_quad() {
        let s = ProceduralScene::new(FixtureKind::Edge);
        let cam = orbit_camera(0.0, 0.0, 3.5, 40.0, 32).unwrap();
        let img = s.render(&cam, 1);
        let c = img.get(16, 16);
        assert!(c.iter().any(|v| *v > 0.1));
        assert_eq!(img.get(0, 0), [0.0; 3]);
    }
}

/// Random cloud of `n` primitives in `[-1, 1]³` with independent opacity
/// pairs and normals, for throughput measurements.
pub fn random_scene(n: usize, seed: u64) -> Result<Scene> {
    use crate::geometry::{logit, HalfGaussianPrimitive};
    use crate::verify::{random_quaternion, unit_vector};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prims = (0..n)
        .map(|_| HalfGaussianPrimitive {
            mu: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            log_scale: Vector3::from_fn(|_, _| rng.random_range(0.01f64..0.05).ln()),
            rotation: random_quaternion(&mut rng),
            sh_coeffs: vec![crate::sh::rgb_to_dc(&Vector3::from_fn(|_, _| rng.random_range(0.0..1.0)))],
            normal: unit_vector(&mut rng),
            raw_opacity_a: logit(rng.random_range(0.05..0.95)),
            raw_opacity_b: logit(rng.random_range(0.05..0.95)),
        })
        .collect();
    Scene::new(prims, 0, Vector3::zeros())
}

/// Front view of `random_scene` at `size×size`.
pub fn benchmark_camera(size: u32) -> Result<CameraModel> {
    orbit_camera(0.0, 0.0, FIXTURE_DISTANCE, 1.25 * size as f64, size)
}
