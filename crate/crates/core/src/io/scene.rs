//! Scene point files.
//!
//! The layout follows the common 3D Gaussian splatting point file: one vertex
//! per primitive with `x y z nx ny nz f_dc_0..2 f_rest_* opacity scale_0..2
//! rot_0..3`, where the otherwise unused normal slots carry the splitting
//! normal. The second opacity is appended as a trailing `opacity_2`
//! property. All properties are written as doubles so a save/load round trip
//! is bit-exact. The background color travels in a header comment.

use std::path::Path;

use nalgebra::{Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ply::{encode_points, read_points, PointTable};
use crate::error::{HgsError, Result};
use crate::geometry::{sh_coeff_count, HalfGaussianPrimitive, Scene};
use crate::sh::degree_for_count;

const BACKGROUND_COMMENT: &str = "background";

/// Property names in file order for a given SH degree.
pub fn property_names(sh_degree: usize, with_second_opacity: bool) -> Vec<String> {
    let mut v: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rest = sh_coeff_count(sh_degree) - 1;
    v.extend((0..3 * rest).map(|i| format!("f_rest_{i}")));
    v.push("opacity".into());
    v.extend(["scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"].map(String::from));
    if with_second_opacity {
        v.push("opacity_2".into());
    }
    v
}

fn primitive_row(p: &HalfGaussianPrimitive, with_second_opacity: bool) -> Vec<f64> {
    let rest = p.sh_coeffs.len() - 1;
    let mut r = Vec::with_capacity(18 + 3 * rest);
    r.extend(p.mu.iter());
    r.extend(p.normal.iter());
    r.extend(p.sh_coeffs[0].iter());
    // rest coefficients are stored channel-major
    for c in 0..3 {
        r.extend(p.sh_coeffs[1..].iter().map(|k| k[c]));
    }
    r.push(p.raw_opacity_a);
    r.extend(p.log_scale.iter());
    r.extend(p.rotation.iter());
    if with_second_opacity {
        r.push(p.raw_opacity_b);
    }
    r
}

fn encode(scene: &Scene, with_second_opacity: bool) -> Vec<u8> {
    let names = property_names(scene.sh_degree, with_second_opacity);
    let rows: Vec<Vec<f64>> = scene
        .primitives
        .iter()
        .map(|p| primitive_row(p, with_second_opacity))
        .collect();
    let b = scene.background;
    let comments = vec![format!("{BACKGROUND_COMMENT} {} {} {}", b.x, b.y, b.z)];
    encode_points(&names, &rows, &comments)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| HgsError::io(path, e))
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<()> {
    write_file(path, &encode(scene, true))
}

/// Bytes of [`save_scene`] without touching the file system.
pub fn scene_to_bytes(scene: &Scene) -> Vec<u8> {
    encode(scene, true)
}

/// Writes a plain Gaussian file (no `opacity_2`) using the first opacity.
pub fn export_3dgs(scene: &Scene, path: &Path) -> Result<()> {
    write_file(path, &encode(scene, false))
}

fn background(table: &PointTable) -> Result<Vector3<f64>> {
    for c in &table.header.comments {
        let mut it = c.split_whitespace();
        if it.next() == Some(BACKGROUND_COMMENT) {
            let v: Vec<f64> = it.map(|s| s.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| {
                HgsError::MalformedHeader(format!("bad background comment `{c}`"))
            })?;
            if v.len() != 3 {
                return Err(HgsError::MalformedHeader(format!("bad background comment `{c}`")));
            }
            return Ok(Vector3::new(v[0], v[1], v[2]));
        }
    }
    Ok(Vector3::zeros())
}

struct Columns {
    mu: [usize; 3],
    normal: [usize; 3],
    dc: [usize; 3],
    rest: Vec<usize>,
    opacity: usize,
    scale: [usize; 3],
    rot: [usize; 4],
    sh_degree: usize,
}

fn columns(table: &PointTable) -> Result<Columns> {
    let h = &table.header;
    let req = |n: &str| h.require(n);
    let rest_count = (0..).take_while(|i| h.index_of(&format!("f_rest_{i}")).is_some()).count();
    let sh_degree = if rest_count % 3 == 0 {
        degree_for_count(rest_count / 3 + 1)
    } else {
        None
    }
    .ok_or_else(|| HgsError::MalformedHeader(format!("{rest_count} f_rest properties do not form an SH degree")))?;
    Ok(Columns {
        mu: [req("x")?, req("y")?, req("z")?],
        normal: [req("nx")?, req("ny")?, req("nz")?],
        dc: [req("f_dc_0")?, req("f_dc_1")?, req("f_dc_2")?],
        rest: (0..rest_count).map(|i| req(&format!("f_rest_{i}"))).collect::<Result<_>>()?,
        opacity: req("opacity")?,
        scale: [req("scale_0")?, req("scale_1")?, req("scale_2")?],
        rot: [req("rot_0")?, req("rot_1")?, req("rot_2")?, req("rot_3")?],
        sh_degree,
    })
}

fn primitive_from_row(row: &[f64], c: &Columns, opacity_b: f64, normal: Vector3<f64>) -> HalfGaussianPrimitive {
    let get3 = |i: [usize; 3]| Vector3::new(row[i[0]], row[i[1]], row[i[2]]);
    let rest = c.rest.len() / 3;
    let mut sh = Vec::with_capacity(rest + 1);
    sh.push(get3(c.dc));
    for j in 0..rest {
        sh.push(Vector3::new(row[c.rest[j]], row[c.rest[rest + j]], row[c.rest[2 * rest + j]]));
    }
    HalfGaussianPrimitive {
        mu: get3(c.mu),
        log_scale: get3(c.scale),
        rotation: Vector4::new(row[c.rot[0]], row[c.rot[1]], row[c.rot[2]], row[c.rot[3]]),
        sh_coeffs: sh,
        normal,
        raw_opacity_a: row[c.opacity],
        raw_opacity_b: opacity_b,
    }
}

pub fn scene_from_table(table: &PointTable) -> Result<Scene> {
    let c = columns(table)?;
    let second = table.column("opacity_2")?;
    let prims = table
        .rows
        .iter()
        .map(|r| {
            let n = Vector3::new(r[c.normal[0]], r[c.normal[1]], r[c.normal[2]]);
            primitive_from_row(r, &c, r[second], n)
        })
        .collect();
    Scene::new(prims, c.sh_degree, background(table)?)
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    scene_from_table(&read_points(path)?)
}

/// How to seed the splitting normals of an imported Gaussian model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormalInit {
    /// Unit-normalized `N(0, 0.01²)` sample.
    ZeroPlusJitter,
    /// Uniform on the sphere.
    RandomUnit,
}

impl std::str::FromStr for NormalInit {
    type Err = HgsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero-plus-jitter" | "jitter" => Ok(NormalInit::ZeroPlusJitter),
            "random-unit" | "random" => Ok(NormalInit::RandomUnit),
            _ => Err(HgsError::InvalidConfig(format!("unknown normal init `{s}`"))),
        }
    }
}

/// Seeded random unit vector.
pub fn sample_normal(rng: &mut ChaCha8Rng, init: NormalInit) -> Vector3<f64> {
    let sigma = match init {
        NormalInit::ZeroPlusJitter => 0.01,
        NormalInit::RandomUnit => 1.0,
    };
    loop {
        let v: Vector3<f64> = Vector3::from_fn(|_, _| { let z: f64 = StandardNormal.sample(rng); sigma * z });
        let len = v.norm();
        if len > 0.0 && len.is_finite() {
            return v / len;
        }
    }
}

/// Builds a half-Gaussian scene from a plain Gaussian file: both opacities
/// take the stored opacity and the normals are drawn per `normal_init`.
pub fn import_3dgs_table(table: &PointTable, normal_init: NormalInit, seed: u64) -> Result<Scene> {
    let c = columns(table)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prims = table
        .rows
        .iter()
        .map(|r| {
            let n = sample_normal(&mut rng, normal_init);
            primitive_from_row(r, &c, r[c.opacity], n)
        })
        .collect();
    Scene::new(prims, c.sh_degree, background(table)?)
}

pub fn import_3dgs(path: &Path, normal_init: NormalInit, seed: u64) -> Result<Scene> {
    import_3dgs_table(&read_points(path)?, normal_init, seed)
}

#[cfg(test)]
mod tests {
    use super::super::ply::parse_points;
    use super::*;
    use crate::geometry::logit;
    use rand::Rng;

    fn random_scene(seed: u64, degree: usize, n: usize) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prims = (0..n)
            .map(|_| HalfGaussianPrimitive {
                mu: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                log_scale: Vector3::from_fn(|_, _| rng.random_range(-3.0..0.0)),
                rotation: Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                sh_coeffs: (0..sh_coeff_count(degree))
                    .map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
                    .collect(),
                normal: Vector3::from_fn(|_, _| rng.random_range(0.1..1.0)),
                raw_opacity_a: logit(rng.random_range(0.01..0.99)),
                raw_opacity_b: logit(rng.random_range(0.01..0.99)),
            })
            .collect();
        Scene::new(prims, degree, Vector3::new(0.1, 1.0 / 3.0, 0.7)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for degree in 0..=3 {
            let s = random_scene(degree as u64, degree, 7);
            let back = scene_from_table(&parse_points(&scene_to_bytes(&s)).unwrap()).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn second_opacity_is_required() {
        let s = random_scene(1, 1, 3);
        let plain = encode(&s, false);
        let err = scene_from_table(&parse_points(&plain).unwrap()).unwrap_err();
        assert!(matches!(err, HgsError::MissingProperty(ref p) if p == "opacity_2"));
        let imported = import_3dgs_table(&parse_points(&plain).unwrap(), NormalInit::RandomUnit, 4).unwrap();
        for (a, b) in imported.primitives.iter().zip(&s.primitives) {
            assert_eq!(a.raw_opacity_a, b.raw_opacity_a);
            assert_eq!(a.raw_opacity_b, b.raw_opacity_a);
            assert_eq!(a.mu, b.mu);
            assert_eq!(a.sh_coeffs, b.sh_coeffs);
            assert!((a.normal.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn import_is_seeded() {
        let bytes = encode(&random_scene(2, 0, 5), false);
        let t = parse_points(&bytes).unwrap();
        for init in [NormalInit::ZeroPlusJitter, NormalInit::RandomUnit] {
            let a = import_3dgs_table(&t, init, 11).unwrap();
            let b = import_3dgs_table(&t, init, 11).unwrap();
            let c = import_3dgs_table(&t, init, 12).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn random_unit_normals_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample_normal(&mut rng, NormalInit::RandomUnit))
            .sum::<Vector3<f64>>()
            / n as f64;
        assert!(mean.norm() < 0.02, "{mean:?}");
    }

    #[test]
    fn missing_required_property() {
        let bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty double x\nend_header\n";
        assert!(matches!(
            scene_from_table(&parse_points(bytes).unwrap()),
            Err(HgsError::MissingProperty(p)) if p == "y"
        ));
    }
}
