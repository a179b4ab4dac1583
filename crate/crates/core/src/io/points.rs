//! Point-cloud ingestion and scene initialization.

use std::path::Path;

use nalgebra::{Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ply::{read_points, PointTable};
use super::scene::{sample_normal, NormalInit};
use crate::error::{HgsError, Result};
use crate::geometry::{logit, sh_coeff_count, HalfGaussianPrimitive, Scene};
use crate::sh::rgb_to_dc;

pub const INITIAL_OPACITY: f64 = 0.1;
pub const MIN_INITIAL_SCALE: f64 = 1e-7;
const NEIGHBORS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColoredPoint {
    pub position: Vector3<f64>,
    /// RGB in `[0, 1]`.
    pub color: Vector3<f64>,
}

/// Reads `x y z` and optional `red green blue` from a point file. Integer
/// colors are scaled by 1/255; missing colors default to mid gray.
pub fn points_from_table(table: &PointTable) -> Result<Vec<ColoredPoint>> {
    let x = table.column("x")?;
    let y = table.column("y")?;
    let z = table.column("z")?;
    let rgb = ["red", "green", "blue"].map(|n| table.header.index_of(n));
    let scale = match rgb[0].map(|i| table.header.properties[i].1) {
        Some(super::ply::ScalarType::F32 | super::ply::ScalarType::F64) => 1.0,
        Some(_) => 1.0 / 255.0,
        None => 1.0,
    };
    Ok(table
        .rows
        .iter()
        .map(|r| ColoredPoint {
            position: Vector3::new(r[x], r[y], r[z]),
            color: match rgb {
                [Some(a), Some(b), Some(c)] => Vector3::new(r[a], r[b], r[c]) * scale,
                _ => Vector3::repeat(0.5),
            },
        })
        .collect())
}

pub fn load_point_cloud(path: &Path) -> Result<Vec<ColoredPoint>> {
    points_from_table(&read_points(path)?)
}

/// Mean distance to the `NEIGHBORS` nearest other points, for every point.
/// Points are swept in x order so the search stops once the x gap alone
/// exceeds the current k-th best distance.
pub fn mean_neighbor_distance(points: &[Vector3<f64>]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|a, b| points[*a].x.total_cmp(&points[*b].x).then(a.cmp(b)));
    let mut out = vec![0.0; points.len()];
    for (rank, &i) in order.iter().enumerate() {
        let p = points[i];
        // squared distances, kept sorted ascending
        let mut best: Vec<f64> = Vec::with_capacity(NEIGHBORS + 1);
        let consider = |j: usize, best: &mut Vec<f64>| {
            let d2 = (points[j] - p).norm_squared();
            if best.len() < NEIGHBORS || d2 < best[best.len() - 1] {
                let at = best.partition_point(|v| *v <= d2);
                best.insert(at, d2);
                best.truncate(NEIGHBORS);
            }
        };
        let bound = |best: &Vec<f64>| if best.len() < NEIGHBORS { f64::INFINITY } else { best[NEIGHBORS - 1] };
        for &j in &order[rank + 1..] {
            let dx = points[j].x - p.x;
            if dx * dx > bound(&best) {
                break;
            }
            consider(j, &mut best);
        }
        for &j in order[..rank].iter().rev() {
            let dx = p.x - points[j].x;
            if dx * dx > bound(&best) {
                break;
            }
            consider(j, &mut best);
        }
        out[i] = if best.is_empty() {
            0.0
        } else {
            best.iter().map(|d| d.sqrt()).sum::<f64>() / best.len() as f64
        };
    }
    out
}

/// One primitive per point: isotropic scale from the nearest-neighbor
/// spacing, identity rotation, DC color from the point color, both opacities
/// 0.1 and a seeded random unit normal.
pub fn init_from_points(points: &[ColoredPoint], sh_degree: usize, seed: u64) -> Result<Scene> {
    if points.is_empty() {
        return Err(HgsError::EmptyPointCloud);
    }
    let pos: Vec<Vector3<f64>> = points.iter().map(|p| p.position).collect();
    let spacing = mean_neighbor_distance(&pos);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = sh_coeff_count(sh_degree);
    let raw = logit(INITIAL_OPACITY);
    let prims = points
        .iter()
        .zip(spacing)
        .map(|(p, d)| {
            let mut sh = vec![Vector3::zeros(); coeffs];
            sh[0] = rgb_to_dc(&p.color);
            HalfGaussianPrimitive {
                mu: p.position,
                log_scale: Vector3::repeat(d.max(MIN_INITIAL_SCALE).ln()),
                rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
                sh_coeffs: sh,
                normal: sample_normal(&mut rng, NormalInit::RandomUnit),
                raw_opacity_a: raw,
                raw_opacity_b: raw,
            }
        })
        .collect();
    Scene::new(prims, sh_degree, Vector3::zeros())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn gray(p: Vector3<f64>) -> ColoredPoint {
        ColoredPoint {
            position: p,
            color: Vector3::repeat(0.5),
        }
    }

    #[test]
    fn single_point_uses_floor() {
        let s = init_from_points(&[gray(Vector3::zeros())], 0, 1).unwrap();
        assert_eq!(s.primitives[0].log_scale, Vector3::repeat(MIN_INITIAL_SCALE.ln()));
        assert_eq!(s.primitives[0].sh_coeffs[0], Vector3::zeros());
        assert!((s.primitives[0].opacity_a() - 0.1).abs() < 1e-15);
        assert!(matches!(init_from_points(&[], 0, 1), Err(HgsError::EmptyPointCloud)));
    }

    #[test]
    fn grid_spacing() {
        let d = 0.25;
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                for k in 0..6 {
                    pts.push(gray(Vector3::new(i as f64, j as f64, k as f64) * d));
                }
            }
        }
        let s = init_from_points(&pts, 1, 2).unwrap();
        for p in &s.primitives {
            assert!((p.log_scale.x - d.ln()).abs() < 1e-12);
            assert_eq!(p.sh_coeffs.len(), 4);
        }
    }

    #[test]
    fn sweep_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vector3<f64>> = (0..300)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let fast = mean_neighbor_distance(&pts);
        for (i, p) in pts.iter().enumerate() {
            let mut d: Vec<f64> = pts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| (q - p).norm())
                .collect();
            d.sort_by(f64::total_cmp);
            let brute = d[..3].iter().sum::<f64>() / 3.0;
            assert!((fast[i] - brute).abs() < 1e-12);
        }
    }
}
