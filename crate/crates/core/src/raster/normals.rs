use nalgebra::Vector3;

use super::RenderOutput;
use crate::image::Image;

const MIN_ALPHA: f64 = 0.5;

/// Surface normals estimated from the blended depth map.
///
/// Each pixel is back-projected with the camera intrinsics; tangents come from
/// central differences where both neighbors are covered and one-sided
/// differences otherwise. Normals face the camera (negative camera-space z
/// for a surface seen head-on). Pixels with `alpha < 0.5`, or without a
/// covered neighbor along either axis, get `(0, 0, 0)`.
pub fn render_depth_normalmap(out: &RenderOutput) -> Image {
    let (w, h) = (out.width(), out.height());
    let [fx, fy, cx, cy] = out.intrinsics;
    let covered = |x: usize, y: usize| out.alpha[y * w + x] >= MIN_ALPHA;
    let point = |x: usize, y: usize| {
        let z = out.depth[y * w + x];
        Vector3::new((x as f64 + 0.5 - cx) / fx * z, (y as f64 + 0.5 - cy) / fy * z, z)
    };
    // difference along one axis, `None` when no covered neighbor exists
    let tangent = |x: usize, y: usize, dx: bool| -> Option<Vector3<f64>> {
        let (lo, hi) = if dx {
            (
                (x > 0 && covered(x - 1, y)).then(|| (x - 1, y)),
                (x + 1 < w && covered(x + 1, y)).then(|| (x + 1, y)),
            )
        } else {
            (
                (y > 0 && covered(x, y - 1)).then(|| (x, y - 1)),
                (y + 1 < h && covered(x, y + 1)).then(|| (x, y + 1)),
            )
        };
        match (lo, hi) {
            (Some(a), Some(b)) => Some((point(b.0, b.1) - point(a.0, a.1)) * 0.5),
            (Some(a), None) => Some(point(x, y) - point(a.0, a.1)),
            (None, Some(b)) => Some(point(b.0, b.1) - point(x, y)),
            (None, None) => None,
        }
    };

    let mut img = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if !covered(x, y) {
                continue;
            }
            if let (Some(tx), Some(ty)) = (tangent(x, y, true), tangent(x, y, false)) {
                let n = ty.cross(&tx);
                let len = n.norm();
                if len > 0.0 {
                    let n = n / len;
                    img.set(x, y, [n.x, n.y, n.z]);
                }
            }
        }
    }
    img
}

/// Grayscale depth visualization: covered pixels map linearly from the
/// nearest (white) to the farthest (dark gray) depth; the rest stay black.
pub fn depth_to_image(out: &RenderOutput) -> Image {
    let (w, h) = (out.width(), out.height());
    let covered = |i: usize| out.alpha[i] >= MIN_ALPHA;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in (0..w * h).filter(|i| covered(*i)) {
        lo = lo.min(out.depth[i]);
        hi = hi.max(out.depth[i]);
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = Image::new(w, h);
    for i in (0..w * h).filter(|i| covered(*i)) {
        let v = 1.0 - 0.8 * (out.depth[i] - lo) / span;
        img.set(i % w, i / w, [v; 3]);
    }
    img
}

/// Maps unit normals to colors with `(n + 1) / 2`; zero normals stay black.
pub fn normals_to_image(normals: &Image) -> Image {
    let mut img = normals.clone();
    for px in img.data.chunks_mut(3) {
        if px.iter().any(|v| *v != 0.0) {
            px.iter_mut().for_each(|v| *v = 0.5 * (*v + 1.0));
        }
    }
    img
}
