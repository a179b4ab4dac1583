//! Real spherical harmonics up to degree 3, in the ordering and sign
//! convention used by 3D Gaussian Splatting point files.

use nalgebra::Vector3;

pub const SH_C0: f64 = 0.28209479177387814;
pub const SH_C1: f64 = 0.4886025119029199;
pub const SH_C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
pub const SH_C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
];

pub const MAX_SH_DEGREE: usize = 3;

/// Basis values for one direction; only the first `(L+1)²` entries are used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShBasisValues {
    values: [f64; 16],
    len: usize,
}

impl ShBasisValues {
    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.len]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Evaluates the basis at a unit direction.
pub fn eval_sh_basis(dir: &Vector3<f64>, degree: usize) -> ShBasisValues {
    assert!(degree <= MAX_SH_DEGREE, "SH degree {degree} unsupported");
    let mut v = [0.0; 16];
    let len = (degree + 1) * (degree + 1);
    v[0] = SH_C0;
    if degree >= 1 {
        let (x, y, z) = (dir.x, dir.y, dir.z);
        v[1] = -SH_C1 * y;
        v[2] = SH_C1 * z;
        v[3] = -SH_C1 * x;
        if degree >= 2 {
            let (xx, yy, zz) = (x * x, y * y, z * z);
            let (xy, yz, xz) = (x * y, y * z, x * z);
            v[4] = SH_C2[0] * xy;
            v[5] = SH_C2[1] * yz;
            v[6] = SH_C2[2] * (2.0 * zz - xx - yy);
            v[7] = SH_C2[3] * xz;
            v[8] = SH_C2[4] * (xx - yy);
            if degree >= 3 {
                v[9] = SH_C3[0] * y * (3.0 * xx - yy);
                v[10] = SH_C3[1] * xy * z;
                v[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
                v[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
                v[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
                v[14] = SH_C3[5] * z * (xx - yy);
                v[15] = SH_C3[6] * x * (xx - 3.0 * yy);
            }
        }
    }
    ShBasisValues { values: v, len }
}

/// Partial derivatives of each basis function with respect to the three
/// direction components (treated as independent; the caller chains through
/// any normalization).
pub fn eval_sh_basis_grad(dir: &Vector3<f64>, degree: usize) -> [Vector3<f64>; 16] {
    let mut g = [Vector3::zeros(); 16];
    if degree == 0 {
        return g;
    }
    let (x, y, z) = (dir.x, dir.y, dir.z);
    g[1] = Vector3::new(0.0, -SH_C1, 0.0);
    g[2] = Vector3::new(0.0, 0.0, SH_C1);
    g[3] = Vector3::new(-SH_C1, 0.0, 0.0);
    if degree >= 2 {
        g[4] = Vector3::new(y, x, 0.0) * SH_C2[0];
        g[5] = Vector3::new(0.0, z, y) * SH_C2[1];
        g[6] = Vector3::new(-2.0 * x, -2.0 * y, 4.0 * z) * SH_C2[2];
        g[7] = Vector3::new(z, 0.0, x) * SH_C2[3];
        g[8] = Vector3::new(2.0 * x, -2.0 * y, 0.0) * SH_C2[4];
        if degree >= 3 {
            let (xx, yy, zz) = (x * x, y * y, z * z);
            g[9] = Vector3::new(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0) * SH_C3[0];
            g[10] = Vector3::new(y * z, x * z, x * y) * SH_C3[1];
            g[11] = Vector3::new(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z) * SH_C3[2];
            g[12] = Vector3::new(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy) * SH_C3[3];
            g[13] = Vector3::new(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z) * SH_C3[4];
            g[14] = Vector3::new(2.0 * x * z, -2.0 * y * z, xx - yy) * SH_C3[5];
            g[15] = Vector3::new(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0) * SH_C3[6];
        }
    }
    g
}

pub fn degree_for_count(count: usize) -> Option<usize> {
    (0..=MAX_SH_DEGREE).find(|d| (d + 1) * (d + 1) == count)
}

/// Linear SH color plus the 0.5 offset, before the zero floor.
pub fn eval_color_unclamped(sh_coeffs: &[Vector3<f64>], dir: &Vector3<f64>) -> Vector3<f64> {
    let degree = degree_for_count(sh_coeffs.len()).expect("coefficient count is not a square up to 16");
    let basis = eval_sh_basis(dir, degree);
    let mut c = Vector3::repeat(0.5);
    for (b, k) in basis.as_slice().iter().zip(sh_coeffs) {
        c += k * *b;
    }
    c
}

/// RGB color seen from direction `dir` (camera center towards the mean).
pub fn eval_color(sh_coeffs: &[Vector3<f64>], dir: &Vector3<f64>) -> Vector3<f64> {
    eval_color_unclamped(sh_coeffs, dir).map(|v| v.max(0.0))
}

/// DC coefficient that reproduces `rgb` under [`eval_color`].
pub fn rgb_to_dc(rgb: &Vector3<f64>) -> Vector3<f64> {
    (rgb - Vector3::repeat(0.5)) / SH_C0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_dir(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        let v: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        v.normalize()
    }

    #[test]
    fn basis_examples() {
        let b = eval_sh_basis(&Vector3::new(0.3, 0.4, 0.866), 0);
        assert_eq!(b.as_slice(), &[0.28209479177387814]);
        let b = eval_sh_basis(&Vector3::z(), 1);
        assert_eq!(&b.as_slice()[1..], &[-0.0, SH_C1, -0.0]);
    }

    /// Independent table: the same real SH written from the spherical-angle
    /// forms (Condon–Shortley phase folded into the 3D-GS signs).
    #[test]
    fn basis_matches_angle_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pi = std::f64::consts::PI;
        for _ in 0..200 {
            let d = random_dir(&mut rng);
            let theta = d.z.acos();
            let phi = d.y.atan2(d.x);
            let (st, ct) = (theta.sin(), theta.cos());
            let b = eval_sh_basis(&d, 3);
            let expect = [
                0.5 / pi.sqrt(),
                -(3.0 / (4.0 * pi)).sqrt() * st * phi.sin(),
                (3.0 / (4.0 * pi)).sqrt() * ct,
                -(3.0 / (4.0 * pi)).sqrt() * st * phi.cos(),
                0.25 * (15.0 / pi).sqrt() * st * st * (2.0 * phi).sin(),
                -0.5 * (15.0 / pi).sqrt() * st * ct * phi.sin(),
                0.25 * (5.0 / pi).sqrt() * (3.0 * ct * ct - 1.0),
                -0.5 * (15.0 / pi).sqrt() * st * ct * phi.cos(),
                0.25 * (15.0 / pi).sqrt() * st * st * (2.0 * phi).cos(),
                -0.25 * (35.0 / (2.0 * pi)).sqrt() * st.powi(3) * (3.0 * phi).sin(),
                0.25 * (105.0 / pi).sqrt() * st * st * ct * (2.0 * phi).sin(),
                -0.25 * (21.0 / (2.0 * pi)).sqrt() * st * (5.0 * ct * ct - 1.0) * phi.sin(),
                0.25 * (7.0 / pi).sqrt() * (5.0 * ct.powi(3) - 3.0 * ct),
                -0.25 * (21.0 / (2.0 * pi)).sqrt() * st * (5.0 * ct * ct - 1.0) * phi.cos(),
                0.25 * (105.0 / pi).sqrt() * st * st * ct * (2.0 * phi).cos(),
                -0.25 * (35.0 / (2.0 * pi)).sqrt() * st.powi(3) * (3.0 * phi).cos(),
            ];
            for (i, (g, e)) in b.as_slice().iter().zip(&expect).enumerate() {
                assert!((g - e).abs() < 1e-12, "basis {i}: {g} vs {e}");
            }
        }
    }

    #[test]
    fn monte_carlo_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let samples = 1_000_000;
        let mut gram = [[0.0f64; 16]; 16];
        for _ in 0..samples {
            let b = eval_sh_basis(&random_dir(&mut rng), 3);
            let v = b.as_slice();
            for i in 0..16 {
                for j in i..16 {
                    gram[i][j] += v[i] * v[j];
                }
            }
        }
        let area = 4.0 * std::f64::consts::PI;
        for i in 0..16 {
            for j in i..16 {
                let m = gram[i][j] * area / samples as f64;
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((m - target).abs() < 0.02, "<{i},{j}> = {m}");
            }
        }
    }

    #[test]
    fn basis_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let d = random_dir(&mut rng);
            let g = eval_sh_basis_grad(&d, 3);
            for axis in 0..3 {
                let h = 1e-6;
                let mut p = d;
                let mut m = d;
                p[axis] += h;
                m[axis] -= h;
                let (bp, bm) = (eval_sh_basis(&p, 3), eval_sh_basis(&m, 3));
                for k in 0..16 {
                    let fd = (bp.as_slice()[k] - bm.as_slice()[k]) / (2.0 * h);
                    assert!((fd - g[k][axis]).abs() < 1e-7, "basis {k} axis {axis}");
                }
            }
        }
    }

    #[test]
    fn color_examples() {
        let zero = vec![Vector3::zeros(); 4];
        assert_eq!(eval_color(&zero, &Vector3::z()), Vector3::repeat(0.5));
        let dc = vec![Vector3::repeat(0.25 / SH_C0)];
        assert!((eval_color(&dc, &Vector3::x()) - Vector3::repeat(0.75)).amax() < 1e-15);
        let mut band1 = vec![Vector3::zeros(); 4];
        band1[3] = Vector3::new(0.2, -0.1, 0.3);
        let d = Vector3::new(0.6, 0.0, 0.8);
        assert_ne!(eval_color(&band1, &d), eval_color(&band1, &-d));
        band1[3] = Vector3::zeros();
        assert_eq!(eval_color(&band1, &d), eval_color(&band1, &-d));
        assert!((rgb_to_dc(&Vector3::repeat(0.5))).amax() == 0.0);
    }

    #[test]
    fn degree_zero_ignores_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = vec![Vector3::new(0.3, -0.4, 1.2)];
        let first = eval_color(&c, &random_dir(&mut rng));
        for _ in 0..20 {
            assert_eq!(eval_color(&c, &random_dir(&mut rng)), first);
        }
    }

    #[test]
    fn color_is_linear_in_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_dir(&mut rng);
        let b = eval_sh_basis(&d, 3);
        for k in 0..16 {
            let mut c = vec![Vector3::zeros(); 16];
            c[k] = Vector3::new(1.0, 0.0, 0.0);
            let raw = eval_color_unclamped(&c, &d);
            assert!((raw.x - 0.5 - b.as_slice()[k]).abs() <= f64::EPSILON);
        }
    }
}
