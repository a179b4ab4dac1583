//! Half-Gaussian reconstruction kernel and its closed-form ray integral.
//!
//! A pair of half-Gaussians shares one ellipsoid split by a plane through the
//! center. Integrated along a viewing ray, each half contributes the projected
//! 2D Gaussian scaled by `(1 ± erf(·)) / 2`, where the erf argument depends on
//! the split normal in the whitened ray-space frame.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

pub mod oracle;

/// Below this `|n₃|` the split plane contains the viewing ray and the erf
/// factor is replaced by its sign limit.
pub const NORMAL_EPS: f64 = 1e-6;

/// Per-splat blend weight ceiling.
pub const MAX_WEIGHT: f64 = 0.99;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `nᵀ(x − μ) ≥ 0`, boundary included.
    Positive,
    Negative,
}

/// Unnormalized density of one half of a Gaussian.
pub fn half_gaussian_density(
    x: &Vector3<f64>,
    mu: &Vector3<f64>,
    sigma: &Matrix3<f64>,
    n: &Vector3<f64>,
    side: Side,
) -> f64 {
    let d = x - mu;
    let on_positive = n.dot(&d) >= 0.0;
    if on_positive != (side == Side::Positive) {
        return 0.0;
    }
    let inv = sigma
        .try_inverse()
        .expect("covariance must be positive definite");
    (-0.5 * d.dot(&(inv * d))).exp()
}

/// `erf((n₁u₁ + n₂u₂) / (√2 |n₃|))`, with the sign limit near `n₃ = 0`.
///
/// The magnitude of `n₃` is used so that the positive half (the one the
/// normal points into) always receives `(1 + erf)/2` of the mass, whichever
/// way the normal faces along the ray.
pub fn split_erf(n_ray: &Vector3<f64>, u: &Vector2<f64>) -> f64 {
    let s = n_ray.x * u.x + n_ray.y * u.y;
    let n3 = n_ray.z.abs();
    if n3 < NORMAL_EPS {
        if s > 0.0 {
            1.0
        } else if s < 0.0 {
            -1.0
        } else {
            0.0
        }
    } else {
        libm::erf(s / (SQRT_2 * n3))
    }
}

/// The `1 + erf(·)` factor, in `[0, 2]`.
pub fn erf_scale(n_ray: &Vector3<f64>, u: &Vector2<f64>) -> f64 {
    1.0 + split_erf(n_ray, u)
}

/// Combined weight of a pair given the split erf value and Gaussian factor.
/// With `alpha1 == alpha2` this is exactly `alpha1 * g`.
#[inline]
pub fn paired_weight(alpha1: f64, alpha2: f64, e: f64, g: f64) -> f64 {
    0.5 * ((alpha1 + alpha2) + (alpha1 - alpha2) * e) * g
}

/// Screen-space description of one projected pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatResponseParams {
    pub conic: Matrix2<f64>,
    pub mu_hat: Vector2<f64>,
    pub n_ray: Vector3<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub whiten2d: Matrix2<f64>,
}

impl SplatResponseParams {
    /// `exp(-½ dᵀ conic d)` for the pixel offset `d`.
    pub fn gaussian(&self, pixel: &Vector2<f64>) -> f64 {
        let d = pixel - self.mu_hat;
        gaussian_falloff(&self.conic, &d)
    }

    pub fn unclamped(&self, pixel: &Vector2<f64>) -> f64 {
        let d = pixel - self.mu_hat;
        let e = split_erf(&self.n_ray, &(self.whiten2d * d));
        paired_weight(self.alpha1, self.alpha2, e, gaussian_falloff(&self.conic, &d))
    }
}

#[inline]
pub(crate) fn gaussian_falloff(conic: &Matrix2<f64>, d: &Vector2<f64>) -> f64 {
    let q = conic[(0, 0)] * d.x * d.x + 2.0 * conic[(0, 1)] * d.x * d.y + conic[(1, 1)] * d.y * d.y;
    (-0.5 * q).exp()
}

/// Blend weight of a pair at a pixel, clamped to `[0, MAX_WEIGHT]`.
pub fn paired_response(p: &SplatResponseParams, pixel: &Vector2<f64>) -> f64 {
    p.unclamped(pixel).clamp(0.0, MAX_WEIGHT)
}

/// Axis-aligned form of the half integral: a Gaussian with per-axis standard
/// deviations, positive half only, integrated along z and scaled by
/// `2 / (2π)^{3/2}`:
///
/// `exp(-½(x²/σx² + y²/σy²)) · σz · (1 + erf(s / (√2 |n₃| σz))) / 2π`
/// with `s = n₁x + n₂y`.
pub fn general_sigma_integral(x: f64, y: f64, sx: f64, sy: f64, sz: f64, n: &Vector3<f64>) -> f64 {
    let g = (-0.5 * (x * x / (sx * sx) + y * y / (sy * sy))).exp();
    let s = n.x * x + n.y * y;
    // 1 + erf(a) == erfc(-a), without cancellation for very negative a
    let factor = libm::erfc(-s / (SQRT_2 * n.z.abs() * sz));
    g * sz * factor / (2.0 * std::f64::consts::PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Maclaurin series for erf, summed until terms vanish; alternating-sign
    /// cancellation limits it to about |x| ≤ 2 at double precision.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        let mut k = 0.0;
        loop {
            k += 1.0;
            term *= -x2 / k;
            let add = term / (2.0 * k + 1.0);
            sum += add;
            if add.abs() <= 1e-18 * sum.abs() {
                break;
            }
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    }

    fn params(n: Vector3<f64>, a1: f64, a2: f64) -> SplatResponseParams {
        SplatResponseParams {
            conic: Matrix2::new(0.04, 0.01, 0.01, 0.02),
            mu_hat: Vector2::new(10.0, 12.0),
            n_ray: n,
            alpha1: a1,
            alpha2: a2,
            whiten2d: Matrix2::new(0.2, 0.0, -0.05, 0.14),
        }
    }

    #[test]
    fn density_examples() {
        let mu = Vector3::new(0.1, 0.2, 0.3);
        let sigma = Matrix3::identity();
        let n = Vector3::new(0.0, 0.0, 1.0);
        assert_eq!(half_gaussian_density(&mu, &mu, &sigma, &n, Side::Positive), 1.0);
        assert_eq!(half_gaussian_density(&mu, &mu, &sigma, &n, Side::Negative), 0.0);
        let below = mu - Vector3::new(0.1, 0.0, 0.5);
        assert_eq!(half_gaussian_density(&below, &mu, &sigma, &n, Side::Positive), 0.0);
        let full = (-0.5 * (0.01 + 0.25f64)).exp();
        let sum = half_gaussian_density(&below, &mu, &sigma, &n, Side::Positive)
            + half_gaussian_density(&below, &mu, &sigma, &n, Side::Negative);
        assert!((sum - full).abs() < 1e-15);
    }

    #[test]
    fn erf_scale_examples() {
        assert_eq!(erf_scale(&Vector3::z(), &Vector2::new(3.0, -7.0)), 1.0);
        assert_eq!(erf_scale(&Vector3::new(1.0, 0.0, 1e-9), &Vector2::new(3.0, 0.0)), 2.0);
        let v = erf_scale(&Vector3::new(0.6, 0.0, 0.8), &Vector2::new(1.0, 0.0));
        let expect = 1.0 + erf_series(0.6 / (SQRT_2 * 0.8));
        assert!((v - expect).abs() < 1e-15, "{v} vs {expect}");
    }

    #[test]
    fn libm_erf_matches_series() {
        for i in -200..=200 {
            let x = i as f64 / 100.0;
            assert!((libm::erf(x) - erf_series(x)).abs() < 1e-14, "x = {x}");
        }
    }

    #[test]
    fn erf_scale_continuous_at_threshold() {
        for &s in &[-3.0, -1.0, 1e-4, 0.3, 2.0] {
            let u = Vector2::new(s, 0.0);
            // argument s / (√2 ε) is far beyond 5 for every s here
            let just_above = erf_scale(&Vector3::new(1.0, 0.0, NORMAL_EPS), &u);
            let just_below = erf_scale(&Vector3::new(1.0, 0.0, NORMAL_EPS * 0.999), &u);
            assert!((just_above - just_below).abs() < 1e-6);
        }
    }

    #[test]
    fn centered_response() {
        let p = params(Vector3::z(), 0.8, 0.2);
        assert_eq!(paired_response(&p, &p.mu_hat), 0.5);
    }

    #[test]
    fn general_sigma_examples() {
        let v = general_sigma_integral(0.0, 0.0, 1.0, 1.0, 1.0, &Vector3::z());
        assert!((v - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-16);
        let (x, y) = (0.7, -1.3);
        let v = general_sigma_integral(x, y, 1.0, 1.0, 1.0, &Vector3::z());
        let g = (-0.5 * (x * x + y * y)).exp() / (2.0 * std::f64::consts::PI);
        assert!((v - g).abs() < 1e-16);
    }

    fn unit3() -> impl Strategy<Value = Vector3<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("nonzero", |(a, b, c)| a * a + b * b + c * c > 1e-4)
            .prop_map(|(a, b, c)| Vector3::new(a, b, c).normalize())
    }

    proptest! {
        #[test]
        fn equal_opacities_reduce_to_gaussian(n in unit3(), a in 0.001..0.999f64, px in -30.0..50.0f64, py in -30.0..50.0f64) {
            let p = params(n, a, a);
            let pixel = Vector2::new(px, py);
            prop_assert_eq!(p.unclamped(&pixel), a * p.gaussian(&pixel));
        }

        #[test]
        fn odd_symmetry(n in unit3(), a1 in 0.001..0.999f64, a2 in 0.001..0.999f64, px in -30.0..50.0f64, py in -30.0..50.0f64) {
            let pixel = Vector2::new(px, py);
            let p = params(n, a1, a2);
            let q = params(-n, a2, a1);
            prop_assert_eq!(paired_response(&p, &pixel), paired_response(&q, &pixel));
        }

        #[test]
        fn monotone_in_opacities(n in unit3(), a1 in 0.001..0.9f64, a2 in 0.001..0.9f64, d in 0.0..0.09f64, px in -30.0..50.0f64, py in -30.0..50.0f64) {
            let pixel = Vector2::new(px, py);
            // nondecreasing up to rounding in the sum/difference form
            let base = paired_response(&params(n, a1, a2), &pixel) - 4.0 * f64::EPSILON;
            prop_assert!(paired_response(&params(n, a1 + d, a2), &pixel) >= base);
            prop_assert!(paired_response(&params(n, a1, a2 + d), &pixel) >= base);
        }

        #[test]
        fn response_in_range(n in unit3(), a1 in 0.0..1.0f64, a2 in 0.0..1.0f64, px in -30.0..50.0f64, py in -30.0..50.0f64) {
            let mut p = params(n, a1, a2);
            p.conic = Matrix2::identity() * 1e-6;
            let r = paired_response(&p, &Vector2::new(px, py));
            prop_assert!((0.0..=MAX_WEIGHT).contains(&r));
        }
    }
}
