//! Brute-force reference for the paired line integral.
//!
//! The oracle integrates the piecewise Gaussian directly in world space with
//! adaptive Gauss–Kronrod quadrature and shares no code with the closed form
//! beyond the input types.

use nalgebra::{Matrix3, Vector3};

use super::{paired_weight, split_erf};
use crate::error::{HgsError, Result};
use crate::geometry::{frame_along, whiten_frame};

pub const ORACLE_TOLERANCE: f64 = 1e-10;
pub const ORACLE_MAX_LEVELS: u32 = 20;

/// Half-width of the integration window in standard deviations along the ray.
const WINDOW_SIGMAS: f64 = 8.0;

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One 15-point Kronrod rule and its embedded 7-point Gauss estimate.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let pair = f(c - x) + f(c + x);
        kronrod += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    (kronrod * h, gauss * h)
}

/// Adaptive Gauss–Kronrod integration by recursive bisection. The absolute
/// tolerance is distributed over subintervals in proportion to their length.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, max_levels: u32) -> Result<f64> {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, level: u32, max: u32) -> Option<f64> {
        let (k, g) = gk15(f, a, b);
        if (k - g).abs() <= tol {
            return Some(k);
        }
        if level >= max {
            return None;
        }
        let m = 0.5 * (a + b);
        Some(recurse(f, a, m, tol * 0.5, level + 1, max)? + recurse(f, m, b, tol * 0.5, level + 1, max)?)
    }
    if a == b {
        return Ok(0.0);
    }
    recurse(f, a, b, tol, 0, max_levels).ok_or(HgsError::QuadratureNonConvergence {
        tolerance: tol,
        levels: max_levels,
    })
}

/// Numerically integrates `α₁·HG⁺ + α₂·HG⁻` (unnormalized) along the ray
/// `origin + t·dir`, over ±8 standard deviations around the point of closest
/// Mahalanobis approach, to an absolute tolerance of at most 1e-10. The
/// window is split at the plane crossing so each piece is smooth.
pub fn oracle_line_integral(
    mu: &Vector3<f64>,
    sigma: &Matrix3<f64>,
    n: &Vector3<f64>,
    alpha1: f64,
    alpha2: f64,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Result<f64> {
    let inv = sigma.try_inverse().ok_or(HgsError::DegenerateFrame {
        condition: f64::INFINITY,
    })?;
    let d = dir.normalize();
    let p0 = origin - mu;
    let inv_d = inv * d;
    let dd = d.dot(&inv_d);
    let t0 = -p0.dot(&inv_d) / dd;
    let s = 1.0 / dd.sqrt();
    let (lo, hi) = (t0 - WINDOW_SIGMAS * s, t0 + WINDOW_SIGMAS * s);

    let f = |t: f64| {
        let x = p0 + d * t;
        let w = if n.dot(&x) >= 0.0 { alpha1 } else { alpha2 };
        w * (-0.5 * x.dot(&(inv * x))).exp()
    };

    // The absolute tolerance is tightened for rays that only graze the
    // Gaussian, so the oracle stays accurate relative to the integral itself.
    let peak = (-0.5 * (p0 + d * t0).dot(&(inv * (p0 + d * t0)))).exp() * alpha1.max(alpha2);
    let tol = ORACLE_TOLERANCE * peak.min(1.0).max(1e-6);

    let nd = n.dot(&d);
    let crossing = if nd != 0.0 { -n.dot(&p0) / nd } else { f64::NAN };
    if crossing > lo && crossing < hi {
        let left = integrate(&f, lo, crossing, tol * 0.5, ORACLE_MAX_LEVELS)?;
        let right = integrate(&f, crossing, hi, tol * 0.5, ORACLE_MAX_LEVELS)?;
        Ok(left + right)
    } else {
        integrate(&f, lo, hi, tol, ORACLE_MAX_LEVELS)
    }
}

/// The same integral through the closed form used by the rasterizer, in an
/// orthographic configuration: the ray direction becomes the third axis of a
/// rotated frame and the covariance is whitened there without dilation.
pub fn closed_form_line_integral(
    mu: &Vector3<f64>,
    sigma: &Matrix3<f64>,
    n: &Vector3<f64>,
    alpha1: f64,
    alpha2: f64,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Result<f64> {
    let (scale, g, e) = closed_form_factors(mu, sigma, n, origin, dir)?;
    Ok(scale * paired_weight(alpha1, alpha2, e, g))
}

/// `(√(2π)·L₃₃, g, erf)` such that the paired integral is
/// `√(2π)·L₃₃ · ½((α₁+α₂) + (α₁−α₂)·erf) · g`.
pub(crate) fn closed_form_factors(
    mu: &Vector3<f64>,
    sigma: &Matrix3<f64>,
    n: &Vector3<f64>,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Result<(f64, f64, f64)> {
    let q = frame_along(dir);
    let v = q.transpose() * sigma * q;
    let v = (v + v.transpose()) * 0.5;
    let frame = whiten_frame(&v, &(q.transpose() * n))?;
    let offset = (q.transpose() * (origin - mu)).xy();
    let u = frame.whiten2d * offset;
    // whitened 2D coordinates give the marginal quadratic form directly
    let g = (-0.5 * u.norm_squared()).exp();
    let e = split_erf(&frame.normal, &u);
    let l33 = frame.chol[(2, 2)];
    Ok(((2.0 * std::f64::consts::PI).sqrt() * l33, g, e))
}
