//! Tabulated erf for the per-pixel loop.
//!
//! Cubic Hermite interpolation between exact values and slopes on a uniform
//! grid over `[0, 6]`; beyond that erf is ±1 to double precision, so
//! arguments are clamped to the last node, whose slope is stored as zero.
//! The interpolant is evaluated on `|x|` with the sign reapplied, so it is
//! exactly odd, and the backward pass uses its exact slope.

use std::sync::LazyLock;

use std::f64::consts::FRAC_2_SQRT_PI;

const STEPS_PER_UNIT: f64 = 128.0;
const LAST: usize = 768;
/// 1.5·2⁵²: adding it leaves the integer part in the low mantissa bits.
const ROUNDING_SHIFT: f64 = 6755399441055744.0;

pub(crate) struct ErfTable {
    /// Cubic coefficients in the local offset `t ∈ [0, 1]` for the interval
    /// starting at `xᵢ = i·h`; the last entry is the constant 1 used past the
    /// end of the grid.
    cubics: [[f64; 4]; LAST + 1],
}

static TABLE: LazyLock<ErfTable> = LazyLock::new(|| {
    let h = 1.0 / STEPS_PER_UNIT;
    // value and scaled slope at each node; the slope at the last node is
    // taken as zero so the clamped tail is flat
    let node = |i: usize| {
        let x = i as f64 * h;
        let d = if i < LAST { FRAC_2_SQRT_PI * (-x * x).exp() * h } else { 0.0 };
        (libm::erf(x), d)
    };
    let mut cubics = [[1.0, 0.0, 0.0, 0.0]; LAST + 1];
    for (i, c) in cubics.iter_mut().enumerate().take(LAST) {
        let ((f0, d0), (f1, d1)) = (node(i), node(i + 1));
        let df = f1 - f0;
        *c = [f0, d0, 3.0 * df - 2.0 * d0 - d1, d0 + d1 - 2.0 * df];
    }
    ErfTable { cubics }
});

impl ErfTable {
    pub fn get() -> &'static ErfTable {
        &TABLE
    }

    /// Interval containing `|x|` and the offset into it; NaN stays NaN.
    #[inline(always)]
    fn locate(&self, x: f64) -> (&[f64; 4], f64) {
        let u = x.abs() * STEPS_PER_UNIT;
        // written as a comparison so NaN passes through
        let u = if u > LAST as f64 { LAST as f64 } else { u };
        // round-to-nearest of u − ½ through the 2⁵² mantissa trick: a floor
        // that may land one interval low at exact nodes, which is still a
        // valid interval, and is cheaper than a saturating cast
        let i = (((u - 0.5) + ROUNDING_SHIFT).to_bits() as u32 as usize).min(LAST);
        (&self.cubics[i], u - i as f64)
    }

    #[inline(always)]
    pub fn eval(&self, x: f64) -> f64 {
        let (c, t) = self.locate(x);
        let v = c[0] + t * (c[1] + t * (c[2] + t * c[3]));
        v.copysign(x)
    }

    /// Derivative of `eval`; even in `x`.
    #[inline(always)]
    pub fn slope(&self, x: f64) -> f64 {
        let (c, t) = self.locate(x);
        (c[1] + t * (2.0 * c[2] + t * 3.0 * c[3])) * STEPS_PER_UNIT
    }
}
