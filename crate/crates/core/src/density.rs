//! Scalar log densities used by the model log-joints.
//!
//! Gamma is parameterized by shape/rate and the inverse gamma by
//! shape/scale, so that `G(k, k/s)` has mean `s` and `IG(2, s)` has mean `s`.

use statrs::function::gamma::ln_gamma;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `log N(x | mean, var)`.
#[inline]
pub fn normal_ln(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln()) - 0.5 * d * d / var
}

/// `log G(x | shape, rate)`.
#[inline]
pub fn gamma_ln(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// `log IG(x | shape, scale)`.
#[inline]
pub fn inv_gamma_ln(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

/// Half-normal density on `x >= 0` with scale `sd`.
#[inline]
pub fn half_normal_ln(x: f64, sd: f64) -> f64 {
    std::f64::consts::LN_2 + normal_ln(x, 0.0, sd * sd)
}

/// Density on a variance `x` induced by a half-normal prior on `sqrt(x)`.
#[inline]
pub fn half_normal_on_sd_ln(x: f64, sd: f64) -> f64 {
    let s = x.sqrt();
    half_normal_ln(s, sd) - (2.0 * s).ln()
}

pub(crate) const fn ln_2pi() -> f64 {
    LN_2PI
}
