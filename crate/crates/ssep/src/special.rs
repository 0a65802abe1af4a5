//! Scalar special functions shared by the quadrature and theory modules.
//!
//! Everything is expressed through the error function from `libm`; no other
//! special-function machinery is required. The heat kernel follows the
//! crate-wide convention that the semigroup is generated by the full
//! Laplacian, i.e. the Gaussian kernel at time `t` has variance `2t`.

use std::f64::consts::PI;

/// `1/√(2π)`.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density `φ(z) = e^{−z²/2}/√(2π)`.
pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal distribution function `Φ(z)`.
///
/// Uses `erfc` of the negated argument, which keeps full relative accuracy in
/// the far left tail where `1 − erf` would cancel.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Heat kernel `p_t(u, v) = (4πt)^{−1/2} exp(−(v−u)²/(4t))` of the semigroup
/// generated by `Δ` (Gaussian of variance `2t`).
///
/// `t = 0` returns `+∞` for `u = v` and `0` otherwise (the delta limit);
/// callers integrate against it only for `t > 0`.
pub fn heat_kernel(t: f64, u: f64, v: f64) -> f64 {
    if t <= 0.0 {
        return if u == v { f64::INFINITY } else { 0.0 };
    }
    let d = v - u;
    (-d * d / (4.0 * t)).exp() / (4.0 * PI * t).sqrt()
}

/// `P_start[B_t ≤ x]` for the Brownian motion attached to the `Δ`-semigroup
/// (variance `2t` at time `t`).
///
/// At `t = 0` this degenerates to the step function `1{start ≤ x}`.
pub fn brownian_cdf(t: f64, start: f64, x: f64) -> f64 {
    if t <= 0.0 {
        return if start <= x { 1.0 } else { 0.0 };
    }
    normal_cdf((x - start) / (2.0 * t).sqrt())
}
