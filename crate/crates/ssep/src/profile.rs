//! Initial macroscopic density profiles `ρ₀ : ℝ → [0, 1]`.
//!
//! A profile supplies pointwise values and first derivatives, smoothness
//! metadata (sup bounds of the first four derivatives where they exist),
//! and quadrature hints. The parametric families are
//!
//! * `constant` — equilibrium at density `value`;
//! * `linear-ramp` — affine transition between two plateaus;
//! * `smoothstep` — quintic (C²) polynomial transition;
//! * `tanh-front` — smooth front `½(l+r) + ½(r−l)·tanh((u−c)/w)`;
//! * `erf-front` — Gaussian-CDF front `l + (r−l)·Φ((u−c)/w)`, closed under
//!   the heat flow (the width evolves as `√(w² + 2t)`), which makes it the
//!   natural closed-form reference family;
//! * `tabulated` — piecewise-linear interpolation of knots, clamped to the
//!   end values outside the knot range.

use crate::special::{normal_cdf, normal_pdf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile parameter invalid: {0}")]
    InvalidParameter(String),
    #[error("profile value {value} at u = {u} lies outside [0, 1]")]
    OutOfRange { u: f64, value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    Constant {
        value: f64,
    },
    LinearRamp {
        left: f64,
        right: f64,
        start: f64,
        end: f64,
    },
    Smoothstep {
        left: f64,
        right: f64,
        center: f64,
        halfwidth: f64,
    },
    TanhFront {
        left: f64,
        right: f64,
        center: f64,
        width: f64,
    },
    ErfFront {
        left: f64,
        right: f64,
        center: f64,
        width: f64,
    },
    Tabulated {
        points: Vec<(f64, f64)>,
    },
}

/// Quintic smoothstep `x³(10 − 15x + 6x²)` on `[0, 1]`, clamped outside.
fn smoothstep5(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
    }
}

fn smoothstep5_deriv(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        30.0 * x * x * (1.0 - x) * (1.0 - x)
    }
}

impl Profile {
    /// `ρ₀(u)`.
    pub fn value(&self, u: f64) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::LinearRamp {
                left,
                right,
                start,
                end,
            } => {
                if u <= *start {
                    *left
                } else if u >= *end {
                    *right
                } else {
                    left + (right - left) * (u - start) / (end - start)
                }
            }
            Profile::Smoothstep {
                left,
                right,
                center,
                halfwidth,
            } => {
                let x = (u - (center - halfwidth)) / (2.0 * halfwidth);
                left + (right - left) * smoothstep5(x)
            }
            Profile::TanhFront {
                left,
                right,
                center,
                width,
            } => 0.5 * (left + right) + 0.5 * (right - left) * ((u - center) / width).tanh(),
            Profile::ErfFront {
                left,
                right,
                center,
                width,
            } => left + (right - left) * normal_cdf((u - center) / width),
            Profile::Tabulated { points } => {
                let first = points.first().expect("validated: nonempty");
                let last = points.last().expect("validated: nonempty");
                if u <= first.0 {
                    return first.1;
                }
                if u >= last.0 {
                    return last.1;
                }
                let i = points.partition_point(|&(x, _)| x <= u);
                let (x0, y0) = points[i - 1];
                let (x1, y1) = points[i];
                let y = y0 + (y1 - y0) * (u - x0) / (x1 - x0);
                y.clamp(0.0, 1.0)
            }
        }
    }

    /// `ρ₀′(u)` (the right derivative at kinks of piecewise families).
    pub fn derivative(&self, u: f64) -> f64 {
        match self {
            Profile::Constant { .. } => 0.0,
            Profile::LinearRamp {
                left,
                right,
                start,
                end,
            } => {
                if u < *start || u >= *end {
                    0.0
                } else {
                    (right - left) / (end - start)
                }
            }
            Profile::Smoothstep {
                left,
                right,
                center,
                halfwidth,
            } => {
                let x = (u - (center - halfwidth)) / (2.0 * halfwidth);
                (right - left) * smoothstep5_deriv(x) / (2.0 * halfwidth)
            }
            Profile::TanhFront {
                left,
                right,
                center,
                width,
            } => {
                let s = ((u - center) / width).cosh();
                0.5 * (right - left) / (width * s * s)
            }
            Profile::ErfFront {
                left,
                right,
                center,
                width,
            } => (right - left) * normal_pdf((u - center) / width) / width,
            Profile::Tabulated { points } => {
                let first = points.first().expect("validated: nonempty");
                let last = points.last().expect("validated: nonempty");
                if u < first.0 || u >= last.0 {
                    return 0.0;
                }
                let i = points.partition_point(|&(x, _)| x <= u);
                let (x0, y0) = points[i - 1];
                let (x1, y1) = points[i];
                (y1 - y0) / (x1 - x0)
            }
        }
    }

    /// Checks parameter sanity and that the range stays inside `[0, 1]`.
    pub fn validate(&self) -> Result<(), ProfileError> {
        let check01 = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) && v.is_finite() {
                Ok(())
            } else {
                Err(ProfileError::InvalidParameter(format!(
                    "{name} = {v} must lie in [0, 1]"
                )))
            }
        };
        match self {
            Profile::Constant { value } => check01("value", *value),
            Profile::LinearRamp {
                left,
                right,
                start,
                end,
            } => {
                check01("left", *left)?;
                check01("right", *right)?;
                if end <= start {
                    return Err(ProfileError::InvalidParameter(format!(
                        "ramp needs start < end, got [{start}, {end}]"
                    )));
                }
                Ok(())
            }
            Profile::Smoothstep {
                left,
                right,
                halfwidth,
                ..
            } => {
                check01("left", *left)?;
                check01("right", *right)?;
                if *halfwidth <= 0.0 {
                    return Err(ProfileError::InvalidParameter(format!(
                        "halfwidth = {halfwidth} must be positive"
                    )));
                }
                Ok(())
            }
            Profile::TanhFront {
                left, right, width, ..
            }
            | Profile::ErfFront {
                left, right, width, ..
            } => {
                check01("left", *left)?;
                check01("right", *right)?;
                if *width <= 0.0 {
                    return Err(ProfileError::InvalidParameter(format!(
                        "width = {width} must be positive"
                    )));
                }
                Ok(())
            }
            Profile::Tabulated { points } => {
                if points.len() < 2 {
                    return Err(ProfileError::InvalidParameter(
                        "tabulated profile needs at least two knots".into(),
                    ));
                }
                for w in points.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return Err(ProfileError::InvalidParameter(format!(
                            "tabulated knots must be strictly increasing, got {} then {}",
                            w[0].0, w[1].0
                        )));
                    }
                }
                for &(u, v) in points {
                    if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                        return Err(ProfileError::OutOfRange { u, value: v });
                    }
                }
                Ok(())
            }
        }
    }

    /// Asymptotic values `(ρ₀(−∞), ρ₀(+∞))`.
    pub fn limits(&self) -> (f64, f64) {
        match self {
            Profile::Constant { value } => (*value, *value),
            Profile::LinearRamp { left, right, .. }
            | Profile::Smoothstep { left, right, .. }
            | Profile::TanhFront { left, right, .. }
            | Profile::ErfFront { left, right, .. } => (*left, *right),
            Profile::Tabulated { points } => (points.first().unwrap().1, points.last().unwrap().1),
        }
    }

    /// Radius `R` such that `ρ₀` deviates from its asymptotic plateaus by at
    /// most ~1e−10 outside `[−R, R]`; used for window sizing.
    pub fn support_radius(&self) -> f64 {
        match self {
            Profile::Constant { .. } => 0.0,
            Profile::LinearRamp { start, end, .. } => start.abs().max(end.abs()),
            Profile::Smoothstep {
                center, halfwidth, ..
            } => center.abs() + halfwidth,
            // |tanh(12)| and Φ(−7) undershoot their limits by ≲ 1e−10.
            Profile::TanhFront { center, width, .. } => center.abs() + 12.0 * width,
            Profile::ErfFront { center, width, .. } => center.abs() + 7.0 * width,
            Profile::Tabulated { points } => points
                .first()
                .unwrap()
                .0
                .abs()
                .max(points.last().unwrap().0.abs()),
        }
    }

    /// Locations where the profile (or a derivative) has a kink; quadrature
    /// hints only.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Profile::Constant { .. } => vec![],
            Profile::LinearRamp { start, end, .. } => vec![*start, *end],
            Profile::Smoothstep {
                center, halfwidth, ..
            } => {
                vec![center - halfwidth, center + halfwidth]
            }
            Profile::TanhFront { center, .. } | Profile::ErfFront { center, .. } => vec![*center],
            Profile::Tabulated { points } => points.iter().map(|&(u, _)| u).collect(),
        }
    }

    /// Sup norm of the `order`-th derivative (`1 ≤ order ≤ 4`), or `+∞` where
    /// that derivative is only distributional. Conservative closed-form
    /// bounds; used as smoothness metadata, never in numerics.
    pub fn derivative_sup(&self, order: u32) -> f64 {
        assert!((1..=4).contains(&order), "derivative order must be 1..=4");
        match self {
            Profile::Constant { .. } => 0.0,
            Profile::LinearRamp {
                left,
                right,
                start,
                end,
            } => {
                let slope = ((right - left) / (end - start)).abs();
                if order == 1 {
                    slope
                } else if slope == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Profile::Smoothstep {
                left,
                right,
                halfwidth,
                ..
            } => {
                let amp = (right - left).abs();
                let h = 2.0 * halfwidth;
                // Sup norms of the quintic step on [0,1]: s′ ≤ 15/8,
                // s″ ≤ 10/√3, s‴ ≤ 60; s⁗ is distributional at the edges.
                match order {
                    1 => amp * 1.875 / h,
                    2 => amp * 5.773_502_691_896_258 / (h * h),
                    3 => amp * 60.0 / (h * h * h),
                    _ => {
                        if amp == 0.0 {
                            0.0
                        } else {
                            f64::INFINITY
                        }
                    }
                }
            }
            Profile::TanhFront {
                left, right, width, ..
            } => {
                let amp = 0.5 * (right - left).abs();
                // Sup norms of tanh⁽ᵏ⁾: 1, 4/(3√3), 2, ≈4.0859.
                let c = [1.0, 0.769_800_358_919_501, 2.0, 4.086];
                amp * c[(order - 1) as usize] / width.powi(order as i32)
            }
            Profile::ErfFront {
                left, right, width, ..
            } => {
                let amp = (right - left).abs();
                // Sup norms of φ⁽ᵏ⁾ for k = 0..3: φ(0), φ(1), φ(0), ≈0.5521.
                let c = [
                    0.398_942_280_401_432_7,
                    0.241_970_724_519_143_37,
                    0.398_942_280_401_432_7,
                    0.5521,
                ];
                amp * c[(order - 1) as usize] / width.powi(order as i32)
            }
            Profile::Tabulated { points } => {
                if order == 1 {
                    points
                        .windows(2)
                        .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
                        .fold(0.0, f64::max)
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}
