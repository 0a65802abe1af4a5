//! Quadrature evaluation of the limiting Gaussian covariances.
//!
//! The scaling limits of the density field, the bond current, and the tagged
//! particle are Gaussian processes with explicit covariances built from the
//! heat semigroup `T_t` (variance-`2t` Gaussian convolution, see
//! [`crate::special`]), the compressibility `χ_r(x) = χ(ρ(r,x))`, and — for
//! the current and the tagged particle — Brownian-passage probabilities.
//! This module evaluates those formulas numerically so that Monte Carlo
//! estimates can be tested against them:
//!
//! * [`ou_covariance`] — the density-field covariance
//!   `E[Y_t(H)Y_s(G)]`, in two algebraically equivalent forms whose
//!   numerical agreement is itself a correctness check;
//! * [`current_covariance`] — `E[Z_sZ_t]` for the normalized current
//!   through a bond at macroscopic position `u`;
//! * [`tagged_covariance`] — `E[W_sW_t]` for the normalized tagged-particle
//!   position around its macroscopic path `u_t`;
//! * [`semigroup_apply`] — closed-form `T_tG` and `∇T_tG` for the compactly
//!   supported piecewise-linear test-function family;
//! * [`ramp_mse_envelope`] — the theoretical envelope for how fast the ramp
//!   approximation of the current converges in mean square.
//!
//! Every numeric result carries an estimated quadrature error in
//! [`CovValue`]. Inner time integrals with an integrable `(s−r)^{−1/2}`
//! endpoint singularity (kernel-squared integrands) are computed under the
//! substitution `r = s − q²`, which removes the singularity exactly.

use crate::pde::{self, PdeError};
use crate::profile::Profile;
use crate::quad::{self, QuadError};
use crate::special::{normal_cdf, normal_pdf};
use crate::testfn::TestFn;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use thiserror::Error;

/// Default absolute tolerance for the outer covariance quadratures.
pub const DEFAULT_QUAD_TOL: f64 = 1e-8;
/// Gaussian factors are truncated at this many standard deviations.
pub const DEFAULT_TRUNCATION_RADIUS: f64 = 8.0;
/// Heat flows shorter than this are treated as the identity.
const TIME_EPS: f64 = 1e-14;
/// Lower clamp for the substituted time variable `q = √(s−r)`; the neglected
/// slice `[0, Q_MIN]` has an integrand bounded by a few times `χ`, so the
/// omitted mass stays below every tolerance in use. The clamp also keeps the
/// smoothing times `q²` well above [`TIME_EPS`], where a semigroup
/// application would degenerate to the identity and hand the integrand an
/// almost-everywhere derivative instead of the `q → 0` kernel limit.
const Q_MIN: f64 = 1e-6;
/// Densities below this cannot normalize the tagged-particle covariance.
const DENSITY_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum GaussError {
    #[error("time arguments out of order: need s ≤ t, got s = {s}, t = {t}")]
    ArgumentOrder { s: f64, t: f64 },
    #[error("test function is not a valid member of the piecewise-linear family")]
    UnsupportedFunction,
    #[error(
        "density degenerate at (t = {t}, u = {u}): value {density:e} cannot \
         normalize the tagged-particle covariance"
    )]
    DegenerateDensity { t: f64, u: f64, density: f64 },
    #[error("field evaluation failed: {0}")]
    Pde(#[from] PdeError),
    #[error("quadrature failure: {0}")]
    Quadrature(#[from] QuadError),
}

/// A covariance value together with its estimated quadrature error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovValue {
    pub value: f64,
    pub quad_error: f64,
}

impl CovValue {
    pub const ZERO: CovValue = CovValue {
        value: 0.0,
        quad_error: 0.0,
    };
}

/// Which algebraic form of the density-field covariance to evaluate.
///
/// `Original` pairs the smoothed function with the bare one and integrates
/// `2(∂_uρ)²` over time; `PartsIntegrated` moves the smoothing onto both
/// functions and integrates gradient pairs against `χ_r`. The two agree
/// analytically; their numerical agreement is a standing invariant.
///
/// Cost note: at equal times the `PartsIntegrated` time integrand multiplies
/// the gradients of two barely smoothed functions, and for a pair of
/// indicators that is a product of coincident near-δ kernels the adaptive
/// quadrature must resolve scale by scale — expect seconds to minutes.
/// `Original` keeps one factor unsmoothed and stays cheap there; for
/// strictly ordered times both forms are fast.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceForm {
    Original,
    PartsIntegrated,
}

/// Immutable evaluation context: the initial profile plus quadrature policy.
///
/// The compressibility `χ_r(x)` is evaluated through the exact heat flow of
/// the profile — at `r = 0` directly from the profile, with no grid or
/// interpolation anywhere.
#[derive(Clone, Debug)]
pub struct KernelContext {
    profile: Profile,
    pub quad_tol: f64,
    pub truncation_radius: f64,
}

impl KernelContext {
    pub fn new(profile: Profile) -> Result<Self, GaussError> {
        profile.validate().map_err(PdeError::from)?;
        Ok(KernelContext {
            profile,
            quad_tol: DEFAULT_QUAD_TOL,
            truncation_radius: DEFAULT_TRUNCATION_RADIUS,
        })
    }

    pub fn with_quad_tol(mut self, tol: f64) -> Self {
        assert!(tol > 0.0);
        self.quad_tol = tol;
        self
    }

    pub fn with_truncation_radius(mut self, radius: f64) -> Self {
        assert!(radius > 0.0);
        self.truncation_radius = radius;
        self
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    /// `χ_r(x) = χ(ρ(r,x))` on the continuum solution.
    pub fn chi(&self, r: f64, x: f64) -> Result<f64, PdeError> {
        pde::chi_at(&self.profile, r, x)
    }

    /// `χ₀` straight from the initial profile (exact, no quadrature).
    pub fn chi0(&self, x: f64) -> f64 {
        pde::chi(self.profile.value(x))
    }
}

/// Collects the first failure raised inside quadrature integrands, which
/// must return plain numbers; the failing evaluation contributes `0` and the
/// error is rethrown after integration.
struct ErrorSink(RefCell<Option<PdeError>>);

impl ErrorSink {
    fn new() -> Self {
        ErrorSink(RefCell::new(None))
    }

    fn eval(&self, r: Result<f64, PdeError>) -> f64 {
        match r {
            Ok(v) => v,
            Err(e) => {
                self.0.borrow_mut().get_or_insert(e);
                0.0
            }
        }
    }

    fn check(self) -> Result<(), GaussError> {
        match self.0.into_inner() {
            Some(e) => Err(GaussError::Pde(e)),
            None => Ok(()),
        }
    }
}

// ---------------------------------------------------------------------------
// Heat semigroup on the test-function family
// ---------------------------------------------------------------------------

/// `T_tG` for a piecewise-linear `G`: closed form via the normal CDF/pdf,
/// with a matching closed-form gradient.
#[derive(Clone, Debug)]
pub struct SmoothedFn {
    /// (a, b, slope, intercept) per original piece.
    pieces: Vec<(f64, f64, f64, f64)>,
    /// (location, right-minus-left jump) of the original function.
    jumps: Vec<(f64, f64)>,
    /// Kernel scale √(2t); zero means the identity.
    scale: f64,
    original: TestFn,
}

impl SmoothedFn {
    /// `(T_tG)(u)`.
    pub fn value(&self, u: f64) -> f64 {
        if self.scale == 0.0 {
            return self.original.value(u);
        }
        let s = self.scale;
        self.pieces
            .iter()
            .map(|&(a, b, slope, intercept)| {
                let alpha = (a - u) / s;
                let beta = (b - u) / s;
                (slope * u + intercept) * (normal_cdf(beta) - normal_cdf(alpha))
                    + slope * s * (normal_pdf(alpha) - normal_pdf(beta))
            })
            .sum()
    }

    /// `(∇T_tG)(u)`: slope masses plus one kernel term per jump of `G`.
    ///
    /// At `t = 0` the jump terms would be point masses; the gradient then
    /// reports only the piecewise slope (callers weight this limit by a
    /// factor vanishing at least as fast).
    pub fn gradient(&self, u: f64) -> f64 {
        if self.scale == 0.0 {
            return self
                .original
                .pieces()
                .iter()
                .find(|p| p.a <= u && u < p.b)
                .map_or(0.0, |p| p.slope);
        }
        let s = self.scale;
        let slopes: f64 = self
            .pieces
            .iter()
            .map(|&(a, b, slope, _)| slope * (normal_cdf((b - u) / s) - normal_cdf((a - u) / s)))
            .sum();
        let kernels: f64 = self
            .jumps
            .iter()
            .map(|&(x, jump)| jump * normal_pdf((x - u) / s) / s)
            .sum();
        slopes + kernels
    }
}

/// Applies the heat semigroup to a test function. Only validated members of
/// the compactly supported piecewise-linear family are accepted; anything
/// else (e.g. a hand-built or deserialized value with overlapping pieces)
/// is rejected rather than silently integrated.
pub fn semigroup_apply(g: &TestFn, t: f64) -> Result<SmoothedFn, GaussError> {
    if !g.is_valid() {
        return Err(GaussError::UnsupportedFunction);
    }
    assert!(t >= 0.0, "heat flow runs forward");
    let scale = if t <= TIME_EPS { 0.0 } else { (2.0 * t).sqrt() };
    Ok(SmoothedFn {
        pieces: g
            .pieces()
            .iter()
            .map(|p| (p.a, p.b, p.slope, p.intercept))
            .collect(),
        jumps: g.jumps(),
        scale,
        original: g.clone(),
    })
}

// ---------------------------------------------------------------------------
// Density-field covariance
// ---------------------------------------------------------------------------

fn support_bounds(h: &TestFn, g: &TestFn) -> Option<(f64, f64)> {
    match (h.support(), g.support()) {
        (None, None) => None,
        (Some(a), None) | (None, Some(a)) => Some(a),
        (Some((a, b)), Some((c, d))) => Some((a.min(c), b.max(d))),
    }
}

fn kink_hints(ctx: &KernelContext, h: &TestFn, g: &TestFn) -> Vec<f64> {
    let mut cuts = ctx.profile.breakpoints();
    cuts.extend(h.kinks());
    cuts.extend(g.kinks());
    cuts
}

/// `E[Y_t(H)Y_s(G)]`, the stationary-increment Gaussian field covariance,
/// for `0 ≤ s ≤ t`.
///
/// `Original` evaluates
/// `∫(T_{t−s}H)·G·χ_s − ∫₀ˢdr ∫(T_{t−r}H)(T_{s−r}G)·2(∂_uρ(r,·))²`;
/// `PartsIntegrated` evaluates
/// `∫(T_tH)(T_sG)·χ₀ + 2∫₀ˢdr ∫(∇T_{t−r}H)(∇T_{s−r}G)·χ_r`.
pub fn ou_covariance(
    ctx: &KernelContext,
    h: &TestFn,
    g: &TestFn,
    s: f64,
    t: f64,
    form: CovarianceForm,
) -> Result<CovValue, GaussError> {
    if s > t {
        return Err(GaussError::ArgumentOrder { s, t });
    }
    assert!(s >= 0.0, "times must be nonnegative");
    if !h.is_valid() || !g.is_valid() {
        return Err(GaussError::UnsupportedFunction);
    }
    let Some((lo, hi)) = support_bounds(h, g) else {
        return Ok(CovValue::ZERO);
    };
    let radius = ctx.truncation_radius * (2.0 * t).sqrt().max(1e-3);
    let (xa, xb) = (
        lo.min(-ctx.profile.support_radius()) - radius,
        hi.max(ctx.profile.support_radius()) + radius,
    );
    let cuts = kink_hints(ctx, h, g);
    let tol = ctx.quad_tol;
    let inner_tol = tol * 0.05;
    let sink = ErrorSink::new();

    let (static_term, static_err) = match form {
        CovarianceForm::Original => {
            // ∫ (T_{t−s}H)(u) G(u) χ_s(u) du over the support of G.
            let th = semigroup_apply(h, t - s)?;
            let Some((ga, gb)) = g.support() else {
                return Ok(CovValue::ZERO);
            };
            let f = |u: f64| th.value(u) * g.value(u) * sink.eval(ctx.chi(s, u));
            let r = quad::integrate_with_breakpoints(f, ga, gb, &cuts, tol * 0.5)?;
            (r.value, r.error)
        }
        CovarianceForm::PartsIntegrated => {
            // ∫ (T_tH)(u) (T_sG)(u) χ₀(u) du; χ₀ comes straight from ρ₀.
            let th = semigroup_apply(h, t)?;
            let tg = semigroup_apply(g, s)?;
            let f = |u: f64| th.value(u) * tg.value(u) * ctx.chi0(u);
            let r = quad::integrate_with_breakpoints(f, xa, xb, &cuts, tol * 0.5)?;
            (r.value, r.error)
        }
    };

    let (dynamic_term, dynamic_err) = if s <= Q_MIN * Q_MIN {
        (0.0, 0.0)
    } else {
        match form {
            CovarianceForm::Original => {
                // −∫₀ˢ dr ∫ (T_{t−r}H)(T_{s−r}G) · 2(∂_uρ(r,u))² du under
                // r = s − q². The substitution turns the √(s−r) endpoint cusp
                // of the r-integrand into a linear one and, critically, lets
                // the smoothing times be computed as (t−s)+q² and q² exactly
                // — forming s − r near r = s would reduce the kernel scale to
                // pure rounding noise.
                let dt = t - s;
                let outer = |q: f64| {
                    let q2 = q * q;
                    let r = (s - q2).max(0.0);
                    let th = semigroup_apply(h, dt + q2).expect("validated above");
                    let tg = semigroup_apply(g, q2).expect("validated above");
                    let f = |u: f64| {
                        let d = sink.eval(pde::heat_exact_derivative(&ctx.profile, r, u));
                        th.value(u) * tg.value(u) * 2.0 * d * d
                    };
                    let inner = quad::integrate_with_breakpoints(f, xa, xb, &cuts, inner_tol)
                        .map(|v| v.value)
                        .unwrap_or_else(|e| {
                            sink.eval(Err(PdeError::Quadrature(e)));
                            0.0
                        });
                    2.0 * q * inner
                };
                let r = quad::integrate(outer, Q_MIN, s.sqrt(), tol * 0.5)?;
                (-r.value, r.error + s * inner_tol)
            }
            CovarianceForm::PartsIntegrated => {
                // 2∫₀ˢ dr ∫ (∇T_{t−r}H)(∇T_{s−r}G) χ_r du with r = s − q²:
                // the gradient of a smoothed jump behaves like
                // (s−r)^{−1/2} near r = s, which the substitution absorbs.
                // As above, the smoothing times come straight from q.
                let dt = t - s;
                let outer = |q: f64| {
                    let q2 = q * q;
                    let r = (s - q2).max(0.0);
                    let th = semigroup_apply(h, dt + q2).expect("validated above");
                    let tg = semigroup_apply(g, q2).expect("validated above");
                    let f = |u: f64| th.gradient(u) * tg.gradient(u) * sink.eval(ctx.chi(r, u));
                    let inner = quad::integrate_with_breakpoints(f, xa, xb, &cuts, inner_tol)
                        .map(|v| v.value)
                        .unwrap_or_else(|e| {
                            sink.eval(Err(PdeError::Quadrature(e)));
                            0.0
                        });
                    4.0 * q * inner
                };
                let r = quad::integrate(outer, Q_MIN, s.sqrt(), tol * 0.5)?;
                (r.value, r.error + s * inner_tol)
            }
        }
    };

    sink.check()?;
    Ok(CovValue {
        value: static_term + dynamic_term,
        quad_error: static_err + dynamic_err,
    })
}

// ---------------------------------------------------------------------------
// Current covariance
// ---------------------------------------------------------------------------

/// Expectation of `f` under `N(mean, variance)` by quadrature in the
/// standardized variable; below machine variance it collapses to `f(mean)`.
fn gaussian_expectation(
    f: &dyn Fn(f64) -> f64,
    mean: f64,
    variance: f64,
    radius: f64,
    tol: f64,
) -> Result<f64, QuadError> {
    if variance < 1e-16 {
        return Ok(f(mean));
    }
    let sigma = variance.sqrt();
    let g = |z: f64| normal_pdf(z) * f(mean + sigma * z);
    Ok(quad::integrate(g, -radius, radius, tol)?.value)
}

/// Shared three-term covariance of two "current-like" Gaussian variables
/// read at `(s, B_s from start_s)` and `(t, B_t from start_t)`, with the
/// half-line split at the origin:
///
/// `∫_{−∞}^0 P_{s}[B≤x] P_{t}[B≤x] χ₀(x)dx
///  + ∫_0^∞ P_{s}[B≥x] P_{t}[B≥x] χ₀(x)dx
///  + 2∫₀ˢdr ∫ p_{t−r}(start_t,x) p_{s−r}(start_s,x) χ_r(x)dx`.
///
/// `chi_shift` translates every χ argument (used for a bond away from the
/// origin); the kernel product is reduced to a single Gaussian expectation
/// via `p_a(w,x)p_b(v,x) = p_{a+b}(w,v)·N(x; m, V)` with `V = 2ab/(a+b)`,
/// and the time integral runs in the substituted variable `q = √(s−r)`.
fn passage_covariance(
    ctx: &KernelContext,
    s: f64,
    t: f64,
    start_s: f64,
    start_t: f64,
    chi_shift: f64,
) -> Result<CovValue, GaussError> {
    if s > t {
        return Err(GaussError::ArgumentOrder { s, t });
    }
    assert!(s >= 0.0, "times must be nonnegative");
    if s <= TIME_EPS {
        return Ok(CovValue::ZERO);
    }
    let tol = ctx.quad_tol;
    let inner_tol = tol * 0.05;
    let radius = ctx.truncation_radius;
    let sig_s = (2.0 * s).sqrt();
    let sig_t = (2.0 * t).sqrt();
    let sink = ErrorSink::new();

    let mut cuts: Vec<f64> = ctx
        .profile
        .breakpoints()
        .iter()
        .map(|b| b - chi_shift)
        .collect();
    cuts.push(start_s);
    cuts.push(start_t);

    // Left half-line: both passage probabilities fall off below the starts.
    let x_lo = (start_s - radius * sig_s)
        .min(start_t - radius * sig_t)
        .min(0.0);
    let left = |x: f64| {
        normal_cdf((x - start_s) / sig_s)
            * normal_cdf((x - start_t) / sig_t)
            * ctx.chi0(x + chi_shift)
    };
    let t1 = quad::integrate_with_breakpoints(left, x_lo, 0.0, &cuts, tol * 0.25)?;

    // Right half-line, with the complementary probabilities.
    let x_hi = (start_s + radius * sig_s)
        .max(start_t + radius * sig_t)
        .max(0.0);
    let right = |x: f64| {
        normal_cdf((start_s - x) / sig_s)
            * normal_cdf((start_t - x) / sig_t)
            * ctx.chi0(x + chi_shift)
    };
    let t2 = quad::integrate_with_breakpoints(right, 0.0, x_hi, &cuts, tol * 0.25)?;

    // Time term: 2∫₀ˢ p_{a+b}(start_t, start_s)·E_{N(m,V)}[χ_r(·+shift)] dr
    // with a = t−r, b = s−r, under r = s − q². The gap lengths are computed
    // through q itself — b is exactly q² and a is (t−s)+q² — because forming
    // t − (s − q²) loses all significant digits of q² once q² ≪ s, and that
    // jitter is what the adaptive quadrature would otherwise chase.
    let dt = t - s;
    let outer = |q: f64| {
        let q2 = q * q;
        let r = (s - q2).max(0.0);
        let a = dt + q2;
        let b = q2;
        let tau = a + b;
        let kernel = (4.0 * std::f64::consts::PI * tau).sqrt().recip()
            * (-(start_t - start_s) * (start_t - start_s) / (4.0 * tau)).exp();
        let (m, v) = if a + b <= 1e-300 {
            (start_s, 0.0)
        } else {
            ((start_t * b + start_s * a) / (a + b), 2.0 * a * b / (a + b))
        };
        let f = |x: f64| sink.eval(ctx.chi(r, x + chi_shift));
        let e = gaussian_expectation(&f, m, v, radius, inner_tol).unwrap_or_else(|err| {
            sink.eval(Err(PdeError::Quadrature(err)));
            0.0
        });
        4.0 * q * kernel * e
    };
    let t3 = quad::integrate(outer, Q_MIN, s.sqrt(), tol * 0.5)?;

    sink.check()?;
    Ok(CovValue {
        value: t1.value + t2.value + t3.value,
        quad_error: t1.error + t2.error + t3.error + s * inner_tol,
    })
}

/// `E[Z_sZ_t]` for the normalized current through the bond at macroscopic
/// position `u`, `0 ≤ s ≤ t`. For `u ≠ 0` every χ argument is translated by
/// `−u` while the Brownian factors and the half-line split stay at the
/// origin (translation covariance of the dynamics).
pub fn current_covariance(
    ctx: &KernelContext,
    s: f64,
    t: f64,
    u: f64,
) -> Result<CovValue, GaussError> {
    passage_covariance(ctx, s, t, 0.0, 0.0, u)
}

/// Closed-form current covariance for a constant profile:
/// `E[Z_sZ_t] = (χ/√π)(√s + √t − √(t−s))`, hence `E[Z_t²] = 2χ√(t/π)` —
/// the `√t` scaling of the equilibrium fluctuations.
pub fn equilibrium_current_covariance(chi_value: f64, s: f64, t: f64) -> f64 {
    let (s, t) = if s <= t { (s, t) } else { (t, s) };
    chi_value / std::f64::consts::PI.sqrt() * (s.sqrt() + t.sqrt() - (t - s).sqrt())
}

// ---------------------------------------------------------------------------
// Tagged-particle covariance
// ---------------------------------------------------------------------------

/// `E[W_sW_t]` for the normalized tagged-particle position, `0 ≤ s ≤ t`.
///
/// Evaluates the three-term display with Brownian motions started from the
/// macroscopic path points `u_s`, `u_t`, kernels `p_{t−r}(u_t,·)`,
/// `p_{s−r}(u_s,·)`, untranslated χ, and the half-line split at the origin,
/// then divides by `ρ(s,u_s)·ρ(t,u_t)`.
pub fn tagged_covariance(ctx: &KernelContext, s: f64, t: f64) -> Result<CovValue, GaussError> {
    if s > t {
        return Err(GaussError::ArgumentOrder { s, t });
    }
    if s <= TIME_EPS {
        return Ok(CovValue::ZERO);
    }
    let path = pde::lln_path(&ctx.profile, &[s, t])?;
    let (u_s, u_t) = (path[0], path[1]);
    let rho_s = pde::heat_exact(&ctx.profile, s, u_s)?;
    let rho_t = pde::heat_exact(&ctx.profile, t, u_t)?;
    for (time, u, rho) in [(s, u_s, rho_s), (t, u_t, rho_t)] {
        if rho < DENSITY_FLOOR {
            return Err(GaussError::DegenerateDensity {
                t: time,
                u,
                density: rho,
            });
        }
    }
    let raw = passage_covariance(ctx, s, t, u_s, u_t, 0.0)?;
    let norm = rho_s * rho_t;
    Ok(CovValue {
        value: raw.value / norm,
        quad_error: raw.quad_error / norm,
    })
}

// ---------------------------------------------------------------------------
// Ramp approximation envelope
// ---------------------------------------------------------------------------

/// Theoretical envelope for the mean-square error of approximating the
/// normalized current by the ramp field increment `Y_t(G_n) − Y_0(G_n)`:
/// a martingale term bounded by `t/n` plus a two-point-correlation term
/// bounded by `c0·t^{5/2}/n²`. The constant `c0` is existential; harness
/// tests fit it and check the shape, never a specific value.
pub fn ramp_mse_envelope(t: f64, n: u32, c0: f64) -> f64 {
    assert!(t >= 0.0 && n >= 1);
    let nf = f64::from(n);
    t / nf + c0 * t.powf(2.5) / (nf * nf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::brownian_cdf;
    use approx::assert_abs_diff_eq;

    fn tanh_front() -> Profile {
        Profile::TanhFront {
            left: 0.3,
            right: 0.7,
            center: 0.0,
            width: 0.5,
        }
    }

    fn erf_front() -> Profile {
        Profile::ErfFront {
            left: 0.3,
            right: 0.7,
            center: 0.0,
            width: 0.5,
        }
    }

    fn equilibrium() -> KernelContext {
        KernelContext::new(Profile::Constant { value: 0.5 }).unwrap()
    }

    #[test]
    fn semigroup_identity_at_time_zero() {
        let g = TestFn::ramp(4);
        let tg = semigroup_apply(&g, 0.0).unwrap();
        for u in [-1.0, 0.0, 1.3, 2.0, 5.0] {
            assert_eq!(tg.value(u), g.value(u));
        }
    }

    #[test]
    fn smoothed_value_matches_brute_convolution() {
        let g = TestFn::ramp(2);
        let t = 0.7;
        let tg = semigroup_apply(&g, t).unwrap();
        let s = (2.0 * t).sqrt();
        for u in [-1.5, 0.0, 0.8, 2.5] {
            // Integrate over the support only, so the jump at 0 and the kink
            // at 2 sit on grid boundaries; the midpoint rule is otherwise
            // only first-order accurate at a discontinuity.
            let m = 200_000;
            let (a, b) = (0.0, 2.0);
            let h = (b - a) / m as f64;
            let mut brute = 0.0;
            for i in 0..m {
                let v = a + (i as f64 + 0.5) * h;
                brute += normal_pdf((v - u) / s) / s * g.value(v) * h;
            }
            assert_abs_diff_eq!(tg.value(u), brute, epsilon = 1e-8);
        }
    }

    #[test]
    fn smoothed_gradient_matches_finite_difference() {
        let g = TestFn::indicator(-0.5, 1.0);
        let t = 0.4;
        let tg = semigroup_apply(&g, t).unwrap();
        let h = 1e-6;
        for u in [-1.0, -0.5, 0.2, 1.0, 1.7] {
            let fd = (tg.value(u + h) - tg.value(u - h)) / (2.0 * h);
            assert_abs_diff_eq!(tg.gradient(u), fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn smoothed_ramp_tends_to_passage_probability() {
        // As n grows, T_tG_n(u) approaches P_u[B_t ≥ 0].
        let t = 1.0;
        let tg = semigroup_apply(&TestFn::ramp(64), t).unwrap();
        for u in [-1.0, 0.0, 1.0] {
            let limit = 1.0 - brownian_cdf(t, u, 0.0);
            assert!((tg.value(u) - limit).abs() < 0.05, "u = {u}");
        }
        assert!(
            tg.value(-30.0).abs() < 1e-12,
            "decay far left of the support"
        );
    }

    #[test]
    fn invalid_test_function_is_rejected() {
        // Overlapping pieces can only arise from deserialized input; the
        // evaluator must refuse them.
        let bad: TestFn = serde_json::from_str(
            r#"{"pieces":[{"a":0.0,"b":2.0,"slope":0.0,"intercept":1.0},
                          {"a":1.0,"b":3.0,"slope":0.0,"intercept":1.0}]}"#,
        )
        .unwrap();
        assert!(matches!(
            semigroup_apply(&bad, 0.5),
            Err(GaussError::UnsupportedFunction)
        ));
        let ctx = equilibrium();
        assert!(matches!(
            ou_covariance(
                &ctx,
                &bad,
                &TestFn::ramp(2),
                0.1,
                0.2,
                CovarianceForm::Original
            ),
            Err(GaussError::UnsupportedFunction)
        ));
    }

    #[test]
    fn kernel_mass_inside_truncation_radius() {
        let ctx = equilibrium();
        let t: f64 = 0.8;
        let s = (2.0 * t).sqrt();
        let radius = ctx.truncation_radius * s;
        let f = |x: f64| normal_pdf(x / s) / s;
        let mass = quad::integrate(f, -radius, radius, 1e-12).unwrap().value;
        assert_abs_diff_eq!(mass, 1.0, epsilon = ctx.quad_tol);
    }

    #[test]
    fn ou_trivial_cases() {
        let ctx = equilibrium();
        let zero = TestFn::zero();
        let g = TestFn::ramp(2);
        for form in [CovarianceForm::Original, CovarianceForm::PartsIntegrated] {
            let c = ou_covariance(&ctx, &zero, &g, 0.2, 0.5, form).unwrap();
            assert_eq!(c.value, 0.0);
        }
        // s = t = 0 reduces to ∫HGχ₀; for H = G = G_2 at χ = 1/4 this is
        // |G_2|²/4 = (2/3)/4.
        let c = ou_covariance(&ctx, &g, &g, 0.0, 0.0, CovarianceForm::Original).unwrap();
        assert_abs_diff_eq!(c.value, g.l2_norm_sq() / 4.0, epsilon = 1e-8);
        assert!(matches!(
            ou_covariance(&ctx, &g, &g, 0.5, 0.2, CovarianceForm::Original),
            Err(GaussError::ArgumentOrder { .. })
        ));
    }

    #[test]
    fn ou_forms_agree_in_equilibrium() {
        // In equilibrium the dynamic term of the original form vanishes
        // identically, so it reduces to χ∫(T_{t−s}H)G; the parts-integrated
        // form reaches the same number through two nontrivial terms.
        let ctx = equilibrium();
        let cases = [
            (TestFn::ramp(2), TestFn::ramp(2), 0.5, 1.0),
            (TestFn::indicator(-1.0, 1.0), TestFn::ramp(4), 0.25, 0.25),
            (TestFn::ramp(8), TestFn::indicator(0.0, 2.0), 0.0, 1.0),
        ];
        for (h, g, s, t) in cases {
            let a = ou_covariance(&ctx, &h, &g, s, t, CovarianceForm::Original).unwrap();
            let b = ou_covariance(&ctx, &h, &g, s, t, CovarianceForm::PartsIntegrated).unwrap();
            assert_abs_diff_eq!(a.value, b.value, epsilon = 5e-7);
        }
    }

    #[test]
    fn ou_forms_agree_out_of_equilibrium() {
        let ctx = KernelContext::new(erf_front()).unwrap();
        let h = TestFn::ramp(2);
        let g = TestFn::indicator(-1.0, 0.5);
        let a = ou_covariance(&ctx, &h, &g, 0.25, 0.5, CovarianceForm::Original).unwrap();
        let b = ou_covariance(&ctx, &h, &g, 0.25, 0.5, CovarianceForm::PartsIntegrated).unwrap();
        assert_abs_diff_eq!(a.value, b.value, epsilon = 1e-6);
        assert!(a.quad_error >= 0.0 && b.quad_error >= 0.0);
    }

    #[test]
    fn equilibrium_field_variance_is_chi_times_l2_norm() {
        // Var Y_t(G) = χ∫G² for every t in equilibrium.
        let ctx = equilibrium();
        let g = TestFn::ramp(4);
        for t in [0.0, 0.5] {
            let c = ou_covariance(&ctx, &g, &g, t, t, CovarianceForm::PartsIntegrated).unwrap();
            assert_abs_diff_eq!(c.value, 0.25 * g.l2_norm_sq(), epsilon = 1e-6);
        }
    }

    #[test]
    fn current_covariance_trivial_and_ordering() {
        let ctx = equilibrium();
        assert_eq!(
            current_covariance(&ctx, 0.0, 1.0, 0.0).unwrap(),
            CovValue::ZERO
        );
        assert!(matches!(
            current_covariance(&ctx, 1.0, 0.5, 0.0),
            Err(GaussError::ArgumentOrder { .. })
        ));
    }

    #[test]
    fn current_covariance_matches_equilibrium_closed_form() {
        let ctx = equilibrium();
        let chi = 0.25;
        for (s, t) in [(1.0, 1.0), (0.25, 1.0), (0.5, 2.0)] {
            let c = current_covariance(&ctx, s, t, 0.0).unwrap();
            let exact = equilibrium_current_covariance(chi, s, t);
            assert_abs_diff_eq!(c.value, exact, epsilon = 1e-6);
        }
        // Scale invariance of the variance: E[Z_t²]/√t is constant.
        let ratios: Vec<f64> = [0.25, 0.5, 1.0, 2.0]
            .iter()
            .map(|&t| current_covariance(&ctx, t, t, 0.0).unwrap().value / t.sqrt())
            .collect();
        for r in &ratios[1..] {
            assert_abs_diff_eq!(*r, ratios[0], epsilon = 1e-3 * ratios[0]);
        }
    }

    #[test]
    fn translated_bond_equals_translated_profile() {
        // Reading the current at u ≠ 0 must equal reading it at the origin
        // of the profile shifted by u.
        let u = 0.6;
        let ctx = KernelContext::new(tanh_front()).unwrap();
        let shifted = KernelContext::new(Profile::TanhFront {
            left: 0.3,
            right: 0.7,
            center: -u,
            width: 0.5,
        })
        .unwrap();
        let a = current_covariance(&ctx, 0.25, 1.0, u).unwrap();
        let b = current_covariance(&shifted, 0.25, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(a.value, b.value, epsilon = 1e-6);
    }

    #[test]
    fn tagged_covariance_reduces_to_current_in_equilibrium() {
        for rho in [0.5, 0.3] {
            let ctx = KernelContext::new(Profile::Constant { value: rho }).unwrap();
            let w = tagged_covariance(&ctx, 0.25, 1.0).unwrap();
            let z = current_covariance(&ctx, 0.25, 1.0, 0.0).unwrap();
            assert_abs_diff_eq!(w.value, z.value / (rho * rho), epsilon = 1e-5);
        }
        let ctx = equilibrium();
        assert_eq!(tagged_covariance(&ctx, 0.0, 0.7).unwrap(), CovValue::ZERO);
    }

    #[test]
    fn degenerate_density_is_reported() {
        let ctx = KernelContext::new(Profile::Constant { value: 0.0 }).unwrap();
        assert!(matches!(
            tagged_covariance(&ctx, 0.5, 1.0),
            Err(GaussError::DegenerateDensity { .. }) | Err(GaussError::Pde(_))
        ));
    }

    /// Jacobi eigenvalue iteration for small symmetric matrices; test-only.
    /// Index loops mirror the usual statement of the rotation updates.
    #[allow(clippy::needless_range_loop)]
    fn symmetric_eigenvalues(mut m: Vec<Vec<f64>>) -> Vec<f64> {
        let n = m.len();
        for _ in 0..100 {
            let mut p = 0;
            let mut q = 1;
            let mut best = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    if m[i][j].abs() > best {
                        best = m[i][j].abs();
                        p = i;
                        q = j;
                    }
                }
            }
            if best < 1e-14 {
                break;
            }
            let theta = 0.5 * (2.0 * m[p][q]).atan2(m[p][p] - m[q][q]);
            let (c, s) = (theta.cos(), theta.sin());
            for k in 0..n {
                let (a, b) = (m[p][k], m[q][k]);
                m[p][k] = c * a + s * b;
                m[q][k] = -s * a + c * b;
            }
            for k in 0..n {
                let (a, b) = (m[k][p], m[k][q]);
                m[k][p] = c * a + s * b;
                m[k][q] = -s * a + c * b;
            }
        }
        (0..n).map(|i| m[i][i]).collect()
    }

    #[test]
    fn covariance_matrices_are_positive_semidefinite() {
        let times: [f64; 4] = [0.25, 0.5, 1.0, 2.0];
        let ctx = equilibrium();
        let mut zmat = vec![vec![0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                let (s, t) = (times[i].min(times[j]), times[i].max(times[j]));
                zmat[i][j] = current_covariance(&ctx, s, t, 0.0).unwrap().value;
            }
        }
        for ev in symmetric_eigenvalues(zmat) {
            assert!(ev > -1e-8, "current covariance eigenvalue {ev}");
        }

        let ctx = KernelContext::new(erf_front()).unwrap();
        let times: [f64; 2] = [0.25, 1.0];
        let mut wmat = vec![vec![0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let (s, t) = (times[i].min(times[j]), times[i].max(times[j]));
                wmat[i][j] = tagged_covariance(&ctx, s, t).unwrap().value;
            }
        }
        for ev in symmetric_eigenvalues(wmat) {
            assert!(ev > -1e-8, "tagged covariance eigenvalue {ev}");
        }
    }

    #[test]
    fn ramp_envelope_shape() {
        assert_eq!(ramp_mse_envelope(0.0, 4, 1.0), 0.0);
        let t = 1.0;
        let e4 = ramp_mse_envelope(t, 4, 1.0);
        let e8 = ramp_mse_envelope(t, 8, 1.0);
        // Dominated by t/n: halves to leading order when n doubles.
        assert!(e8 < 0.6 * e4 && e8 > 0.4 * e4);
    }
}
