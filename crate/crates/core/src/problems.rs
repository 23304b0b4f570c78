//! Builtin problems.
//!
//! Each constructor returns a [`Problem`]: the SDDE, a truncation policy
//! suited to it, scheme settings, and the closed-form terminal value where
//! one exists.

use std::fmt;
use std::sync::Arc;

use crate::model::{BelowRange, Coefficient, ModelError, Partial, ProblemSpec, TruncationPolicy};
use crate::scheme::SchemeConfig;

#[derive(Clone)]
pub struct Problem {
    pub name: &'static str,
    pub spec: ProblemSpec,
    pub policy: TruncationPolicy,
    pub scheme: SchemeConfig,
    /// Terminal value `x(T)` as a function of `B(T)`, when known.
    pub exact: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("spec", &self.spec)
            .field("policy", &self.policy)
            .field("scheme", &self.scheme)
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

pub const BUILTINS: [&str; 4] = ["paper_example", "gbm", "linear_delay", "superlinear"];

/// `ζ_t = [t(1−t)]^{3/4}`, taken as 0 outside `[0, 1]`.
pub fn zeta(t: f64) -> f64 {
    (t * (1.0 - t)).max(0.0).powf(0.75)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Settings for [`paper_example_with`].
#[derive(Debug, Clone)]
pub struct PaperExample {
    pub delay: f64,
    pub initial: Coefficient,
    pub theta: f64,
    pub k1: f64,
}

impl Default for PaperExample {
    fn default() -> Self {
        PaperExample {
            delay: 0.25,
            initial: Coefficient::native(|t, _, _| 0.5 + 0.1 * t),
            theta: 0.5,
            k1: 8.0,
        }
    }
}

/// The super-linear benchmark on `[0, 1]`:
///
/// ```text
/// f(t,x,y) = |y|^{5/4}/8 − 5x³ + 2ζ_t x
/// g(t,x,y) = |x|^{3/2}/2 + ζ_t y
/// ```
///
/// with `Λ(w) = 5w³`, `α(Δ) = Δ^{-1/8}`, `K₀ = 5`, and Λ inverted below its
/// range (radius `(α/5)^{1/3}`, which is below 1 for all usable steps).
/// Default delay 0.25, `ξ(t) = 0.5 + 0.1t`, `θ = 0.5`, `K₁ = 8`.
pub fn paper_example() -> Problem {
    paper_example_with(PaperExample::default()).expect("default settings are valid")
}

pub fn paper_example_with(p: PaperExample) -> Result<Problem, ModelError> {
    let spec = ProblemSpec::builder()
        .drift(Coefficient::native(|t, x, y| {
            y.abs().powf(1.25) / 8.0 - 5.0 * x * x * x + 2.0 * zeta(t) * x
        }))
        .diffusion(Coefficient::native(|t, x, y| 0.5 * x.abs().powf(1.5) + zeta(t) * y))
        .partial(Partial::F1, Coefficient::native(|t, x, _| -15.0 * x * x + 2.0 * zeta(t)))
        .partial(
            Partial::F2,
            Coefficient::native(|_, _, y| 1.25 / 8.0 * y.abs().powf(0.25) * sign(y)),
        )
        .partial(Partial::F11, Coefficient::native(|_, x, _| -30.0 * x))
        .partial(Partial::F12, Coefficient::constant(0.0))
        .partial(
            Partial::F22,
            Coefficient::native(|_, _, y| 1.25 * 0.25 / 8.0 * y.abs().powf(-0.75)),
        )
        .partial(Partial::G1, Coefficient::native(|_, x, _| 0.75 * x.abs().sqrt() * sign(x)))
        .partial(Partial::G2, Coefficient::native(|t, _, _| zeta(t)))
        .partial(Partial::G11, Coefficient::native(|_, x, _| 0.375 / x.abs().sqrt()))
        .partial(Partial::G12, Coefficient::constant(0.0))
        .partial(Partial::G22, Coefficient::constant(0.0))
        .delay(p.delay)
        .horizon(1.0)
        .initial_segment(p.initial)
        .growth_beta(2.0)
        .build()?;
    let policy = TruncationPolicy::power_law(5.0, 3.0, 0.125, 5.0)?.with_below_range(BelowRange::Invert);
    Ok(Problem {
        name: "paper_example",
        spec,
        policy,
        scheme: SchemeConfig::default().with_theta(p.theta).with_k1(p.k1),
        exact: None,
    })
}

/// `Λ(w) = w`, `α(Δ) = 10⁶·Δ^{-1/4}`: a radius of at least 10⁶ for linear problems.
pub fn wide_policy() -> TruncationPolicy {
    TruncationPolicy::new(|w| w, |u| u, |dt| 1e6 * dt.powf(-0.25), 1e6).expect("valid policy")
}

/// Geometric Brownian motion `dx = μx dt + σx dB` written as an SDDE with no
/// delay dependence. `x(T) = x₀ exp((μ − σ²/2)T + σB(T))`.
pub fn gbm(mu: f64, sigma: f64, x0: f64, delay: f64, horizon: f64) -> Result<Problem, ModelError> {
    let spec = ProblemSpec::builder()
        .drift(Coefficient::native(move |_, x, _| mu * x))
        .diffusion(Coefficient::native(move |_, x, _| sigma * x))
        .drift_dx(Coefficient::constant(mu))
        .diffusion_dx(Coefficient::constant(sigma))
        .diffusion_dy(Coefficient::constant(0.0))
        .delay(delay)
        .horizon(horizon)
        .constant_initial(x0)
        .build()?;
    let exact = move |b: f64| x0 * ((mu - 0.5 * sigma * sigma) * horizon + sigma * b).exp();
    Ok(Problem {
        name: "gbm",
        spec,
        policy: wide_policy(),
        scheme: SchemeConfig::default().with_k1(mu.max(0.0)),
        exact: Some(Arc::new(exact)),
    })
}

/// `f = a·x + b·y`, `g = c·x + d·y`.
#[allow(clippy::too_many_arguments)]
pub fn linear_delay(
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    delay: f64,
    horizon: f64,
    initial: Coefficient,
) -> Result<Problem, ModelError> {
    let spec = ProblemSpec::builder()
        .drift(Coefficient::native(move |_, x, y| a * x + b * y))
        .diffusion(Coefficient::native(move |_, x, y| c * x + d * y))
        .partial(Partial::F1, Coefficient::constant(a))
        .partial(Partial::F2, Coefficient::constant(b))
        .partial(Partial::G1, Coefficient::constant(c))
        .partial(Partial::G2, Coefficient::constant(d))
        .delay(delay)
        .horizon(horizon)
        .initial_segment(initial)
        .build()?;
    let k1 = a + 0.5 * b.abs() + (c.abs() + d.abs()).powi(2);
    Ok(Problem {
        name: "linear_delay",
        spec,
        policy: wide_policy(),
        scheme: SchemeConfig::default().with_k1(k1.max(0.0)),
        exact: None,
    })
}

/// `f = −5x³ + x`, `g = x²`, `ξ ≡ x₀`, delay 0.25, `T = 1`.
///
/// Explicit schemes without truncation blow up on it at coarse steps.
/// The policy is `Λ(w) = 6w³`, `α(Δ) = Δ^{-1/8}` with Λ inverted below range.
pub fn superlinear(x0: f64) -> Result<Problem, ModelError> {
    let spec = ProblemSpec::builder()
        .drift(Coefficient::native(|_, x, _| -5.0 * x * x * x + x))
        .diffusion(Coefficient::native(|_, x, _| x * x))
        .drift_dx(Coefficient::native(|_, x, _| -15.0 * x * x + 1.0))
        .diffusion_dx(Coefficient::native(|_, x, _| 2.0 * x))
        .diffusion_dy(Coefficient::constant(0.0))
        .delay(0.25)
        .horizon(1.0)
        .constant_initial(x0)
        .growth_beta(2.0)
        .build()?;
    let policy = TruncationPolicy::power_law(6.0, 3.0, 0.125, 6.0)?.with_below_range(BelowRange::Invert);
    Ok(Problem {
        name: "superlinear",
        spec,
        policy,
        scheme: SchemeConfig::default().with_k1(1.0),
        exact: None,
    })
}
