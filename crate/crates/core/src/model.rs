//! Problem description, truncation policy and truncated coefficient evaluation.
//!
//! A scalar delay equation `dx = f(t, x(t), x(t-τ)) dt + g(t, x(t), x(t-τ)) dB`
//! is described by a [`ProblemSpec`]. Coefficients are plain callables or
//! parsed [`Expr`](crate::expr::Expr) trees; both go through [`Coefficient`].
//!
//! Super-linear coefficients are tamed by evaluating them at radially clamped
//! arguments. The clamp radius depends on the step size through a
//! [`TruncationPolicy`]: `r(Δ) = Λ⁻¹(α(Δ))`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::expr::{EvalError, Expr};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{name} evaluated to a non-finite value at t={t}, x={x}, y={y}")]
    NonFinite {
        name: &'static str,
        t: f64,
        x: f64,
        y: f64,
    },
    #[error("{name} at t={t}, x={x}, y={y}: {source}")]
    Expr {
        name: &'static str,
        t: f64,
        x: f64,
        y: f64,
        source: EvalError,
    },
    #[error("partial derivative {0} is not supplied and finite differences are disabled")]
    MissingPartial(Partial),
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("truncation policy returned a non-finite value: {0}")]
    Policy(String),
    #[error("grid: {0}")]
    Grid(String),
}

/// A scalar coefficient `c(t, x, y)`.
#[derive(Clone)]
pub enum Coefficient {
    Native(Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>),
    Parsed(Arc<Expr>),
}

impl Coefficient {
    pub fn native<F>(f: F) -> Self
    where
        F: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    {
        Coefficient::Native(Arc::new(f))
    }

    pub fn parsed(e: Expr) -> Self {
        Coefficient::Parsed(Arc::new(e))
    }

    pub fn constant(c: f64) -> Self {
        Coefficient::native(move |_, _, _| c)
    }

    /// Evaluates and rejects non-finite results; `name` is used for the error location.
    pub fn eval(&self, name: &'static str, t: f64, x: f64, y: f64) -> Result<f64, ModelError> {
        let v = match self {
            Coefficient::Native(f) => f(t, x, y),
            Coefficient::Parsed(e) => e.eval(t, x, y).map_err(|source| ModelError::Expr {
                name,
                t,
                x,
                y,
                source,
            })?,
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ModelError::NonFinite { name, t, x, y })
        }
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Native(_) => f.write_str("Coefficient::Native(..)"),
            Coefficient::Parsed(e) => write!(f, "Coefficient::Parsed({e})"),
        }
    }
}

/// Partial derivatives of `f` and `g` with respect to the state arguments.
/// Index 1 is the current state `x`, index 2 the delayed state `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Partial {
    F1,
    F2,
    F11,
    F12,
    F22,
    G1,
    G2,
    G11,
    G12,
    G22,
}

impl Partial {
    pub const ALL: [Partial; 10] = [
        Partial::F1,
        Partial::F2,
        Partial::F11,
        Partial::F12,
        Partial::F22,
        Partial::G1,
        Partial::G2,
        Partial::G11,
        Partial::G12,
        Partial::G22,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Partial::F1 => "f_x",
            Partial::F2 => "f_y",
            Partial::F11 => "f_xx",
            Partial::F12 => "f_xy",
            Partial::F22 => "f_yy",
            Partial::G1 => "g_x",
            Partial::G2 => "g_y",
            Partial::G11 => "g_xx",
            Partial::G12 => "g_xy",
            Partial::G22 => "g_yy",
        }
    }

    fn base_is_drift(self) -> bool {
        matches!(
            self,
            Partial::F1 | Partial::F2 | Partial::F11 | Partial::F12 | Partial::F22
        )
    }

    /// Number of x- and y-derivatives taken.
    fn orders(self) -> (u8, u8) {
        match self {
            Partial::F1 | Partial::G1 => (1, 0),
            Partial::F2 | Partial::G2 => (0, 1),
            Partial::F11 | Partial::G11 => (2, 0),
            Partial::F12 | Partial::G12 => (1, 1),
            Partial::F22 | Partial::G22 => (0, 2),
        }
    }
}

impl fmt::Display for Partial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Central finite-difference step used when partials are not supplied.
pub fn fd_step(x: f64) -> f64 {
    f64::max(1e-6, 1e-6 * x.abs())
}

/// The scalar SDDE together with its initial segment.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    drift: Coefficient,
    diffusion: Coefficient,
    partials: BTreeMap<Partial, Coefficient>,
    delay: f64,
    horizon: f64,
    initial_segment: Coefficient,
    growth_beta: f64,
    finite_difference: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ProblemBuilder {
    drift: Option<Coefficient>,
    diffusion: Option<Coefficient>,
    partials: BTreeMap<Partial, Coefficient>,
    delay: Option<f64>,
    horizon: Option<f64>,
    initial_segment: Option<Coefficient>,
    growth_beta: f64,
    finite_difference: bool,
}

impl ProblemBuilder {
    pub fn drift(mut self, c: Coefficient) -> Self {
        self.drift = Some(c);
        self
    }

    pub fn diffusion(mut self, c: Coefficient) -> Self {
        self.diffusion = Some(c);
        self
    }

    pub fn diffusion_dx(self, c: Coefficient) -> Self {
        self.partial(Partial::G1, c)
    }

    pub fn diffusion_dy(self, c: Coefficient) -> Self {
        self.partial(Partial::G2, c)
    }

    pub fn drift_dx(self, c: Coefficient) -> Self {
        self.partial(Partial::F1, c)
    }

    pub fn partial(mut self, p: Partial, c: Coefficient) -> Self {
        self.partials.insert(p, c);
        self
    }

    pub fn delay(mut self, tau: f64) -> Self {
        self.delay = Some(tau);
        self
    }

    pub fn horizon(mut self, t: f64) -> Self {
        self.horizon = Some(t);
        self
    }

    /// The initial segment `ξ` on `[-τ, 0]`; only the `t` argument is used.
    pub fn initial_segment(mut self, c: Coefficient) -> Self {
        self.initial_segment = Some(c);
        self
    }

    pub fn constant_initial(self, v: f64) -> Self {
        self.initial_segment(Coefficient::constant(v))
    }

    pub fn growth_beta(mut self, beta: f64) -> Self {
        self.growth_beta = beta;
        self
    }

    /// Allow central finite differences for partials that were not supplied.
    /// The result is approximate.
    pub fn finite_difference(mut self, on: bool) -> Self {
        self.finite_difference = on;
        self
    }

    pub fn build(self) -> Result<ProblemSpec, ModelError> {
        let missing = |what: &str| ModelError::Invalid(format!("{what} is required"));
        let drift = self.drift.ok_or_else(|| missing("drift"))?;
        let diffusion = self.diffusion.ok_or_else(|| missing("diffusion"))?;
        let delay = self.delay.ok_or_else(|| missing("delay"))?;
        let horizon = self.horizon.ok_or_else(|| missing("horizon"))?;
        let initial_segment = self.initial_segment.ok_or_else(|| missing("initial segment"))?;
        if !(delay > 0.0 && delay.is_finite()) {
            return Err(ModelError::Invalid(format!("delay must be positive, got {delay}")));
        }
        if !(horizon > delay && horizon.is_finite()) {
            return Err(ModelError::Invalid(format!(
                "horizon {horizon} must exceed delay {delay}"
            )));
        }
        if !(self.growth_beta >= 0.0) {
            return Err(ModelError::Invalid("growth exponent must be >= 0".into()));
        }
        if !self.finite_difference {
            for p in [Partial::G1, Partial::G2] {
                if !self.partials.contains_key(&p) {
                    return Err(ModelError::MissingPartial(p));
                }
            }
        }
        let spec = ProblemSpec {
            drift,
            diffusion,
            partials: self.partials,
            delay,
            horizon,
            initial_segment,
            growth_beta: self.growth_beta,
            finite_difference: self.finite_difference,
        };
        // dense check of the initial segment
        for i in 0..=256 {
            let t = -delay + delay * (i as f64) / 256.0;
            spec.initial(t)?;
        }
        Ok(spec)
    }
}

impl ProblemSpec {
    pub fn builder() -> ProblemBuilder {
        ProblemBuilder::default()
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn growth_beta(&self) -> f64 {
        self.growth_beta
    }

    pub fn finite_difference(&self) -> bool {
        self.finite_difference
    }

    pub fn initial(&self, t: f64) -> Result<f64, ModelError> {
        self.initial_segment.eval("initial segment", t, 0.0, 0.0)
    }

    pub fn drift(&self, t: f64, x: f64, y: f64) -> Result<f64, ModelError> {
        self.drift.eval("drift", t, x, y)
    }

    pub fn diffusion(&self, t: f64, x: f64, y: f64) -> Result<f64, ModelError> {
        self.diffusion.eval("diffusion", t, x, y)
    }

    pub fn diffusion_dx(&self, t: f64, x: f64, y: f64) -> Result<f64, ModelError> {
        self.partial(Partial::G1, t, x, y)
    }

    pub fn diffusion_dy(&self, t: f64, x: f64, y: f64) -> Result<f64, ModelError> {
        self.partial(Partial::G2, t, x, y)
    }

    pub fn has_partial(&self, p: Partial) -> bool {
        self.partials.contains_key(&p)
    }

    /// Evaluates a partial derivative, falling back to central differences
    /// when allowed. Returns `MissingPartial` otherwise.
    pub fn partial(&self, p: Partial, t: f64, x: f64, y: f64) -> Result<f64, ModelError> {
        if let Some(c) = self.partials.get(&p) {
            return c.eval(p.name(), t, x, y);
        }
        if !self.finite_difference {
            return Err(ModelError::MissingPartial(p));
        }
        self.fd_partial(p, t, x, y)
    }

    fn fd_partial(&self, p: Partial, t: f64, x: f64, y: f64) -> Result<f64, ModelError> {
        let base = |t, x, y| {
            if p.base_is_drift() {
                self.drift(t, x, y)
            } else {
                self.diffusion(t, x, y)
            }
        };
        let (hx, hy) = (fd_step(x), fd_step(y));
        let v = match p.orders() {
            (1, 0) => (base(t, x + hx, y)? - base(t, x - hx, y)?) / (2.0 * hx),
            (0, 1) => (base(t, x, y + hy)? - base(t, x, y - hy)?) / (2.0 * hy),
            // second differences need a larger step to keep cancellation in check
            (2, 0) => {
                let h = hx.sqrt() * 1e-1;
                (base(t, x + h, y)? - 2.0 * base(t, x, y)? + base(t, x - h, y)?) / (h * h)
            }
            (0, 2) => {
                let h = hy.sqrt() * 1e-1;
                (base(t, x, y + h)? - 2.0 * base(t, x, y)? + base(t, x, y - h)?) / (h * h)
            }
            _ => {
                let (h, k) = (hx.sqrt() * 1e-1, hy.sqrt() * 1e-1);
                (base(t, x + h, y + k)? - base(t, x + h, y - k)? - base(t, x - h, y + k)?
                    + base(t, x - h, y - k)?)
                    / (4.0 * h * k)
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ModelError::NonFinite {
                name: p.name(),
                t,
                x,
                y,
            })
        }
    }

    /// Drift derivative in `x`: supplied, or a central difference of `f`.
    pub(crate) fn drift_dx_or_fd(&self, t: f64, x: f64, y: f64) -> Result<f64, ModelError> {
        match self.partials.get(&Partial::F1) {
            Some(c) => c.eval("f_x", t, x, y),
            None => self.fd_partial(Partial::F1, t, x, y),
        }
    }
}

/// What to do when `α(Δ)` falls below `Λ(1)`, where `Λ⁻¹` as a map onto
/// `[1, ∞)` is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BelowRange {
    /// Use radius 1.
    #[default]
    ClampToOne,
    /// Invert `Λ` on its whole domain, which may give a radius below 1.
    Invert,
}

#[derive(Clone)]
enum PolicyKind {
    Functions {
        lambda: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        lambda_inv: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        alpha: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
    /// No truncation at all (radius = ∞). Used for contrast experiments.
    Unbounded,
}

/// `Λ`, `Λ⁻¹`, `α` and `K₀`.
#[derive(Clone)]
pub struct TruncationPolicy {
    kind: PolicyKind,
    k0: f64,
    below_range: BelowRange,
}

impl fmt::Debug for TruncationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            PolicyKind::Functions { .. } => "functions",
            PolicyKind::Unbounded => "unbounded",
        };
        f.debug_struct("TruncationPolicy")
            .field("kind", &kind)
            .field("k0", &self.k0)
            .field("below_range", &self.below_range)
            .finish()
    }
}

impl TruncationPolicy {
    /// General policy from `Λ`, its inverse and `α`.
    pub fn new<L, Li, A>(lambda: L, lambda_inv: Li, alpha: A, k0: f64) -> Result<Self, ModelError>
    where
        L: Fn(f64) -> f64 + Send + Sync + 'static,
        Li: Fn(f64) -> f64 + Send + Sync + 'static,
        A: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let lambda_one = lambda(1.0);
        if !lambda_one.is_finite() || !(k0 >= 1.0_f64.max(lambda_one)) {
            return Err(ModelError::Invalid(format!(
                "K0 = {k0} must be at least max(1, Λ(1) = {lambda_one})"
            )));
        }
        Ok(TruncationPolicy {
            kind: PolicyKind::Functions {
                lambda: Arc::new(lambda),
                lambda_inv: Arc::new(lambda_inv),
                alpha: Arc::new(alpha),
            },
            k0,
            below_range: BelowRange::ClampToOne,
        })
    }

    /// `Λ(w) = c·w^p` and `α(Δ) = Δ^(-e)`, the family used by the builtin problems.
    pub fn power_law(coef: f64, exponent: f64, alpha_exp: f64, k0: f64) -> Result<Self, ModelError> {
        if !(coef > 0.0 && exponent > 0.0 && alpha_exp > 0.0) {
            return Err(ModelError::Invalid(
                "power-law policy needs positive coefficient and exponents".into(),
            ));
        }
        Self::new(
            move |w| coef * w.powf(exponent),
            move |u| (u / coef).powf(1.0 / exponent),
            move |dt| dt.powf(-alpha_exp),
            k0,
        )
    }

    /// Radius = ∞: coefficients are evaluated at their raw arguments.
    pub fn unbounded() -> Self {
        TruncationPolicy {
            kind: PolicyKind::Unbounded,
            k0: 1.0,
            below_range: BelowRange::ClampToOne,
        }
    }

    pub fn with_below_range(mut self, rule: BelowRange) -> Self {
        self.below_range = rule;
        self
    }

    pub fn below_range(&self) -> BelowRange {
        self.below_range
    }

    pub fn k0(&self) -> f64 {
        self.k0
    }

    pub fn is_unbounded(&self) -> bool {
        matches!(self.kind, PolicyKind::Unbounded)
    }

    pub fn lambda(&self, w: f64) -> f64 {
        match &self.kind {
            PolicyKind::Functions { lambda, .. } => lambda(w),
            PolicyKind::Unbounded => f64::INFINITY,
        }
    }

    pub fn lambda_inv(&self, u: f64) -> f64 {
        match &self.kind {
            PolicyKind::Functions { lambda_inv, .. } => lambda_inv(u),
            PolicyKind::Unbounded => f64::INFINITY,
        }
    }

    pub fn alpha(&self, dt: f64) -> f64 {
        match &self.kind {
            PolicyKind::Functions { alpha, .. } => alpha(dt),
            PolicyKind::Unbounded => f64::INFINITY,
        }
    }

    /// Checks `Δ^{1/4} α(Δ) ≤ K₀` and that α decreases along the given step sizes.
    pub fn check_admissible(&self, dts: &[f64]) -> Result<(), ModelError> {
        if self.is_unbounded() {
            return Ok(());
        }
        for &dt in dts {
            if !(dt > 0.0 && dt <= 1.0) {
                return Err(ModelError::Invalid(format!("step size {dt} outside (0, 1]")));
            }
            let a = self.alpha(dt);
            if dt.powf(0.25) * a > self.k0 * (1.0 + 1e-12) {
                return Err(ModelError::Invalid(format!(
                    "Δ^(1/4)·α(Δ) = {} exceeds K0 = {} at Δ = {dt}",
                    dt.powf(0.25) * a,
                    self.k0
                )));
            }
        }
        let mut sorted: Vec<f64> = dts.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        for w in sorted.windows(2) {
            if !(self.alpha(w[0]) > self.alpha(w[1])) {
                return Err(ModelError::Invalid(format!(
                    "α is not strictly decreasing between Δ = {} and Δ = {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }
}

/// `r(Δ) = Λ⁻¹(α(Δ))`, with the below-range rule applied when `α(Δ) < Λ(1)`.
pub fn truncation_radius(policy: &TruncationPolicy, dt: f64) -> Result<f64, ModelError> {
    if policy.is_unbounded() {
        return Ok(f64::INFINITY);
    }
    let a = policy.alpha(dt);
    if !a.is_finite() {
        return Err(ModelError::Policy(format!("α({dt}) = {a}")));
    }
    if a < policy.lambda(1.0) && policy.below_range == BelowRange::ClampToOne {
        return Ok(1.0);
    }
    let r = policy.lambda_inv(a);
    if !(r.is_finite() && r > 0.0) {
        return Err(ModelError::Policy(format!("Λ⁻¹(α({dt})) = {r}")));
    }
    Ok(r)
}

/// `(|χ| ∧ r)·sign(χ)`, with sign(0) = 0.
#[inline]
pub fn truncate(chi: f64, radius: f64) -> f64 {
    if chi.abs() <= radius {
        chi
    } else if chi > 0.0 {
        radius
    } else {
        -radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedCoeffs {
    pub f: f64,
    pub g: f64,
    pub g1: f64,
    pub g2: f64,
}

/// `f, g, g₁, g₂` at `(t, π(x), π(y))`.
pub fn truncated_coeffs(
    spec: &ProblemSpec,
    radius: f64,
    t: f64,
    x: f64,
    y: f64,
) -> Result<TruncatedCoeffs, ModelError> {
    let (x, y) = (truncate(x, radius), truncate(y, radius));
    Ok(TruncatedCoeffs {
        f: spec.drift(t, x, y)?,
        g: spec.diffusion(t, x, y)?,
        g1: spec.diffusion_dx(t, x, y)?,
        g2: spec.diffusion_dy(t, x, y)?,
    })
}

/// Uniform grid with `Δ = τ/M = T/M′`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    m_delay: usize,
    m_total: usize,
}

impl TimeGrid {
    /// Builds the grid; `τ/Δ` and `T/Δ` must be integers exactly.
    pub fn new(dt: f64, delay: f64, horizon: f64) -> Result<Self, ModelError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(ModelError::Grid(format!("step size must be positive, got {dt}")));
        }
        let count = |len: f64, what: &str| -> Result<usize, ModelError> {
            let m = (len / dt).round();
            if m < 1.0 || m * dt != len {
                return Err(ModelError::Grid(format!(
                    "{what} {len} is not an integer multiple of Δ = {dt}"
                )));
            }
            Ok(m as usize)
        };
        let m_delay = count(delay, "delay")?;
        let m_total = count(horizon, "horizon")?;
        if m_delay >= m_total {
            return Err(ModelError::Grid(format!(
                "need M < M′, got M = {m_delay}, M′ = {m_total}"
            )));
        }
        Ok(TimeGrid {
            dt,
            m_delay,
            m_total,
        })
    }

    pub fn for_problem(spec: &ProblemSpec, dt: f64) -> Result<Self, ModelError> {
        Self::new(dt, spec.delay(), spec.horizon())
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `M`, steps per delay.
    pub fn m_delay(&self) -> usize {
        self.m_delay
    }

    /// `M′`, steps to the horizon.
    pub fn m_total(&self) -> usize {
        self.m_total
    }

    pub fn time(&self, k: i64) -> f64 {
        k as f64 * self.dt
    }

    /// Number of grid points from `-τ` to `T` inclusive.
    pub fn len(&self) -> usize {
        self.m_delay + self.m_total + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}
