//! The truncated θ-Milstein stepper and a truncated Euler–Maruyama baseline.
//!
//! One step from `t_k` to `t_{k+1}` solves
//!
//! ```text
//! y − θΔ f_Δ(t_{k+1}, y, Y_{k+1−M}) = Y_k + (1−θ)Δ f_Δ(t_k, Y_k, Y_{k−M})
//!                                    + g_Δ ΔB_k + g_{1,Δ} g_Δ Q1
//!                                    + g_{2,Δ} g_Δ(t_{k−M}, Y_{k−M}, Y_{k−2M}) Q2   (k ≥ M)
//! ```
//!
//! for `y = Y_{k+1}`. Coefficients see truncated arguments; the state itself
//! is never truncated.

use thiserror::Error;

use crate::model::{truncate, truncation_radius, ModelError, ProblemSpec, TimeGrid, TruncationPolicy};
use crate::noise::{q1, BrownianStore, NoiseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    ThetaMilstein,
    /// Same drift treatment, no Q1/Q2 correction terms.
    TruncatedEm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub theta: f64,
    /// One-sided constant `K₁`; θ > 0 requires `K₁θΔ < 1`.
    pub k1_bound: f64,
    pub newton_abs_tol: f64,
    pub newton_rel_tol: f64,
    pub newton_max_iter: u32,
    pub method: Method,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            theta: 0.5,
            k1_bound: 0.0,
            newton_abs_tol: 1e-12,
            newton_rel_tol: 1e-12,
            newton_max_iter: 50,
            method: Method::ThetaMilstein,
        }
    }
}

impl SchemeConfig {
    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_k1(mut self, k1: f64) -> Self {
        self.k1_bound = k1;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    /// `Δ* = 1 ∧ 1/(K₁θ)`.
    pub fn max_step(&self) -> f64 {
        if self.theta > 0.0 && self.k1_bound > 0.0 {
            (1.0 / (self.k1_bound * self.theta)).min(1.0)
        } else {
            1.0
        }
    }

    pub fn validate(&self, dt: f64) -> Result<(), SchemeError> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(SchemeError::Config(format!("θ = {} outside [0, 1]", self.theta)));
        }
        if !(self.k1_bound >= 0.0) {
            return Err(SchemeError::Config("K₁ must be non-negative".into()));
        }
        if !(self.newton_abs_tol >= 0.0 && self.newton_rel_tol >= 0.0)
            || self.newton_abs_tol + self.newton_rel_tol <= 0.0
        {
            return Err(SchemeError::Config("Newton tolerance must be positive".into()));
        }
        if self.theta > 0.0 && self.k1_bound * self.theta * dt >= 1.0 {
            return Err(SchemeError::Config(format!(
                "K₁θΔ = {} must be below 1 (Δ = {dt}, Δ* = {})",
                self.k1_bound * self.theta * dt,
                self.max_step()
            )));
        }
        if !(dt < 1.0 || (self.theta == 0.0 && dt <= 1.0)) {
            return Err(SchemeError::Config(format!("step size {dt} too large")));
        }
        Ok(())
    }

    fn tolerance(&self, y: f64) -> f64 {
        self.newton_abs_tol + self.newton_rel_tol * y.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemeError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("step {step}: {source}")]
    Coefficient { step: i64, source: ModelError },
    #[error("step {step}: {source}")]
    Noise { step: i64, source: NoiseError },
    #[error("step {step}: non-finite {what}")]
    NonFinite { step: i64, what: &'static str },
    #[error("step {step}: implicit solve failed, last residual {residual:e} at y = {y}")]
    Solver { step: i64, residual: f64, y: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Solve {
    pub value: f64,
    pub iterations: u32,
    pub residual: f64,
}

/// Failure of [`implicit_solve`]; `residual` is the best one reached.
#[derive(Debug, Clone, PartialEq)]
pub enum SolveError {
    Coefficient(ModelError),
    NoConvergence { residual: f64, y: f64 },
}

impl From<ModelError> for SolveError {
    fn from(e: ModelError) -> Self {
        SolveError::Coefficient(e)
    }
}

/// Solves `y − θΔ f_Δ(t_next, y, y_delay_next) = c`.
///
/// Damped Newton from `y = c`; if that stalls, bisection on a bracket around
/// `c` that doubles until the residual changes sign.
pub fn implicit_solve(
    spec: &ProblemSpec,
    radius: f64,
    dt: f64,
    t_next: f64,
    y_delay_next: f64,
    c: f64,
    cfg: &SchemeConfig,
) -> Result<Solve, SolveError> {
    if cfg.theta == 0.0 {
        return Ok(Solve {
            value: c,
            iterations: 0,
            residual: 0.0,
        });
    }
    let h = cfg.theta * dt;
    let yd = truncate(y_delay_next, radius);
    let residual = |y: f64| -> Result<f64, ModelError> {
        Ok(y - h * spec.drift(t_next, truncate(y, radius), yd)? - c)
    };
    let slope = |y: f64| -> Result<f64, ModelError> {
        if y.abs() > radius {
            Ok(1.0)
        } else {
            Ok(1.0 - h * spec.drift_dx_or_fd(t_next, y, yd)?)
        }
    };

    let mut y = c;
    let mut g = residual(y)?;
    let mut iterations = 0;
    while iterations < cfg.newton_max_iter {
        if g.abs() <= cfg.tolerance(y) {
            // one more step usually lands on the rounding floor
            let d = slope(y)?;
            if d > 0.0 && d.is_finite() {
                let polished = y - g / d;
                let gp = residual(polished)?;
                if gp.abs() < g.abs() {
                    y = polished;
                    g = gp;
                    iterations += 1;
                }
            }
            return Ok(Solve {
                value: y,
                iterations,
                residual: g.abs(),
            });
        }
        iterations += 1;
        let d = slope(y)?;
        if !(d > 0.0 && d.is_finite()) {
            break;
        }
        let mut step = g / d;
        let mut next = y - step;
        let mut gn = residual(next)?;
        let mut halvings = 0;
        while gn.abs() > g.abs() && halvings < 40 {
            step *= 0.5;
            next = y - step;
            gn = residual(next)?;
            halvings += 1;
        }
        if !(gn.abs() < g.abs()) {
            break;
        }
        y = next;
        g = gn;
    }
    if g.abs() <= cfg.tolerance(y) {
        return Ok(Solve {
            value: y,
            iterations,
            residual: g.abs(),
        });
    }
    bisect(residual, c, cfg, iterations).map(|(value, iters, res)| Solve {
        value,
        iterations: iters,
        residual: res,
    })
}

fn bisect<G>(
    residual: G,
    c: f64,
    cfg: &SchemeConfig,
    mut iterations: u32,
) -> Result<(f64, u32, f64), SolveError>
where
    G: Fn(f64) -> Result<f64, ModelError>,
{
    let mut width = 1.0;
    let (mut lo, mut hi);
    loop {
        lo = c - width;
        hi = c + width;
        let (glo, ghi) = (residual(lo)?, residual(hi)?);
        if glo <= 0.0 && ghi >= 0.0 {
            break;
        }
        width *= 2.0;
        if !width.is_finite() || width > 1e300 {
            let g = residual(c)?;
            return Err(SolveError::NoConvergence {
                residual: g.abs(),
                y: c,
            });
        }
    }
    let mut best = (c, residual(c)?.abs());
    for _ in 0..2000 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let g = residual(mid)?;
        if g.abs() < best.1 {
            best = (mid, g.abs());
        }
        if g.abs() <= cfg.tolerance(mid) {
            return Ok((mid, iterations, g.abs()));
        }
        if mid <= lo || mid >= hi {
            break;
        }
        if g < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.1 <= cfg.tolerance(best.0) {
        Ok((best.0, iterations, best.1))
    } else {
        Err(SolveError::NoConvergence {
            residual: best.1,
            y: best.0,
        })
    }
}

/// Discrete solution on `t_k`, `k = -M..=M′`, with per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    values: Vec<f64>,
    newton_iters: Vec<u32>,
    truncated: Vec<bool>,
}

impl Trajectory {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `Y_Δ(t_k)` for `k ∈ [-M, M′]`.
    pub fn value(&self, k: i64) -> f64 {
        self.values[(k + self.grid.m_delay() as i64) as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("trajectory is never empty")
    }

    /// Newton iterations spent producing `Y(t_k)`; 0 on the initial segment.
    pub fn newton_iters(&self, k: i64) -> u32 {
        self.newton_iters[(k + self.grid.m_delay() as i64) as usize]
    }

    /// Whether any coefficient argument was clamped while producing `Y(t_k)`.
    pub fn truncated(&self, k: i64) -> bool {
        self.truncated[(k + self.grid.m_delay() as i64) as usize]
    }

    /// `(k, t_k, Y(t_k))` for every grid point.
    pub fn points(&self) -> impl Iterator<Item = (i64, f64, f64)> + '_ {
        let m = self.grid.m_delay() as i64;
        self.values
            .iter()
            .enumerate()
            .map(move |(i, &y)| (i as i64 - m, self.grid.time(i as i64 - m), y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub value: f64,
    pub newton_iters: u32,
    pub truncated: bool,
}

/// Produces `Y(t_{k+1})`. `history[j + M]` must hold `Y(t_j)` for `-M ≤ j ≤ k`.
#[allow(clippy::too_many_arguments)]
pub fn step(
    spec: &ProblemSpec,
    radius: f64,
    grid: &TimeGrid,
    cfg: &SchemeConfig,
    store: &BrownianStore,
    k: i64,
    history: &[f64],
) -> Result<StepOutcome, SchemeError> {
    let m = grid.m_delay() as i64;
    let dt = grid.dt();
    let at = |j: i64| history[(j + m) as usize];
    let coef = |e: ModelError| SchemeError::Coefficient { step: k, source: e };
    let noise = |e: NoiseError| SchemeError::Noise { step: k, source: e };

    let t = grid.time(k);
    let (yk, ykm) = (at(k), at(k - m));
    let (x, y) = (truncate(yk, radius), truncate(ykm, radius));
    let mut clamped = yk.abs() > radius || ykm.abs() > radius;

    let f = spec.drift(t, x, y).map_err(coef)?;
    let g = spec.diffusion(t, x, y).map_err(coef)?;
    let db = store.coarse_increment(dt, k).map_err(noise)?;
    let mut c = yk + (1.0 - cfg.theta) * f * dt + g * db;

    if cfg.method == Method::ThetaMilstein {
        let g1 = spec.diffusion_dx(t, x, y).map_err(coef)?;
        c += g1 * g * q1(db, dt);
        if k >= m {
            let yk2m = at(k - 2 * m);
            clamped |= yk2m.abs() > radius;
            let g2 = spec.diffusion_dy(t, x, y).map_err(coef)?;
            let g_delayed = spec
                .diffusion(grid.time(k - m), y, truncate(yk2m, radius))
                .map_err(coef)?;
            c += g2 * g_delayed * store.q2(dt, k, grid.m_delay()).map_err(noise)?;
        }
    }
    if !c.is_finite() {
        return Err(SchemeError::NonFinite {
            step: k,
            what: "explicit part",
        });
    }

    let y_delay_next = at(k + 1 - m);
    let solve = implicit_solve(spec, radius, dt, grid.time(k + 1), y_delay_next, c, cfg).map_err(
        |e| match e {
            SolveError::Coefficient(source) => SchemeError::Coefficient { step: k, source },
            SolveError::NoConvergence { residual, y } => SchemeError::Solver { step: k, residual, y },
        },
    )?;
    if !solve.value.is_finite() {
        return Err(SchemeError::NonFinite {
            step: k,
            what: "state",
        });
    }
    if cfg.theta > 0.0 {
        clamped |= solve.value.abs() > radius || y_delay_next.abs() > radius;
    }
    Ok(StepOutcome {
        value: solve.value,
        newton_iters: solve.iterations,
        truncated: clamped,
    })
}

/// Runs the scheme selected by `cfg.method` over the whole grid.
pub fn simulate(
    spec: &ProblemSpec,
    policy: &TruncationPolicy,
    grid: &TimeGrid,
    cfg: &SchemeConfig,
    store: &BrownianStore,
) -> Result<Trajectory, SchemeError> {
    cfg.validate(grid.dt())?;
    let radius = truncation_radius(policy, grid.dt())?;
    let m = grid.m_delay() as i64;
    let n = grid.len();
    let mut values = Vec::with_capacity(n);
    for k in -m..=0 {
        values.push(spec.initial(grid.time(k))?);
    }
    let mut newton_iters = vec![0; n];
    let mut truncated = vec![false; n];
    for k in 0..grid.m_total() as i64 {
        let out = step(spec, radius, grid, cfg, store, k, &values)?;
        let i = (k + 1 + m) as usize;
        values.push(out.value);
        newton_iters[i] = out.newton_iters;
        truncated[i] = out.truncated;
    }
    Ok(Trajectory {
        grid: *grid,
        values,
        newton_iters,
        truncated,
    })
}

/// Truncated Euler–Maruyama on the same grid and path (Q1 = Q2 = 0).
pub fn simulate_em(
    spec: &ProblemSpec,
    policy: &TruncationPolicy,
    grid: &TimeGrid,
    cfg: &SchemeConfig,
    store: &BrownianStore,
) -> Result<Trajectory, SchemeError> {
    simulate(spec, policy, grid, &cfg.with_method(Method::TruncatedEm), store)
}
