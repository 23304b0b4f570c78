//! Monte Carlo strong-error studies.
//!
//! Every path `i` gets one [`BrownianStore`] at the finest resolution of the
//! study. The reference solution and each coarse level are driven by that
//! same store, so their difference measures discretisation error and not
//! sampling noise between independent paths.
//!
//! Paths run in parallel; the reduction into an [`ErrorTable`] happens in path
//! index order afterwards, so results are bitwise independent of thread count.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ModelError, ProblemSpec, TimeGrid, TruncationPolicy};
use crate::noise::{BrownianStore, NoiseError};
use crate::scheme::{simulate, SchemeConfig, SchemeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("invalid study plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("path {path} (seed {seed}) at Δ = {dt}: {source}")]
    Path {
        path: u64,
        seed: u64,
        dt: f64,
        source: Box<SchemeError>,
    },
    #[error("blow-up: path {path} (seed {seed}) became non-finite at step {step}")]
    BlowUp { path: u64, seed: u64, step: i64 },
    #[error("cannot fit a rate: {0}")]
    DegenerateFit(String),
}

/// What the coarse levels are compared against.
#[derive(Clone)]
pub enum Reference {
    /// The same scheme at a finer step on the same path.
    SelfConvergence { dt: f64 },
    /// A closed-form terminal value as a function of `B(T)`.
    Exact {
        fine_dt: f64,
        terminal: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reference::SelfConvergence { dt } => write!(f, "SelfConvergence {{ dt: {dt} }}"),
            Reference::Exact { fine_dt, .. } => write!(f, "Exact {{ fine_dt: {fine_dt} }}"),
        }
    }
}

impl Reference {
    /// Resolution of the master Brownian store.
    pub fn fine_dt(&self) -> f64 {
        match self {
            Reference::SelfConvergence { dt } => *dt,
            Reference::Exact { fine_dt, .. } => *fine_dt,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyPlan {
    pub levels: Vec<f64>,
    pub reference: Reference,
    pub num_paths: usize,
    pub q_bars: Vec<f64>,
    pub seed: u64,
    /// Also record the RMS over paths of the max-over-grid error.
    /// Diagnostic only; the theory bounds the terminal error.
    pub sup_error: bool,
}

impl StudyPlan {
    pub fn new(levels: Vec<f64>, reference: Reference, num_paths: usize, seed: u64) -> Self {
        StudyPlan {
            levels,
            reference,
            num_paths,
            q_bars: vec![2.0],
            seed,
            sup_error: false,
        }
    }

    pub fn with_q_bars(mut self, q_bars: Vec<f64>) -> Self {
        self.q_bars = q_bars;
        self
    }

    pub fn validate(&self, spec: &ProblemSpec) -> Result<(), HarnessError> {
        let plan = |m: String| Err(HarnessError::Plan(m));
        if self.levels.is_empty() {
            return plan("no levels".into());
        }
        if self.num_paths < 2 {
            return plan(format!("need at least 2 paths, got {}", self.num_paths));
        }
        if self.q_bars.is_empty() || self.q_bars.iter().any(|&q| !(q >= 2.0 && q.is_finite())) {
            return plan(format!("error exponents must be >= 2, got {:?}", self.q_bars));
        }
        let fine = self.reference.fine_dt();
        TimeGrid::for_problem(spec, fine)?;
        for &dt in &self.levels {
            TimeGrid::for_problem(spec, dt)?;
            let r = (dt / fine).round();
            if r < 1.0 || r * fine != dt {
                return plan(format!("level {dt} is not a multiple of the reference step {fine}"));
            }
            if let Reference::SelfConvergence { dt: rdt } = self.reference {
                if dt <= rdt {
                    return plan(format!("level {dt} is not coarser than the reference {rdt}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub dt: f64,
    pub q_bar: f64,
    /// `(mean |x_ref(T) − Y_Δ(T)|^q̄)^{1/q̄}`.
    pub error: f64,
    /// Delta-method standard error of `error`.
    pub stderr: f64,
    pub num_paths: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
    /// Per level: RMS over paths of `max_k |x_ref(t_k) − Y_Δ(t_k)|`, when requested.
    pub sup_errors: Option<Vec<(f64, f64)>>,
}

impl ErrorTable {
    pub fn rows_for(&self, q_bar: f64) -> impl Iterator<Item = &ErrorRow> + '_ {
        self.rows.iter().filter(move |r| r.q_bar == q_bar)
    }
}

/// Least-squares line through `(log₂ Δ, log₂ error)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub residuals: Vec<f64>,
}

/// Terminal differences of one path, one per level, plus optional sup-norm differences.
struct PathResult {
    terminal: Vec<f64>,
    sup: Vec<f64>,
}

/// Runs the study. Any failing path aborts it with the path index and seed.
pub fn strong_errors(
    spec: &ProblemSpec,
    policy: &TruncationPolicy,
    cfg: &SchemeConfig,
    plan: &StudyPlan,
) -> Result<ErrorTable, HarnessError> {
    plan.validate(spec)?;
    let fine_dt = plan.reference.fine_dt();
    let level_grids: Vec<TimeGrid> = plan
        .levels
        .iter()
        .map(|&dt| TimeGrid::for_problem(spec, dt))
        .collect::<Result<_, _>>()?;
    let ref_grid = TimeGrid::for_problem(spec, fine_dt)?;
    let seed = plan.seed;

    let run_path = |i: usize| -> Result<PathResult, HarnessError> {
        let path = i as u64;
        let store = BrownianStore::generate(seed, path, fine_dt, spec.delay(), spec.horizon())?;
        let fail = |dt: f64| move |source| HarnessError::Path { path, seed, dt, source: Box::new(source) };
        let reference = match &plan.reference {
            Reference::SelfConvergence { dt } => {
                Some(simulate(spec, policy, &ref_grid, cfg, &store).map_err(fail(*dt))?)
            }
            Reference::Exact { .. } => None,
        };
        let exact_terminal = match &plan.reference {
            Reference::Exact { terminal, .. } => Some(terminal(store.terminal_value())),
            Reference::SelfConvergence { .. } => None,
        };
        let mut out = PathResult {
            terminal: Vec::with_capacity(level_grids.len()),
            sup: Vec::new(),
        };
        for grid in &level_grids {
            let tr = simulate(spec, policy, grid, cfg, &store).map_err(fail(grid.dt()))?;
            let target = match (&reference, exact_terminal) {
                (Some(r), _) => r.terminal(),
                (None, Some(v)) => v,
                _ => unreachable!(),
            };
            out.terminal.push(target - tr.terminal());
            if plan.sup_error {
                if let Some(r) = &reference {
                    let ratio = (grid.dt() / fine_dt).round() as i64;
                    let sup = (0..=grid.m_total() as i64)
                        .map(|k| (r.value(k * ratio) - tr.value(k)).abs())
                        .fold(0.0, f64::max);
                    out.sup.push(sup);
                }
            }
        }
        Ok(out)
    };

    let results: Vec<PathResult> = (0..plan.num_paths)
        .into_par_iter()
        .map(run_path)
        .collect::<Result<_, _>>()?;

    let n = plan.num_paths as f64;
    let mut rows = Vec::with_capacity(plan.levels.len() * plan.q_bars.len());
    for (li, &dt) in plan.levels.iter().enumerate() {
        for &q in &plan.q_bars {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for r in &results {
                let v = r.terminal[li].abs().powf(q);
                sum += v;
                sum_sq += v * v;
            }
            let mean = sum / n;
            let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
            let se_mean = (var / n).sqrt();
            let error = mean.powf(1.0 / q);
            let stderr = if mean > 0.0 {
                se_mean * mean.powf(1.0 / q - 1.0) / q
            } else {
                0.0
            };
            rows.push(ErrorRow {
                dt,
                q_bar: q,
                error,
                stderr,
                num_paths: plan.num_paths,
            });
        }
    }
    let sup_errors = if plan.sup_error && matches!(plan.reference, Reference::SelfConvergence { .. }) {
        Some(
            plan.levels
                .iter()
                .enumerate()
                .map(|(li, &dt)| {
                    let ms = results.iter().map(|r| r.sup[li] * r.sup[li]).sum::<f64>() / n;
                    (dt, ms.sqrt())
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(ErrorTable { rows, sup_errors })
}

/// Fits `log₂ error = slope·log₂ Δ + intercept` over the rows with the given `q̄`.
pub fn fit_rate(table: &ErrorTable, q_bar: f64) -> Result<RateFit, HarnessError> {
    let pts: Vec<(f64, f64)> = table.rows_for(q_bar).map(|r| (r.dt, r.error)).collect();
    fit_points(&pts)
}

/// Least squares on `(log₂ Δ, log₂ e)`; all errors must be positive.
pub fn fit_points(pts: &[(f64, f64)]) -> Result<RateFit, HarnessError> {
    if pts.len() < 2 {
        return Err(HarnessError::DegenerateFit(format!(
            "need at least 2 levels, got {}",
            pts.len()
        )));
    }
    if let Some(&(dt, e)) = pts.iter().find(|(_, e)| !(*e > 0.0)) {
        return Err(HarnessError::DegenerateFit(format!("error {e} at Δ = {dt}")));
    }
    let xs: Vec<f64> = pts.iter().map(|(dt, _)| dt.log2()).collect();
    let ys: Vec<f64> = pts.iter().map(|(_, e)| e.log2()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(HarnessError::DegenerateFit("all levels coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| y - (slope * x + intercept))
        .collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(RateFit {
        slope,
        intercept,
        r2,
        residuals,
    })
}

/// `max_k (1/N) Σ_i |Y^i(t_k)|^p` over the whole grid, initial segment included.
///
/// A path that leaves the finite numbers is reported as [`HarnessError::BlowUp`].
pub fn moment_estimate(
    spec: &ProblemSpec,
    policy: &TruncationPolicy,
    cfg: &SchemeConfig,
    grid: &TimeGrid,
    num_paths: usize,
    p_exp: f64,
    seed: u64,
) -> Result<f64, HarnessError> {
    if !(p_exp >= 1.0) {
        return Err(HarnessError::Plan(format!("moment exponent {p_exp} < 1")));
    }
    if num_paths == 0 {
        return Err(HarnessError::Plan("no paths".into()));
    }
    let per_path: Vec<Vec<f64>> = (0..num_paths)
        .into_par_iter()
        .map(|i| {
            let path = i as u64;
            let store =
                BrownianStore::generate(seed, path, grid.dt(), spec.delay(), spec.horizon())?;
            match simulate(spec, policy, grid, cfg, &store) {
                Ok(tr) => Ok(tr.values().iter().map(|y| y.abs().powf(p_exp)).collect()),
                Err(SchemeError::NonFinite { step, .. }) => {
                    Err(HarnessError::BlowUp { path, seed, step })
                }
                Err(SchemeError::Coefficient {
                    step,
                    source: ModelError::NonFinite { .. },
                }) => Err(HarnessError::BlowUp { path, seed, step }),
                Err(source) => Err(HarnessError::Path {
                    path,
                    seed,
                    dt: grid.dt(),
                    source: Box::new(source),
                }),
            }
        })
        .collect::<Result<_, _>>()?;
    let mut best = 0.0f64;
    for k in 0..grid.len() {
        let mean = per_path.iter().map(|v| v[k]).sum::<f64>() / num_paths as f64;
        if !mean.is_finite() {
            return Err(HarnessError::BlowUp {
                path: 0,
                seed,
                step: k as i64 - grid.m_delay() as i64,
            });
        }
        best = best.max(mean);
    }
    Ok(best)
}
