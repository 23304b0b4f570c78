//! Sampling-based checks of the structural assumptions.
//!
//! Each inequality is rearranged as `LHS − RHS ≤ 0` and evaluated at a
//! scrambled Halton sequence plus a fixed set of box corners, axis points and
//! `x = x̄, y = ȳ` diagonal points. The report gives the largest value found.
//! A non-positive maximum means no violation was found among the samples
//! tested; it does not prove the inequality.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{Coefficient, ModelError, Partial, ProblemSpec, TruncationPolicy};
use crate::normal::unit_open;

/// Absolute slack for "no violation".
pub const VIOLATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbeError {
    #[error("invalid probe case: {0}")]
    Invalid(String),
    #[error("{kind} needs partial derivatives that are not supplied: {}", names(.missing))]
    Capability { kind: &'static str, missing: Vec<Partial> },
    #[error("evaluation failed at (t, x, y, x̄, ȳ) = {at:?}: {source}")]
    Evaluation { at: [f64; 5], source: Box<ModelError> },
}

fn names(ps: &[Partial]) -> String {
    ps.iter().map(|p| p.name()).collect::<Vec<_>>().join(", ")
}

/// `U(m, n)`, stored as a coefficient evaluated at `(0, m, n)`.
#[derive(Debug, Clone)]
pub struct UFunctional(pub Coefficient);

impl UFunctional {
    /// `U(m,n) = ¼|m−n|²(m² + n²)`.
    pub fn quartic() -> Self {
        UFunctional(Coefficient::native(|_, m, n| 0.25 * (m - n) * (m - n) * (m * m + n * n)))
    }

    pub fn eval(&self, m: f64, n: f64) -> Result<f64, ModelError> {
        self.0.eval("U", 0.0, m, n)
    }
}

#[derive(Debug, Clone)]
pub enum AssumptionKind {
    /// Polynomial Lipschitz bound on `f` and `g`.
    A1 { k_bar: f64, beta: f64 },
    /// One-sided monotonicity with an optional `U` coupling term.
    A2 { k1: f64, q: f64, u: Option<UFunctional> },
    /// Khasminskii-type growth.
    A3 { k2: f64, p: f64 },
    /// Hölder continuity in time.
    A4 { k3: f64, beta: f64, sigma: f64 },
    /// Hölder continuity of the initial segment.
    A5 { k4: f64, gamma: f64 },
    /// Polynomial growth of first and second partials.
    A6 { k5: f64, beta: f64 },
    /// One-sided monotonicity without `U`.
    A39 { k1_hat: f64, q_hat: f64 },
}

impl AssumptionKind {
    pub fn label(&self) -> &'static str {
        match self {
            AssumptionKind::A1 { .. } => "A1-polyLipschitz",
            AssumptionKind::A2 { .. } => "A2-monotoneU",
            AssumptionKind::A3 { .. } => "A3-khasminskii",
            AssumptionKind::A4 { .. } => "A4-timeHolder",
            AssumptionKind::A5 { .. } => "A5-initialHolder",
            AssumptionKind::A6 { .. } => "A6-derivGrowth",
            AssumptionKind::A39 { .. } => "A39-monotone",
        }
    }

    /// Number of sampled coordinates.
    fn dims(&self) -> usize {
        match self {
            AssumptionKind::A1 { .. } | AssumptionKind::A2 { .. } | AssumptionKind::A39 { .. } => 5,
            AssumptionKind::A3 { .. } | AssumptionKind::A6 { .. } => 3,
            AssumptionKind::A4 { .. } => 4,
            AssumptionKind::A5 { .. } => 2,
        }
    }

    fn validate(&self) -> Result<(), ProbeError> {
        let bad = |m: String| Err(ProbeError::Invalid(m));
        let pos = |name: &str, v: f64| -> Result<(), ProbeError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ProbeError::Invalid(format!("{name} must be positive, got {v}")))
            }
        };
        let unit = |name: &str, v: f64| -> Result<(), ProbeError> {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(ProbeError::Invalid(format!("{name} must lie in (0, 1], got {v}")))
            }
        };
        let beta_ok = |b: f64| -> Result<(), ProbeError> {
            if b >= 0.0 && b.is_finite() {
                Ok(())
            } else {
                Err(ProbeError::Invalid(format!("β must be >= 0, got {b}")))
            }
        };
        match *self {
            AssumptionKind::A1 { k_bar, beta } => {
                pos("K̄", k_bar)?;
                beta_ok(beta)
            }
            // q = 2 is accepted: the worked example verifies the inequality with q = 2
            AssumptionKind::A2 { k1, q, .. } => {
                pos("K₁", k1)?;
                if q >= 2.0 && q.is_finite() {
                    Ok(())
                } else {
                    bad(format!("q must be >= 2, got {q}"))
                }
            }
            AssumptionKind::A3 { k2, p } => {
                pos("K₂", k2)?;
                if p > 2.0 && p.is_finite() {
                    Ok(())
                } else {
                    bad(format!("p must be > 2, got {p}"))
                }
            }
            AssumptionKind::A4 { k3, beta, sigma } => {
                pos("K₃", k3)?;
                beta_ok(beta)?;
                unit("σ", sigma)
            }
            AssumptionKind::A5 { k4, gamma } => {
                pos("K₄", k4)?;
                unit("γ", gamma)
            }
            AssumptionKind::A6 { k5, beta } => {
                pos("K₅", k5)?;
                beta_ok(beta)
            }
            AssumptionKind::A39 { k1_hat, q_hat } => {
                pos("K̂₁", k1_hat)?;
                if q_hat >= 2.0 && q_hat.is_finite() {
                    Ok(())
                } else {
                    bad(format!("q̂ must be >= 2, got {q_hat}"))
                }
            }
        }
    }
}

/// Sampling region. `x` and `y` bound both the primary and the barred
/// arguments. A5 ignores the box and samples `[-τ, 0]²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleBox {
    pub t: (f64, f64),
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl SampleBox {
    pub fn symmetric(t: (f64, f64), half_width: f64) -> Self {
        SampleBox {
            t,
            x: (-half_width, half_width),
            y: (-half_width, half_width),
        }
    }

    fn validate(&self) -> Result<(), ProbeError> {
        for (name, (lo, hi)) in [("t", self.t), ("x", self.x), ("y", self.y)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(ProbeError::Invalid(format!("bad {name} range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AssumptionCase {
    pub kind: AssumptionKind,
    pub region: SampleBox,
    /// Quasi-random samples, in addition to the deterministic points.
    pub samples: usize,
    pub seed: u64,
}

/// Result for one case.
///
/// `at` is `(t, x, y, x̄, ȳ)`. For A4 the second time is stored in the `x̄`
/// slot; for A5 the two times are stored as `(t, x)`. Unused slots are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub label: String,
    pub max_violation: f64,
    pub at: [f64; 5],
    pub samples: usize,
}

impl ProbeReport {
    pub fn violated(&self) -> bool {
        self.max_violation > VIOLATION_TOL
    }
}

const PRIMES: [u64; 5] = [2, 3, 5, 7, 11];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// `n` points of the Halton sequence in `[0,1)^d`, shifted modulo 1 by a
/// seed-dependent offset. Prefixes are stable: the first `n` points do not
/// depend on how many are requested.
pub fn halton(n: usize, dims: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(dims <= PRIMES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dims).map(|_| unit_open(rng.next_u64())).collect();
    (0..n)
        .map(|i| {
            (0..dims)
                .map(|d| (radical_inverse(i as u64 + 1, PRIMES[d]) + shift[d]).fract())
                .collect()
        })
        .collect()
}

/// Corners of `[0,1]^d`, axis points (centre with one coordinate at an end),
/// the centre, and for `d = 5` points on the `x = x̄, y = ȳ` diagonal.
fn deterministic_unit_points(dims: usize) -> Vec<Vec<f64>> {
    let mut pts = Vec::new();
    for mask in 0..(1usize << dims) {
        pts.push((0..dims).map(|d| ((mask >> d) & 1) as f64).collect());
    }
    pts.push(vec![0.5; dims]);
    for d in 0..dims {
        for end in [0.0, 1.0] {
            let mut p = vec![0.5; dims];
            p[d] = end;
            pts.push(p);
        }
    }
    if dims == 5 {
        for i in 0..=16 {
            let u = i as f64 / 16.0;
            for t in [0.0, 0.5, 1.0] {
                pts.push(vec![t, u, u, u, u]);
                pts.push(vec![t, u, 1.0 - u, u, 1.0 - u]);
            }
        }
    }
    pts
}

fn lerp((lo, hi): (f64, f64), u: f64) -> f64 {
    lo + (hi - lo) * u
}

fn sample_points(kind: &AssumptionKind, region: &SampleBox, delay: f64, n: usize, seed: u64) -> Vec<[f64; 5]> {
    let dims = kind.dims();
    let mut unit = deterministic_unit_points(dims);
    unit.extend(halton(n, dims, seed));
    unit.into_iter()
        .map(|u| match dims {
            5 => [
                lerp(region.t, u[0]),
                lerp(region.x, u[1]),
                lerp(region.y, u[2]),
                lerp(region.x, u[3]),
                lerp(region.y, u[4]),
            ],
            4 => [
                lerp(region.t, u[0]),
                lerp(region.x, u[1]),
                lerp(region.y, u[2]),
                lerp(region.t, u[3]),
                0.0,
            ],
            3 => [lerp(region.t, u[0]), lerp(region.x, u[1]), lerp(region.y, u[2]), 0.0, 0.0],
            _ => [lerp((-delay, 0.0), u[0]), lerp((-delay, 0.0), u[1]), 0.0, 0.0, 0.0],
        })
        .collect()
}

const A6_PARTIALS: [Partial; 10] = Partial::ALL;

/// `LHS − RHS` of the case's inequality at one point.
fn violation(spec: &ProblemSpec, kind: &AssumptionKind, p: &[f64; 5]) -> Result<f64, ModelError> {
    let [t, a, b, abar, bbar] = *p;
    let poly = |beta: f64| 1.0 + a.abs().powf(beta) + b.abs().powf(beta);
    Ok(match kind {
        AssumptionKind::A1 { k_bar, beta } => {
            let df = spec.drift(t, a, b)? - spec.drift(t, abar, bbar)?;
            let dg = spec.diffusion(t, a, b)? - spec.diffusion(t, abar, bbar)?;
            let w = poly(*beta) + abar.abs().powf(*beta) + bbar.abs().powf(*beta);
            df.abs().max(dg.abs()) - k_bar * w * ((a - abar).abs() + (b - bbar).abs())
        }
        AssumptionKind::A2 { k1, q, u } => {
            let df = spec.drift(t, a, b)? - spec.drift(t, abar, bbar)?;
            let dg = spec.diffusion(t, a, b)? - spec.diffusion(t, abar, bbar)?;
            let lhs = (a - abar) * df + (q - 1.0) * dg * dg;
            let mut rhs = k1 * ((a - abar).powi(2) + (b - bbar).powi(2));
            if let Some(u) = u {
                rhs += u.eval(b, bbar)? - u.eval(a, abar)?;
            }
            lhs - rhs
        }
        AssumptionKind::A39 { k1_hat, q_hat } => {
            let df = spec.drift(t, a, b)? - spec.drift(t, abar, bbar)?;
            let dg = spec.diffusion(t, a, b)? - spec.diffusion(t, abar, bbar)?;
            (a - abar) * df + (q_hat - 1.0) * dg * dg - k1_hat * ((a - abar).powi(2) + (b - bbar).powi(2))
        }
        AssumptionKind::A3 { k2, p } => {
            let g = spec.diffusion(t, a, b)?;
            a * spec.drift(t, a, b)? + (p - 1.0) * g * g - k2 * (1.0 + a * a + b * b)
        }
        AssumptionKind::A4 { k3, beta, sigma } => {
            let t2 = abar;
            let df = spec.drift(t, a, b)? - spec.drift(t2, a, b)?;
            let dg = spec.diffusion(t, a, b)? - spec.diffusion(t2, a, b)?;
            df.abs().max(dg.abs()) - k3 * poly(beta + 1.0) * (t - t2).abs().powf(*sigma)
        }
        AssumptionKind::A5 { k4, gamma } => {
            let (s1, s2) = (t, a);
            (spec.initial(s1)? - spec.initial(s2)?).abs() - k4 * (s1 - s2).abs().powf(*gamma)
        }
        AssumptionKind::A6 { k5, beta } => {
            let mut m = 0.0f64;
            for part in A6_PARTIALS {
                m = m.max(spec.partial(part, t, a, b)?.abs());
            }
            m - k5 * poly(beta + 1.0)
        }
    })
}

/// Partials a case needs that the spec cannot provide.
pub fn missing_partials(spec: &ProblemSpec, kind: &AssumptionKind) -> Vec<Partial> {
    match kind {
        AssumptionKind::A6 { .. } if !spec.finite_difference() => {
            A6_PARTIALS.iter().copied().filter(|p| !spec.has_partial(*p)).collect()
        }
        _ => Vec::new(),
    }
}

/// Max over an enumerated point set, ties going to the earliest point.
fn max_over(points: &[[f64; 5]], f: impl Fn(&[f64; 5]) -> Result<f64, ModelError> + Sync) -> Result<(f64, usize), ProbeError> {
    let vals: Vec<f64> = points
        .par_iter()
        .map(|p| f(p).map_err(|source| ProbeError::Evaluation { at: *p, source: Box::new(source) }))
        .collect::<Result<_, _>>()?;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (i, &v) in vals.iter().enumerate() {
        if v > best.0 {
            best = (v, i);
        }
    }
    Ok(best)
}

pub fn probe_assumption(spec: &ProblemSpec, case: &AssumptionCase) -> Result<ProbeReport, ProbeError> {
    case.kind.validate()?;
    case.region.validate()?;
    let missing = missing_partials(spec, &case.kind);
    if !missing.is_empty() {
        return Err(ProbeError::Capability {
            kind: case.kind.label(),
            missing,
        });
    }
    let points = sample_points(&case.kind, &case.region, spec.delay(), case.samples, case.seed);
    let (v, i) = max_over(&points, |p| violation(spec, &case.kind, p))?;
    Ok(ProbeReport {
        label: case.kind.label().to_string(),
        max_violation: v,
        at: points[i],
        samples: points.len(),
    })
}

/// For each `w`, the largest `max(|f|, |g|, |g₁|, |g₂|) − Λ(w)` over samples
/// with `t ∈ [0, T]` and `|x|, |y| ≤ w`.
pub fn probe_lambda_bound(
    spec: &ProblemSpec,
    policy: &TruncationPolicy,
    w_samples: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<ProbeReport>, ProbeError> {
    if policy.is_unbounded() {
        return Err(ProbeError::Invalid("an unbounded policy has no Λ to check".into()));
    }
    let kind = AssumptionKind::A3 { k2: 1.0, p: 3.0 };
    w_samples
        .iter()
        .map(|&w| {
            if !(w >= 1.0 && w.is_finite()) {
                return Err(ProbeError::Invalid(format!("w = {w} must be >= 1")));
            }
            let region = SampleBox::symmetric((0.0, spec.horizon()), w);
            let points = sample_points(&kind, &region, spec.delay(), samples, seed);
            let cap = policy.lambda(w);
            let (v, i) = max_over(&points, |p| {
                let (t, x, y) = (p[0], p[1], p[2]);
                let m = spec
                    .drift(t, x, y)?
                    .abs()
                    .max(spec.diffusion(t, x, y)?.abs())
                    .max(spec.diffusion_dx(t, x, y)?.abs())
                    .max(spec.diffusion_dy(t, x, y)?.abs());
                Ok(m - cap)
            })?;
            Ok(ProbeReport {
                label: format!("lambda(w={w})"),
                max_violation: v,
                at: points[i],
                samples: points.len(),
            })
        })
        .collect()
}

/// Estimates `sup U(m,n)/|m−n|²` over `|m|, |n| ≤ ς`, `m ≠ n`.
/// A diagnostic for the local constant `ρ_ς`; it cannot certify finiteness.
pub fn rho_estimate(u: &UFunctional, varsigma: f64, samples: usize, seed: u64) -> Result<f64, ProbeError> {
    if !(varsigma > 0.0 && varsigma.is_finite()) {
        return Err(ProbeError::Invalid(format!("ς = {varsigma} must be positive")));
    }
    let mut unit = deterministic_unit_points(2);
    unit.extend(halton(samples, 2, seed));
    let mut best = 0.0f64;
    for p in unit {
        let (m, n) = (lerp((-varsigma, varsigma), p[0]), lerp((-varsigma, varsigma), p[1]));
        let d2 = (m - n) * (m - n);
        if d2 == 0.0 {
            continue;
        }
        let v = u
            .eval(m, n)
            .map_err(|source| ProbeError::Evaluation { at: [0.0, m, n, 0.0, 0.0], source: Box::new(source) })?;
        best = best.max(v / d2);
    }
    Ok(best)
}
