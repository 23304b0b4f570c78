//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Exits non-zero if any criterion fails, except those listed in
//! `UNATTAINABLE`, which are still evaluated at the stated tolerance and
//! printed as FAIL.

use std::fs;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rayon::prelude::*;
use sdde_core::harness::{fit_rate, moment_estimate, strong_errors, HarnessError, Reference, StudyPlan};
use sdde_core::model::{truncation_radius, TimeGrid, TruncationPolicy};
use sdde_core::noise::BrownianStore;
use sdde_core::probe::{probe_assumption, AssumptionCase, AssumptionKind, SampleBox, UFunctional, VIOLATION_TOL};
use sdde_core::problems::{gbm, paper_example, superlinear, zeta};
use sdde_core::scheme::{simulate, Method, SchemeConfig};

/// Criteria that cannot hold as stated; the README explains why.
const UNATTAINABLE: &[(&str, &str)] = &[(
    "5",
    "on [-1e3, 1e3]^4 the one-sided constant is finite (about 1.2), so large K̂₁ cannot be violated there",
)];

struct Outcome {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn paper_levels() -> Vec<f64> {
    (6..=9).map(|k| 2f64.powi(-k)).collect()
}

/// Criteria 1 and 8 share one study.
fn paper_rate() -> Vec<Outcome> {
    let p = paper_example();
    let plan = StudyPlan::new(paper_levels(), Reference::SelfConvergence { dt: 2f64.powi(-11) }, 2000, 42)
        .with_q_bars(vec![2.0, 4.0]);
    let table = match strong_errors(&p.spec, &p.policy, &p.scheme, &plan) {
        Ok(t) => t,
        Err(e) => {
            return vec![
                Outcome { id: "1", title: "paper example rate", pass: false, detail: e.to_string() },
                Outcome { id: "8", title: "L^4 rate matches L^2 rate", pass: false, detail: e.to_string() },
            ]
        }
    };
    let s2 = fit_rate(&table, 2.0).map(|f| f.slope);
    let s4 = fit_rate(&table, 4.0).map(|f| f.slope);
    let errs: Vec<String> = table.rows_for(2.0).map(|r| format!("{:.3e}", r.error)).collect();
    let c1 = match &s2 {
        Ok(s) => Outcome {
            id: "1",
            title: "paper example rate",
            pass: (0.60..=0.90).contains(s),
            detail: format!("q̄=2 slope {s:.4}, want [0.60, 0.90]; errors {}", errs.join(" ")),
        },
        Err(e) => Outcome { id: "1", title: "paper example rate", pass: false, detail: e.to_string() },
    };
    let c8 = match (&s2, &s4) {
        (Ok(a), Ok(b)) => Outcome {
            id: "8",
            title: "L^4 rate matches L^2 rate",
            pass: (a - b).abs() <= 0.15,
            detail: format!("q̄=4 slope {b:.4}, q̄=2 slope {a:.4}, |diff| {:.4} <= 0.15", (a - b).abs()),
        },
        _ => Outcome { id: "8", title: "L^4 rate matches L^2 rate", pass: false, detail: "fit failed".into() },
    };
    vec![c1, c8]
}

fn gbm_rates() -> Outcome {
    let p = gbm(0.05, 0.2, 1.0, 0.25, 1.0).unwrap();
    let levels: Vec<f64> = (5..=9).map(|k| 2f64.powi(-k)).collect();
    let plan = StudyPlan::new(
        levels,
        Reference::Exact { fine_dt: 2f64.powi(-9), terminal: p.exact.clone().unwrap() },
        2000,
        42,
    );
    let slope = |cfg: &SchemeConfig| {
        strong_errors(&p.spec, &p.policy, cfg, &plan)
            .and_then(|t| fit_rate(&t, 2.0))
            .map(|f| f.slope)
    };
    match (slope(&p.scheme), slope(&p.scheme.with_method(Method::TruncatedEm))) {
        (Ok(m), Ok(e)) => Outcome {
            id: "2",
            title: "GBM classical orders",
            pass: (0.9..=1.1).contains(&m) && (0.4..=0.6).contains(&e),
            detail: format!("θ-Milstein slope {m:.4} (want [0.9, 1.1]), truncated EM slope {e:.4} (want [0.4, 0.6])"),
        },
        (a, b) => Outcome { id: "2", title: "GBM classical orders", pass: false, detail: format!("{a:?} {b:?}") },
    }
}

fn iterated_integrals() -> Outcome {
    let (dt, r, n) = (0.01, 64usize, 1_000_000u64);
    let fine = dt / r as f64;
    let samples: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = BrownianStore::generate(2024, i, fine, dt, 2.0 * dt).unwrap();
            let db = s.coarse_increment(dt, 1).unwrap();
            // Q2 from the raw increments, independent of the library routine
            let inc = s.increments();
            let (delayed, own) = (&inc[r..2 * r], &inc[2 * r..3 * r]);
            let mut partial = 0.0;
            let mut q2 = 0.0;
            for j in 0..r {
                q2 += partial * own[j];
                partial += delayed[j];
            }
            let lib = s.q2(dt, 1, 1).unwrap();
            assert!((lib - q2).abs() <= 1e-15 * (1.0 + q2.abs()));
            (0.5 * (db * db - dt), q2)
        })
        .collect();
    let stats = |v: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = v.collect();
        let m = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        (m, (var / n as f64).sqrt(), var)
    };
    let (m1, se1, v1) = stats(&mut samples.iter().map(|s| s.0));
    let (m2, se2, v2) = stats(&mut samples.iter().map(|s| s.1));
    let target = dt * dt / 2.0;
    let ok = m1.abs() <= 3.0 * se1
        && m2.abs() <= 3.0 * se2
        && (v1 / target - 1.0).abs() <= 0.03
        && (v2 / target - 1.0).abs() <= 0.03;
    Outcome {
        id: "3",
        title: "iterated-integral moments",
        pass: ok,
        detail: format!(
            "Q1 mean {m1:.2e} (3se {:.2e}) var/(Δ²/2) {:.4}; Q2 mean {m2:.2e} (3se {:.2e}) var/(Δ²/2) {:.4}",
            3.0 * se1,
            v1 / target,
            3.0 * se2,
            v2 / target
        ),
    }
}

fn oracle_drift(t: f64, x: f64, y: f64) -> f64 {
    y.abs().powf(1.25) / 8.0 - 5.0 * x * x * x + 2.0 * zeta(t) * x
}

fn oracle_diffusion(t: f64, x: f64, y: f64) -> f64 {
    0.5 * x.abs().powf(1.5) + zeta(t) * y
}

fn clamp(v: f64, r: f64) -> f64 {
    v.clamp(-r, r)
}

/// Plain bisection for `y − θΔ f(t, π(y), π(yd)) = c`; the left side is increasing.
fn bisection(theta_dt: f64, r: f64, t: f64, yd: f64, c: f64) -> f64 {
    let h = |y: f64| y - theta_dt * oracle_drift(t, clamp(y, r), clamp(yd, r)) - c;
    let (mut lo, mut hi) = (c - 1.0, c + 1.0);
    while h(lo) > 0.0 {
        lo -= 2.0 * (hi - lo);
    }
    while h(hi) < 0.0 {
        hi += 2.0 * (hi - lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn implicit_contract() -> Outcome {
    let p = paper_example();
    let theta = p.scheme.theta;
    let mut checked = 0usize;
    let (mut worst_res, mut worst_gap) = (0.0f64, 0.0f64);
    'outer: for (level, dt) in paper_levels().into_iter().enumerate() {
        let grid = TimeGrid::for_problem(&p.spec, dt).unwrap();
        let r = truncation_radius(&p.policy, dt).unwrap();
        let m = grid.m_delay() as i64;
        for path in 0..u64::MAX {
            // the store is 8x finer than the level so the delayed Itô sum is non-trivial
            let store = BrownianStore::generate(77 + level as u64, path, dt / 8.0, 0.25, 1.0).unwrap();
            let tr = simulate(&p.spec, &p.policy, &grid, &p.scheme, &store).unwrap();
            let yv = |k: i64| tr.value(k);
            let inc = store.increments();
            let fine = |k: i64| {
                let start = (k + m) as usize * 8;
                &inc[start..start + 8]
            };
            for k in 0..grid.m_total() as i64 {
                let (t, tn) = (grid.time(k), grid.time(k + 1));
                let (x, y) = (clamp(yv(k), r), clamp(yv(k - m), r));
                let db: f64 = fine(k).iter().sum();
                let f = oracle_drift(t, x, y);
                let g = oracle_diffusion(t, x, y);
                let g1 = 0.75 * x.abs().sqrt() * x.signum();
                let mut c = yv(k) + (1.0 - theta) * dt * f + g * db + g1 * g * 0.5 * (db * db - dt);
                if k >= m {
                    let (delayed, own) = (fine(k - m), fine(k));
                    let (mut partial, mut q2) = (0.0, 0.0);
                    for j in 0..8 {
                        q2 += partial * own[j];
                        partial += delayed[j];
                    }
                    let gd = oracle_diffusion(grid.time(k - m), y, clamp(yv(k - 2 * m), r));
                    c += zeta(t) * gd * q2;
                }
                let yn = yv(k + 1);
                let res = (yn - theta * dt * oracle_drift(tn, clamp(yn, r), clamp(yv(k + 1 - m), r)) - c).abs();
                let want = bisection(theta * dt, r, tn, yv(k + 1 - m), c);
                worst_res = worst_res.max(res);
                worst_gap = worst_gap.max((yn - want).abs());
                checked += 1;
                if checked == 10_000 {
                    break 'outer;
                }
            }
            if path > 1000 {
                break;
            }
        }
    }
    Outcome {
        id: "4",
        title: "implicit-solve contract",
        pass: checked == 10_000 && worst_res <= 1e-12 && worst_gap <= 1e-10,
        detail: format!("{checked} steps; max residual {worst_res:.2e} (<= 1e-12); max |Y − bisection| {worst_gap:.2e} (<= 1e-10)"),
    }
}

fn assumption_probe() -> Outcome {
    let p = paper_example();
    let a2 = AssumptionCase {
        kind: AssumptionKind::A2 { k1: 8.0, q: 2.0, u: Some(UFunctional::quartic()) },
        region: SampleBox::symmetric((0.0, 1.0), 5.0),
        samples: 100_000,
        seed: 42,
    };
    let r2 = probe_assumption(&p.spec, &a2).unwrap();
    let mut sweep = Vec::new();
    for e in -2..=6 {
        let k = 10f64.powi(e);
        let case = AssumptionCase {
            kind: AssumptionKind::A39 { k1_hat: k, q_hat: 2.0 },
            region: SampleBox::symmetric((0.0, 1.0), 1e3),
            samples: 100_000,
            seed: 42,
        };
        sweep.push((k, probe_assumption(&p.spec, &case).unwrap().max_violation));
    }
    let a2_ok = r2.max_violation <= VIOLATION_TOL;
    let a39_ok = sweep.iter().all(|&(_, v)| v > 0.0);
    let violated: Vec<String> = sweep.iter().filter(|s| s.1 > 0.0).map(|s| format!("{:e}", s.0)).collect();
    let clean: Vec<String> = sweep.iter().filter(|s| s.1 <= 0.0).map(|s| format!("{:e}", s.0)).collect();
    Outcome {
        id: "5",
        title: "assumption probe",
        pass: a2_ok && a39_ok,
        detail: format!(
            "A2 max violation {:.3e} ({}); A39 violated for K̂₁ in [{}], not violated for K̂₁ in [{}]",
            r2.max_violation,
            if a2_ok { "ok" } else { "violated" },
            violated.join(", "),
            clean.join(", ")
        ),
    }
}

fn moments() -> Outcome {
    let p = paper_example();
    let mut vals = Vec::new();
    let mut failure = None;
    for dt in paper_levels() {
        let grid = TimeGrid::for_problem(&p.spec, dt).unwrap();
        for seed in [1u64, 2, 3] {
            match moment_estimate(&p.spec, &p.policy, &p.scheme, &grid, 2000, 2.0, seed) {
                Ok(v) => vals.push(v),
                Err(e) => failure = Some(e.to_string()),
            }
        }
    }
    let (lo, hi) = vals.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    let spread = hi / lo - 1.0;
    let sl = superlinear(3.0).unwrap();
    let grid = TimeGrid::for_problem(&sl.spec, 0.125).unwrap();
    let explicit = SchemeConfig::default().with_theta(0.0);
    let raw = moment_estimate(&sl.spec, &TruncationPolicy::unbounded(), &explicit, &grid, 100, 2.0, 0);
    let tamed = moment_estimate(&sl.spec, &sl.policy, &explicit, &grid, 100, 2.0, 0);
    let blew_up = matches!(raw, Err(HarnessError::BlowUp { .. }));
    Outcome {
        id: "6",
        title: "moment boundedness",
        pass: failure.is_none() && vals.iter().all(|v| v.is_finite()) && spread < 0.2 && blew_up && tamed.is_ok(),
        detail: format!(
            "max E|Y|² in [{lo:.4}, {hi:.4}] over 4 steps x 3 seeds (spread {:.1}% < 20%){}; untruncated explicit: {}; truncated: {}",
            100.0 * spread,
            failure.map(|f| format!(" error: {f}")).unwrap_or_default(),
            match &raw {
                Err(e) => e.to_string(),
                Ok(v) => format!("finite {v}"),
            },
            match &tamed {
                Ok(v) => format!("finite {v:.3}"),
                Err(e) => e.to_string(),
            }
        ),
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let cfg = dir.path().join("study.conf");
    fs::write(
        &cfg,
        "[problem]\nbuiltin = paper_example\n[study]\nlevels = \"2^-6, 2^-7, 2^-8, 2^-9\"\nreference_dt = 2^-11\npaths = 200\nq_bars = \"2, 4\"\nseed = 42\n",
    )
    .unwrap();
    let mut files = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("t{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_sdde"))
            .args(["convergence", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--threads", threads])
            .env_remove("SDDE_THREADS")
            .output()
            .unwrap();
        files.push(if status.status.success() { fs::read(out.join("errors.csv")).ok() } else { None });
    }
    let same = files[0].is_some() && files[0] == files[1];
    Outcome {
        id: "7",
        title: "determinism across threads",
        pass: same,
        detail: format!(
            "errors.csv with --threads 1 and --threads 4: {}",
            if same { "byte-identical" } else { "differ or missing" }
        ),
    }
}

fn main() -> ExitCode {
    let mut outcomes: Vec<Outcome> = Vec::new();
    let timed = |name: &str, f: &dyn Fn() -> Vec<Outcome>| {
        let t0 = Instant::now();
        let r = f();
        eprintln!("  ({name}: {:.1}s)", t0.elapsed().as_secs_f64());
        r
    };
    outcomes.extend(timed("1+8", &paper_rate));
    outcomes.extend(timed("2", &|| vec![gbm_rates()]));
    outcomes.extend(timed("3", &|| vec![iterated_integrals()]));
    outcomes.extend(timed("4", &|| vec![implicit_contract()]));
    outcomes.extend(timed("5", &|| vec![assumption_probe()]));
    outcomes.extend(timed("6", &|| vec![moments()]));
    outcomes.extend(timed("7", &|| vec![determinism()]));
    outcomes.sort_by_key(|o| o.id);

    let mut unexpected = 0;
    for o in &outcomes {
        let known = UNATTAINABLE.iter().find(|(id, _)| *id == o.id);
        println!(
            "{} criterion {}: {} :: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.title,
            o.detail
        );
        if !o.pass {
            match known {
                Some((_, why)) => println!("     known unattainable: {why}"),
                None => unexpected += 1,
            }
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
