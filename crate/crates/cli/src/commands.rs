use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use sdde_core::harness::{self, HarnessError, RateFit};
use sdde_core::model::{ModelError, TimeGrid};
use sdde_core::noise::BrownianStore;
use sdde_core::probe::{self, ProbeError};
use sdde_core::scheme::{self, SchemeError};
use thiserror::Error;

use crate::config::{ConfigError, ProbeItem, RunConfig};
use crate::svg;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error("{0}")]
    Capability(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    /// 0 success, 2 config, 3 simulation, 4 capability, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Simulation(_) => 3,
            CliError::Capability(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

fn config_err(message: impl Into<String>) -> CliError {
    CliError::Config(ConfigError {
        line: 0,
        message: message.into(),
    })
}

fn from_model(e: ModelError) -> CliError {
    config_err(e.to_string())
}

/// 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let p = &cfg.problem;
    let Some(dt) = cfg.dt else {
        return Err(config_err("simulate needs `dt` in [scheme]"));
    };
    let grid = TimeGrid::for_problem(&p.spec, dt).map_err(from_model)?;
    p.policy.check_admissible(&[dt]).map_err(from_model)?;
    cfg.scheme
        .validate(dt)
        .map_err(|e| config_err(e.to_string()))?;
    let store = BrownianStore::generate(cfg.seed, cfg.path, dt, p.spec.delay(), p.spec.horizon())
        .map_err(|e| config_err(e.to_string()))?;
    let tr = scheme::simulate(&p.spec, &p.policy, &grid, &cfg.scheme, &store).map_err(|e| {
        CliError::Simulation(format!("path {} (seed {}): {e}", cfg.path, cfg.seed))
    })?;
    let mut csv = String::from("k,t,y,newton_iters,truncated\n");
    for (k, t, y) in tr.points() {
        let _ = writeln!(
            csv,
            "{k},{},{},{},{}",
            num(t),
            num(y),
            tr.newton_iters(k),
            u8::from(tr.truncated(k))
        );
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("trajectory.csv"), &csv)?;
    Ok(format!(
        "wrote {} rows to {}; Y(T) = {}\n",
        grid.len(),
        out.join("trajectory.csv").display(),
        num(tr.terminal())
    ))
}

fn harness_error(e: HarnessError) -> CliError {
    match e {
        HarnessError::Plan(_) | HarnessError::Model(_) | HarnessError::Noise(_) => config_err(e.to_string()),
        HarnessError::Path { ref source, .. } if matches!(**source, SchemeError::Config(_)) => {
            config_err(e.to_string())
        }
        other => CliError::Simulation(other.to_string()),
    }
}

pub fn cmd_convergence(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let p = &cfg.problem;
    let Some(plan) = &cfg.study else {
        return Err(config_err("convergence needs `levels` and `paths` in [study]"));
    };
    let mut all_dt = plan.levels.clone();
    all_dt.push(plan.reference.fine_dt());
    p.policy.check_admissible(&all_dt).map_err(from_model)?;
    for &dt in &all_dt {
        cfg.scheme.validate(dt).map_err(|e| config_err(e.to_string()))?;
    }
    let table = harness::strong_errors(&p.spec, &p.policy, &cfg.scheme, plan).map_err(harness_error)?;

    let mut csv = String::from("dt,q_bar,error,stderr,num_paths\n");
    for r in &table.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            num(r.dt),
            num(r.q_bar),
            num(r.error),
            num(r.stderr),
            r.num_paths
        );
    }
    let mut report = String::new();
    let mut fits: Vec<(f64, Option<RateFit>)> = Vec::new();
    for &q in &plan.q_bars {
        match harness::fit_rate(&table, q) {
            Ok(f) => {
                let _ = writeln!(report, "q_bar = {q}: slope = {:.4} (r2 = {:.4})", f.slope, f.r2);
                fits.push((q, Some(f)));
            }
            Err(e) => {
                let _ = writeln!(report, "q_bar = {q}: slope undefined ({e})");
                fits.push((q, None));
            }
        }
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("errors.csv"), &csv)?;
    fs::write(out.join("rate.svg"), svg::rate_plot(&table, &fits))?;
    if let Some(sup) = &table.sup_errors {
        // diagnostic only; the terminal error is what the rate refers to
        let mut s = String::from("dt,rms_sup_error\n");
        for (dt, e) in sup {
            let _ = writeln!(s, "{},{}", num(*dt), num(*e));
        }
        fs::write(out.join("sup_errors.csv"), s)?;
    }
    Ok(report)
}

pub fn cmd_probe(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let spec = &cfg.problem.spec;
    let mut reports = Vec::new();
    for item in &cfg.probes {
        match item {
            ProbeItem::Case(case) => match probe::probe_assumption(spec, case) {
                Ok(r) => reports.push(r),
                Err(e @ ProbeError::Capability { .. }) => return Err(CliError::Capability(e.to_string())),
                Err(e @ ProbeError::Invalid(_)) => return Err(config_err(e.to_string())),
                Err(e) => return Err(CliError::Simulation(e.to_string())),
            },
            ProbeItem::Lambda { w, samples, seed } => {
                match probe::probe_lambda_bound(spec, &cfg.problem.policy, w, *samples, *seed) {
                    Ok(rs) => reports.extend(rs),
                    Err(e @ ProbeError::Invalid(_)) => return Err(config_err(e.to_string())),
                    Err(e) => return Err(CliError::Simulation(e.to_string())),
                }
            }
        }
    }
    let mut csv = String::from("assumption,max_violation,at_t,at_x,at_y,at_xbar,at_ybar,samples\n");
    let mut text = String::new();
    for r in &reports {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.label,
            num(r.max_violation),
            num(r.at[0]),
            num(r.at[1]),
            num(r.at[2]),
            num(r.at[3]),
            num(r.at[4]),
            r.samples
        );
        if r.violated() {
            let _ = writeln!(
                text,
                "{}: violated, max LHS - RHS = {:e} at {:?} ({} samples)",
                r.label, r.max_violation, r.at, r.samples
            );
        } else {
            let _ = writeln!(
                text,
                "{}: no violation found among {} samples (max LHS - RHS = {:e})",
                r.label, r.samples, r.max_violation
            );
        }
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("probe.csv"), csv)?;
    Ok(text)
}
