//! Run configuration.
//!
//! Line-based sections `[problem] [policy] [scheme] [study] [probe]` holding
//! `key = value` pairs. `#` starts a comment. Values may be quoted; numbers
//! are constant expressions (`2^-6`, `1e-12`, `1/8`). Lists are comma
//! separated. `[probe]` may repeat; every other section appears at most once.

use std::collections::BTreeMap;
use std::fmt;

use sdde_core::expr::{self, Expr};
use sdde_core::harness::{Reference, StudyPlan};
use sdde_core::model::{BelowRange, Coefficient, Partial, ProblemSpec, TruncationPolicy};
use sdde_core::probe::{AssumptionCase, AssumptionKind, SampleBox, UFunctional};
use sdde_core::problems::{self, PaperExample, Problem};
use sdde_core::scheme::{Method, SchemeConfig};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigError {
    /// 1-based line, or 0 when the error is not tied to a line.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "config line {}: {}", self.line, self.message)
        } else {
            write!(f, "config: {}", self.message)
        }
    }
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        line,
        message: message.into(),
    })
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// One `[name]` block.
#[derive(Debug, Clone, Default)]
pub struct Section {
    header_line: usize,
    entries: BTreeMap<String, Entry>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn number(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => constant(&e.value, e.line).map(Some),
        }
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => split_list(&e.value)
                .iter()
                .map(|s| constant(s, e.line))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }

    fn integer(&mut self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<u64>()
                .map(Some)
                .or_else(|_| err(e.line, format!("`{key}` must be a non-negative integer, got `{}`", e.value))),
        }
    }

    fn expr(&mut self, key: &str) -> Result<Option<Coefficient>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => match expr::parse(&e.value) {
                Ok(x) => Ok(Some(Coefficient::parsed(x))),
                Err(p) => err(e.line, format!("`{key}`: {p}")),
            },
        }
    }

    fn word(&mut self, key: &str) -> Option<(String, usize)> {
        self.take(key).map(|e| (e.value, e.line))
    }

    fn finish(self, name: &str) -> Result<(), ConfigError> {
        if let Some((k, e)) = self.entries.into_iter().next() {
            return err(e.line, format!("unknown key `{k}` in [{name}]"));
        }
        Ok(())
    }
}

/// Splits on commas outside parentheses.
fn split_list(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    if !cur.trim().is_empty() || !out.is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

/// Evaluates a variable-free expression.
fn constant(src: &str, line: usize) -> Result<f64, ConfigError> {
    let e: Expr = match expr::parse(src) {
        Ok(e) => e,
        Err(p) => return err(line, format!("`{src}`: {p}")),
    };
    if e.uses_variables() {
        return err(line, format!("`{src}` must be a constant"));
    }
    match e.eval(0.0, 0.0, 0.0) {
        Ok(v) => Ok(v),
        Err(x) => err(line, format!("`{src}`: {x}")),
    }
}

/// Sections as written, before interpretation.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    pub problem: Option<Section>,
    pub policy: Option<Section>,
    pub scheme: Option<Section>,
    pub study: Option<Section>,
    pub probes: Vec<Section>,
}

pub fn parse_sections(text: &str) -> Result<RawConfig, ConfigError> {
    let mut raw = RawConfig::default();
    let mut current: Option<(String, Section)> = None;

    fn store(raw: &mut RawConfig, name: String, sec: Section) -> Result<(), ConfigError> {
        let line = sec.header_line;
        let slot = match name.as_str() {
            "problem" => &mut raw.problem,
            "policy" => &mut raw.policy,
            "scheme" => &mut raw.scheme,
            "study" => &mut raw.study,
            "probe" => {
                raw.probes.push(sec);
                return Ok(());
            }
            _ => return err(line, format!("unknown section [{name}]")),
        };
        if slot.is_some() {
            return err(line, format!("section [{name}] appears twice"));
        }
        *slot = Some(sec);
        Ok(())
    }

    for (i, raw_line) in text.lines().enumerate() {
        let n = i + 1;
        let line = strip_comment(raw_line).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return err(n, "unterminated section header");
            };
            if let Some((old, sec)) = current.take() {
                store(&mut raw, old, sec)?;
            }
            current = Some((
                name.trim().to_string(),
                Section {
                    header_line: n,
                    entries: BTreeMap::new(),
                },
            ));
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return err(n, format!("expected `key = value`, got `{line}`"));
        };
        let Some((_, sec)) = current.as_mut() else {
            return err(n, "key outside of any section");
        };
        let key = k.trim().to_string();
        let mut value = v.trim();
        if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
            value = &value[1..value.len() - 1];
        } else if value.contains('"') {
            return err(n, "unbalanced quotes");
        }
        if key.is_empty() {
            return err(n, "empty key");
        }
        if sec.entries.contains_key(&key) {
            return err(n, format!("duplicate key `{key}`"));
        }
        sec.entries.insert(key, Entry { value: value.to_string(), line: n });
    }
    if let Some((name, sec)) = current.take() {
        store(&mut raw, name, sec)?;
    }
    Ok(raw)
}

fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

/// A probe entry: either an assumption case or a Λ-bound sweep.
#[derive(Debug, Clone)]
pub enum ProbeItem {
    Case(AssumptionCase),
    Lambda { w: Vec<f64>, samples: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: Problem,
    pub scheme: SchemeConfig,
    /// Step size for `simulate`.
    pub dt: Option<f64>,
    pub study: Option<StudyPlan>,
    /// Path index for `simulate`.
    pub path: u64,
    pub seed: u64,
    pub probes: Vec<ProbeItem>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw = parse_sections(text)?;
        interpret(raw)
    }
}

fn interpret(mut raw: RawConfig) -> Result<RunConfig, ConfigError> {
    let Some(mut psec) = raw.problem.take() else {
        return err(0, "missing [problem] section");
    };
    let mut problem = build_problem(&mut psec)?;
    psec.finish("problem")?;

    if let Some(mut pol) = raw.policy.take() {
        problem.policy = build_policy(&mut pol)?;
        pol.finish("policy")?;
    } else if problem.name == "custom" {
        return err(0, "expression-defined problems need a [policy] section");
    }

    let mut scheme = problem.scheme;
    let mut dt = None;
    if let Some(mut s) = raw.scheme.take() {
        if let Some(th) = s.number("theta")? {
            scheme.theta = th;
        }
        if let Some(k1) = s.number("k1")? {
            scheme.k1_bound = k1;
        }
        if let Some(v) = s.number("newton_abs_tol")? {
            scheme.newton_abs_tol = v;
        }
        if let Some(v) = s.number("newton_rel_tol")? {
            scheme.newton_rel_tol = v;
        }
        if let Some(v) = s.integer("newton_max_iter")? {
            scheme.newton_max_iter = u32::try_from(v).or_else(|_| err(s.header_line, "newton_max_iter too large"))?;
        }
        if let Some((m, line)) = s.word("method") {
            scheme.method = match m.as_str() {
                "milstein" | "theta_milstein" => Method::ThetaMilstein,
                "em" | "euler" => Method::TruncatedEm,
                other => return err(line, format!("unknown method `{other}` (milstein, em)")),
            };
        }
        dt = s.number("dt")?;
        let line = s.header_line;
        s.finish("scheme")?;
        if !(0.0..=1.0).contains(&scheme.theta) {
            return err(line, format!("theta = {} outside [0, 1]", scheme.theta));
        }
    }
    problem.scheme = scheme;

    let mut seed = 0u64;
    let mut path = 0u64;
    let mut study = None;
    if let Some(mut s) = raw.study.take() {
        let line = s.header_line;
        if let Some(v) = s.integer("seed")? {
            seed = v;
        }
        if let Some(v) = s.integer("path")? {
            path = v;
        }
        let levels = s.list("levels")?;
        let reference_dt = s.number("reference_dt")?;
        let paths = s.integer("paths")?;
        let q_bars = s.list("q_bars")?.unwrap_or_else(|| vec![2.0]);
        let reference_kind = s.word("reference");
        let sup = s.word("sup_error");
        if let Some(levels) = levels {
            let Some(paths) = paths else {
                return err(line, "[study] with levels needs `paths`");
            };
            let reference = match reference_kind.as_ref().map(|(w, l)| (w.as_str(), *l)) {
                None | Some(("self", _)) => {
                    let Some(r) = reference_dt else {
                        return err(line, "self-convergence needs `reference_dt`");
                    };
                    Reference::SelfConvergence { dt: r }
                }
                Some(("exact", l)) => {
                    let Some(exact) = problem.exact.clone() else {
                        return err(l, format!("problem `{}` has no exact solution", problem.name));
                    };
                    let fine = reference_dt
                        .unwrap_or_else(|| levels.iter().copied().fold(f64::INFINITY, f64::min));
                    Reference::Exact {
                        fine_dt: fine,
                        terminal: exact,
                    }
                }
                Some((other, l)) => return err(l, format!("unknown reference `{other}` (self, exact)")),
            };
            let mut plan = StudyPlan::new(levels, reference, paths as usize, seed).with_q_bars(q_bars);
            plan.sup_error = match sup {
                None => false,
                Some((v, l)) => parse_bool(&v, l)?,
            };
            study = Some(plan);
        }
        s.finish("study")?;
    }

    let mut probes = Vec::with_capacity(raw.probes.len());
    for mut sec in raw.probes {
        probes.push(build_probe(&mut sec, &problem.spec)?);
        sec.finish("probe")?;
    }

    Ok(RunConfig {
        problem,
        scheme,
        dt,
        study,
        path,
        seed,
        probes,
    })
}

fn parse_bool(v: &str, line: usize) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => err(line, format!("expected true or false, got `{v}`")),
    }
}

fn required(sec: &mut Section, key: &str, what: &str) -> Result<f64, ConfigError> {
    match sec.number(key)? {
        Some(v) => Ok(v),
        None => err(sec.header_line, format!("{what} needs `{key}`")),
    }
}

fn build_problem(sec: &mut Section) -> Result<Problem, ConfigError> {
    let line = sec.header_line;
    let model = |e: sdde_core::model::ModelError| ConfigError {
        line,
        message: e.to_string(),
    };
    match sec.word("builtin") {
        Some((name, bline)) => match name.as_str() {
            "paper_example" => {
                let mut p = PaperExample::default();
                if let Some(d) = sec.number("delay")? {
                    p.delay = d;
                }
                if let Some(xi) = sec.expr("initial")? {
                    p.initial = xi;
                }
                problems::paper_example_with(p).map_err(model)
            }
            "gbm" => {
                let mu = sec.number("mu")?.unwrap_or(0.05);
                let sigma = sec.number("sigma")?.unwrap_or(0.2);
                let x0 = sec.number("x0")?.unwrap_or(1.0);
                let delay = sec.number("delay")?.unwrap_or(0.25);
                let horizon = sec.number("horizon")?.unwrap_or(1.0);
                problems::gbm(mu, sigma, x0, delay, horizon).map_err(model)
            }
            "linear_delay" => {
                let a = required(sec, "a", "linear_delay")?;
                let b = required(sec, "b", "linear_delay")?;
                let c = required(sec, "c", "linear_delay")?;
                let d = required(sec, "d", "linear_delay")?;
                let delay = sec.number("delay")?.unwrap_or(0.25);
                let horizon = sec.number("horizon")?.unwrap_or(1.0);
                let initial = sec.expr("initial")?.unwrap_or_else(|| Coefficient::constant(1.0));
                problems::linear_delay(a, b, c, d, delay, horizon, initial).map_err(model)
            }
            "superlinear" => {
                let x0 = sec.number("x0")?.unwrap_or(3.0);
                problems::superlinear(x0).map_err(model)
            }
            other => err(
                bline,
                format!("unknown builtin `{other}` (one of {})", problems::BUILTINS.join(", ")),
            ),
        },
        None => {
            let mut b = ProblemSpec::builder();
            match sec.expr("drift")? {
                Some(f) => b = b.drift(f),
                None => return err(line, "expression problem needs `drift`"),
            }
            match sec.expr("diffusion")? {
                Some(g) => b = b.diffusion(g),
                None => return err(line, "expression problem needs `diffusion`"),
            }
            for p in Partial::ALL {
                if let Some(c) = sec.expr(p.name())? {
                    b = b.partial(p, c);
                }
            }
            b = b.delay(required(sec, "delay", "expression problem")?);
            b = b.horizon(required(sec, "horizon", "expression problem")?);
            match sec.expr("initial")? {
                Some(xi) => b = b.initial_segment(xi),
                None => return err(line, "expression problem needs `initial`"),
            }
            if let Some(beta) = sec.number("beta")? {
                b = b.growth_beta(beta);
            }
            if let Some((v, l)) = sec.word("finite_difference") {
                b = b.finite_difference(parse_bool(&v, l)?);
            }
            let spec = b.build().map_err(model)?;
            Ok(Problem {
                name: "custom",
                spec,
                policy: TruncationPolicy::unbounded(),
                scheme: SchemeConfig::default(),
                exact: None,
            })
        }
    }
}

fn build_policy(sec: &mut Section) -> Result<TruncationPolicy, ConfigError> {
    let line = sec.header_line;
    if let Some((v, l)) = sec.word("unbounded") {
        if parse_bool(&v, l)? {
            return Ok(TruncationPolicy::unbounded());
        }
    }
    let coef = required(sec, "lambda_coef", "[policy]")?;
    let exp = required(sec, "lambda_exp", "[policy]")?;
    let alpha = required(sec, "alpha_exp", "[policy]")?;
    let k0 = required(sec, "k0", "[policy]")?;
    let mut pol = TruncationPolicy::power_law(coef, exp, alpha, k0).map_err(|e| ConfigError {
        line,
        message: e.to_string(),
    })?;
    if let Some((v, l)) = sec.word("below_range") {
        pol = pol.with_below_range(match v.as_str() {
            "clamp" => BelowRange::ClampToOne,
            "invert" => BelowRange::Invert,
            other => return err(l, format!("unknown below_range `{other}` (clamp, invert)")),
        });
    }
    Ok(pol)
}

fn range(sec: &mut Section, key: &str, default: (f64, f64)) -> Result<(f64, f64), ConfigError> {
    let line = sec.entries.get(key).map(|e| e.line).unwrap_or(sec.header_line);
    match sec.list(key)? {
        None => Ok(default),
        Some(v) if v.len() == 2 && v[0] <= v[1] => Ok((v[0], v[1])),
        Some(v) => err(line, format!("`{key}` must be `lo, hi`, got {v:?}")),
    }
}

fn build_probe(sec: &mut Section, spec: &ProblemSpec) -> Result<ProbeItem, ConfigError> {
    let line = sec.header_line;
    let samples = sec.integer("samples")?.unwrap_or(10_000) as usize;
    let seed = sec.integer("seed")?.unwrap_or(0);
    let Some((kind, kline)) = sec.word("assumption") else {
        return err(line, "[probe] needs `assumption`");
    };
    let k = |sec: &mut Section, key: &str| required(sec, key, &kind);
    let kind = match kind.as_str() {
        "lambda" => {
            let Some(w) = sec.list("w")? else {
                return err(line, "lambda probe needs `w`");
            };
            return Ok(ProbeItem::Lambda { w, samples, seed });
        }
        "A1" => AssumptionKind::A1 {
            k_bar: k(sec, "k_bar")?,
            beta: k(sec, "beta")?,
        },
        "A2" => AssumptionKind::A2 {
            k1: k(sec, "k1")?,
            q: k(sec, "q")?,
            u: sec.expr("u")?.map(UFunctional),
        },
        "A3" => AssumptionKind::A3 {
            k2: k(sec, "k2")?,
            p: k(sec, "p")?,
        },
        "A4" => AssumptionKind::A4 {
            k3: k(sec, "k3")?,
            beta: k(sec, "beta")?,
            sigma: k(sec, "sigma")?,
        },
        "A5" => AssumptionKind::A5 {
            k4: k(sec, "k4")?,
            gamma: k(sec, "gamma")?,
        },
        "A6" => AssumptionKind::A6 {
            k5: k(sec, "k5")?,
            beta: k(sec, "beta")?,
        },
        "A39" => AssumptionKind::A39 {
            k1_hat: k(sec, "k1_hat")?,
            q_hat: k(sec, "q_hat")?,
        },
        other => {
            return err(
                kline,
                format!("unknown assumption `{other}` (A1, A2, A3, A4, A5, A6, A39, lambda)"),
            )
        }
    };
    let region = SampleBox {
        t: range(sec, "t", (0.0, spec.horizon()))?,
        x: range(sec, "x", (-1.0, 1.0))?,
        y: range(sec, "y", (-1.0, 1.0))?,
    };
    Ok(ProbeItem::Case(AssumptionCase {
        kind,
        region,
        samples,
        seed,
    }))
}
