use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn sdde(args: &[&str], dir: &Path, config: &str) -> Output {
    let cfg = dir.join("run.conf");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_sdde"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .env_remove("SDDE_THREADS")
        .output()
        .unwrap()
}

fn run_ok(cmd: &str, config: &str, extra: &[&str]) -> (TempDir, String) {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let mut args = vec![cmd, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = sdde(&args, dir.path(), config);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (dir, String::from_utf8(o.stdout).unwrap())
}

fn code(cmd: &str, config: &str) -> (i32, String) {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = sdde(&[cmd, "--out", out.to_str().unwrap()], dir.path(), config);
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stderr).into_owned())
}

const FLAT: &str = "[problem]
drift = 0
diffusion = 0
g_x = 0
g_y = 0
delay = 0.25
horizon = 1
initial = 1
[policy]
unbounded = true
[scheme]
dt = 2^-4
";

#[test]
fn flat_trajectory() {
    let (dir, _) = run_ok("simulate", FLAT, &[]);
    let csv = fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,t,y,newton_iters,truncated"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // M = 4, M′ = 16
    assert_eq!(rows.len(), 4 + 16 + 1);
    assert_eq!(rows[0][0], "-4");
    assert_eq!(rows[20][0], "16");
    for r in &rows {
        assert_eq!(r[2].parse::<f64>().unwrap(), 1.0);
    }
    assert_eq!(rows[20][1].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn simulate_is_byte_identical() {
    let cfg = "[problem]\nbuiltin = paper_example\n[scheme]\ndt = 2^-7\n[study]\nseed = 3\npath = 11\n";
    let (a, _) = run_ok("simulate", cfg, &["--threads", "1"]);
    let (b, _) = run_ok("simulate", cfg, &["--threads", "3"]);
    let x = fs::read(a.path().join("out/trajectory.csv")).unwrap();
    let y = fs::read(b.path().join("out/trajectory.csv")).unwrap();
    assert_eq!(x, y);
    let (c, _) = run_ok("simulate", cfg, &["--seed", "4"]);
    assert_ne!(x, fs::read(c.path().join("out/trajectory.csv")).unwrap());
}

const STUDY: &str = "[problem]
builtin = paper_example
[study]
levels = \"2^-5, 2^-6, 2^-7\"
reference_dt = 2^-9
paths = 64
q_bars = \"2, 4\"
seed = 1
";

#[test]
fn svg_points_match_csv() {
    let (dir, stdout) = run_ok("convergence", STUDY, &[]);
    assert!(stdout.contains("q_bar = 2: slope ="), "{stdout}");
    assert!(stdout.contains("q_bar = 4: slope ="), "{stdout}");
    let csv = fs::read_to_string(dir.path().join("out/errors.csv")).unwrap();
    let rows: Vec<Vec<String>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(rows.len(), 3 * 2);
    assert!(rows.iter().all(|r| r[4] == "64"));

    let svg = fs::read_to_string(dir.path().join("out/rate.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let points: Vec<[String; 3]> = doc
        .descendants()
        .filter(|n| n.attribute("class") == Some("point"))
        .map(|n| {
            [
                n.attribute("data-dt").unwrap().to_string(),
                n.attribute("data-q-bar").unwrap().to_string(),
                n.attribute("data-error").unwrap().to_string(),
            ]
        })
        .collect();
    assert_eq!(points.len(), rows.len());
    for r in &rows {
        assert!(
            points.iter().any(|p| p[0] == r[0] && p[1] == r[1] && p[2] == r[2]),
            "row {r:?} missing from plot"
        );
    }
    let fits = doc.descendants().filter(|n| n.attribute("class") == Some("fit")).count();
    assert_eq!(fits, 2);
}

#[test]
fn threads_from_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, STUDY).unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "5"] {
        let out = dir.path().join(format!("out{threads}"));
        let o = Command::new(env!("CARGO_BIN_EXE_sdde"))
            .args(["convergence", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .env("SDDE_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success());
        outputs.push(fs::read(out.join("errors.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn empty_probe_list_writes_header_only() {
    let (dir, _) = run_ok("probe", "[problem]\nbuiltin = gbm\n", &[]);
    let csv = fs::read_to_string(dir.path().join("out/probe.csv")).unwrap();
    assert_eq!(csv, "assumption,max_violation,at_t,at_x,at_y,at_xbar,at_ybar,samples\n");
}

#[test]
fn probe_rows() {
    let cfg = "[problem]
builtin = paper_example
[probe]
assumption = A2
k1 = 8
q = 2
u = \"0.25*abs(x - y)^2*(x^2 + y^2)\"
x = \"-5, 5\"
y = \"-5, 5\"
samples = 5000
[probe]
assumption = A39
k1_hat = 0.1
q_hat = 2
x = \"-5, 5\"
y = \"-5, 5\"
samples = 5000
";
    let (dir, stdout) = run_ok("probe", cfg, &[]);
    assert!(stdout.contains("no violation found among"));
    let csv = fs::read_to_string(dir.path().join("out/probe.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "A2-monotoneU");
    assert!(rows[0][1].parse::<f64>().unwrap() <= 1e-9);
    assert_eq!(rows[1][0], "A39-monotone");
    assert!(rows[1][1].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn exit_codes() {
    // config: unknown key
    let (c, err) = code("simulate", "[problem]\nbuiltin = gbm\nfoo = 1\n");
    assert_eq!(c, 2, "{err}");
    assert!(err.contains("line 3"));
    // config: missing dt
    assert_eq!(code("simulate", "[problem]\nbuiltin = gbm\n").0, 2);
    // config: K₁θΔ ≥ 1
    assert_eq!(code("simulate", "[problem]\nbuiltin = paper_example\n[scheme]\nk1 = 8\ntheta = 1\ndt = 0.125\n").0, 2);
    // simulation: explicit, untruncated, super-linear
    let (c, err) = code(
        "simulate",
        "[problem]\nbuiltin = superlinear\n[policy]\nunbounded = true\n[scheme]\ntheta = 0\ndt = 0.125\n[study]\nseed = 8\n",
    );
    assert_eq!(c, 3, "{err}");
    assert!(err.contains("seed 8"), "{err}");
    // capability: A6 without second partials
    let (c, err) = code(
        "probe",
        "[problem]\nbuiltin = gbm\n[probe]\nassumption = A6\nk5 = 1\nbeta = 0\n",
    );
    assert_eq!(c, 4, "{err}");
    assert!(err.contains("f_xx") && err.contains("g_yy"), "{err}");
    // unreadable config
    let dir = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_sdde"))
        .args(["probe", "--config", "/nonexistent/x.conf", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
