//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use serde_json::Value;

use fracplap::checks::{self, distance_ramp, CheckOutcome};
use fracplap::grid::build_interval_grid;
use fracplap::harness::{self, LoadedConfig, RunOptions};

const SEED: u64 = 20240601;

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn from_check(id: usize, name: &'static str, c: CheckOutcome, elapsed: Duration, budget: Option<f64>) -> Line {
    let secs = elapsed.as_secs_f64();
    let in_time = budget.is_none_or(|b| secs <= b);
    let limit = budget.map_or(String::new(), |b| format!(" (limit {b} s)"));
    Line { id, name, passed: c.passed && in_time, detail: format!("{}; {secs:.2} s{limit}", c.detail) }
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

/// Runs a bundled config through the harness and returns `report.json`.
fn run_config(name: &str, out: &std::path::Path) -> Result<(Value, f64), String> {
    let lc = LoadedConfig::from_path(&config(name)).map_err(|e| e.to_string())?;
    let t = Instant::now();
    let outcome = harness::run(&lc, &RunOptions { out: Some(out.to_path_buf()), ..Default::default() })
        .map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let text = std::fs::read_to_string(outcome.dir.join("report.json")).map_err(|e| e.to_string())?;
    Ok((serde_json::from_str(&text).map_err(|e| e.to_string())?, secs))
}

fn column(report: &Value, key: &str) -> Vec<f64> {
    report["convergence"]["stages"]
        .as_array()
        .map(|a| a.iter().filter_map(|s| s[key].as_f64()).collect())
        .unwrap_or_default()
}

fn decreasing(v: &[f64]) -> bool {
    v.len() >= 2 && v.windows(2).all(|w| w[1] < w[0])
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn max_of(v: &Value) -> f64 {
    v.as_array().map_or(f64::NAN, |a| a.iter().filter_map(Value::as_f64).fold(0.0, f64::max))
}

fn min_of(v: &Value) -> f64 {
    v.as_array().map_or(f64::NAN, |a| a.iter().filter_map(Value::as_f64).fold(f64::INFINITY, f64::min))
}

fn full_blowup(dir: &std::path::Path) -> Line {
    let (id, name) = (6, "full blow-up convergence");
    match run_config("full_blowup.toml", dir) {
        Err(e) => Line { id, name, passed: false, detail: e },
        Ok((rep, secs)) => {
            let sup = column(&rep, "sup_t_dist");
            let lim = &rep["convergence"]["limit"];
            let norm = lim["sup_norm"].as_f64().unwrap_or(f64::NAN);
            let last = sup.last().copied().unwrap_or(f64::NAN);
            let member = lim["membership_ok"].as_bool().unwrap_or(false);
            let vi = lim["max_vi_residual"].as_f64().unwrap_or(f64::NAN);
            let passed = decreasing(&sup) && last <= 0.05 * norm && member && vi <= 1e-6 && secs <= 600.0;
            Line {
                id,
                name,
                passed,
                detail: format!(
                    "sup_t dist [{}]; final/limit norm {:.4} (<= 0.05); membership {member}; max VI residual {vi:.2e}; {secs:.1} s",
                    fmt(&sup),
                    last / norm
                ),
            }
        }
    }
}

fn w12_upgrade(dir: &std::path::Path) -> Line {
    let (id, name) = (7, "W12 upgrade from rest");
    match run_config("full_blowup_rest.toml", dir) {
        Err(e) => Line { id, name, passed: false, detail: e },
        Ok((rep, _)) => {
            let wderiv = column(&rep, "weighted_deriv_dist");
            let w12 = column(&rep, "w12_dist");
            let e0 = column(&rep, "initial_energy");
            let ratio = w12.last().zip(wderiv.last()).map_or(f64::NAN, |(a, b)| a / b);
            let passed = e0.iter().all(|&e| e == 0.0) && ratio <= 2.0 && decreasing(&wderiv) && decreasing(&w12);
            Line {
                id,
                name,
                passed,
                detail: format!("sqrt(t)-weighted derivative dist [{}]; w12 [{}]; final ratio {ratio:.3} (<= 2)", fmt(&wderiv), fmt(&w12)),
            }
        }
    }
}

fn mixed(dir: &std::path::Path) -> Line {
    let (id, name) = (9, "mixed problem");
    let inner_tol = 1e-10;
    match run_config("partial_blowup.toml", dir) {
        Err(e) => Line { id, name, passed: false, detail: e },
        Ok((rep, secs)) => {
            let sup = column(&rep, "sup_t_dist");
            let m = &rep["convergence"]["mixed"];
            let comp_res = max_of(&m["complement_residuals"]);
            let margins = min_of(&m["o2_margins"]);
            let qvi = max_of(&m["quasi_vi_residuals"]);
            let passed = margins >= -1e-8 && comp_res <= 10.0 * inner_tol && qvi <= 1e-6 && decreasing(&sup) && secs <= 900.0;
            Line {
                id,
                name,
                passed,
                detail: format!(
                    "min O^2 margin {margins:.2e}; max complement residual {comp_res:.2e} (<= {:.0e}); max quasi-VI residual {qvi:.2e}; sup_t dist [{}]; {secs:.1} s",
                    10.0 * inner_tol,
                    fmt(&sup)
                ),
            }
        }
    }
}

fn timed<F: FnOnce() -> fracplap::Result<CheckOutcome>>(f: F) -> (fracplap::Result<CheckOutcome>, Duration) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed())
}

fn check_line(
    id: usize,
    name: &'static str,
    budget: Option<f64>,
    f: impl FnOnce() -> fracplap::Result<CheckOutcome>,
) -> Line {
    match timed(f) {
        (Ok(c), d) => from_check(id, name, c, d, budget),
        (Err(e), _) => Line { id, name, passed: false, detail: e.to_string() },
    }
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let g32 = build_interval_grid(32, 0.0, 1.0).expect("grid");
    let base = distance_ramp(&g32, 2.0, 3.0).expect("ramp");
    let lines = vec![
        check_line(1, "gradient consistency", Some(10.0), || checks::gradient_consistency(16, 200, SEED, 1e-6)),
        check_line(2, "norm-modular suite", Some(30.0), || checks::norm_modular_suite(16, 1000, SEED)),
        check_line(3, "continuous dependence", None, || checks::continuous_dependence(16, 50, SEED, 1e-8)),
        check_line(4, "implicit Euler order", None, || checks::euler_order(1.0 / 64.0)),
        check_line(5, "recovery bound", None, || {
            checks::recovery_bound(&g32, 0.5, &base, &[2.0, 4.0, 8.0, 16.0, 32.0], 100, SEED)
        }),
        full_blowup(&tmp.path().join("full")),
        w12_upgrade(&tmp.path().join("rest")),
        check_line(8, "periodic problems", None, || checks::periodic_suite(8)),
        mixed(&tmp.path().join("partial")),
        check_line(10, "constrained equilibria", None, || checks::constrained_stationarity(16)),
        check_line(11, "energy dissipation", None, || checks::energy_dissipation(16, SEED)),
    ];
    for l in &lines {
        println!("[{:>2}] {} {}: {}", l.id, if l.passed { "PASS" } else { "FAIL" }, l.name, l.detail);
    }
    let failed = lines.iter().filter(|l| !l.passed).count();
    println!("acceptance: {} of {} criteria pass", lines.len() - failed, lines.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
