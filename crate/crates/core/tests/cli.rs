use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fracplap"))
}

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL_CAUCHY: &str = r#"
[grid]
n = 8
s = 0.5

[fields.exponent]
kind = "distance"
base = 2.0
slope = 2.0

[fields.forcing]
kind = "separable"
space = { kind = "wave", shape = "cos", amplitude = 1.0 }

[fields.u0]
space = { kind = "wave", shape = "sin", amplitude = 0.5 }

[solver]
dt = 0.0625

[experiment]
mode = "cauchy"
horizon = 0.25
"#;

fn files_under(dir: &Path) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    out
}

fn manifest_files(dir: &Path) -> BTreeSet<String> {
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    m["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap().to_string()).collect()
}

#[test]
fn missing_dt_exits_2_and_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL_CAUCHY.replace("dt = 0.0625", "");
    let cfg = write_config(tmp.path(), "bad.toml", &text);
    let out = run(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dt"), "{err}");
    assert!(err.contains("\"kind\":\"config\""), "{err}");
    let rep = fs::read_to_string(tmp.path().join("o").join("error.json")).unwrap();
    assert!(rep.contains("missing field `dt`"), "{rep}");
}

#[test]
fn unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &SMALL_CAUCHY.replace("s = 0.5", "s = 0.5\nspacing = 2"));
    assert_eq!(run(&["describe", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn out_of_range_s_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &SMALL_CAUCHY.replace("s = 0.5", "s = 1.5"));
    assert_eq!(run(&["describe", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn overflow_exits_4_with_error_report() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL_CAUCHY
        .replace("kind = \"distance\"\nbase = 2.0\nslope = 2.0", "kind = \"constant\"\nvalue = 400.0")
        .replace("amplitude = 0.5", "amplitude = 50.0");
    let cfg = write_config(tmp.path(), "hot.toml", &text);
    let dir = tmp.path().join("o");
    let out = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("error.json")).unwrap()).unwrap();
    assert_eq!(rep["kind"], "overflow");
    assert_eq!(manifest_files(&dir), files_under(&dir).into_iter().filter(|f| f != "manifest.json").collect());
}

#[test]
fn inner_iteration_cap_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL_CAUCHY.replace("dt = 0.0625", "dt = 0.0625\ninner_max_iter = 1\ninner_tol = 1e-14");
    let cfg = write_config(tmp.path(), "tight.toml", &text);
    let out = run(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn runs_are_deterministic_and_fully_manifested() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL_CAUCHY);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (dir, threads) in [(&a, "1"), (&b, "2")] {
        let out = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--threads", threads]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let listed = manifest_files(&a);
    let mut on_disk = files_under(&a);
    on_disk.remove("manifest.json");
    assert_eq!(listed, on_disk);
    assert!(listed.contains("trajectory.csv") && listed.contains("report.json"));
    for f in &listed {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let csv = fs::read_to_string(a.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,node,u\n") && !csv.contains('\r'));
}

#[test]
fn seed_flag_changes_only_seeded_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
[grid]
n = 8
s = 0.5

[fields.exponent]
kind = "constant"
value = 2.0

[solver]
dt = 0.0625

[experiment]
mode = "mosco"
schedule = [2, 4, 8]
samples = 5
"#;
    let cfg = write_config(tmp.path(), "m.toml", text);
    let report = |dir: &Path, seed: &str| {
        let out = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--seed", seed]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(dir.join("report.json")).unwrap()
    };
    let a = report(&tmp.path().join("a"), "5");
    let b = report(&tmp.path().join("b"), "5");
    let c = report(&tmp.path().join("c"), "6");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn describe_full_blowup_lists_five_stages() {
    let out = run(&["describe", "--config", bundled("full_blowup.toml").to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("full blow-up experiment"), "{text}");
    assert!(text.contains("stages: 5"), "{text}");
}

#[test]
fn describe_partial_blowup_counts_pair_classes() {
    let out = run(&["describe", "--config", bundled("partial_blowup.toml").to_str().unwrap()]);
    let text = String::from_utf8_lossy(&out.stdout);
    // 16 of 32 nodes in O: 16*15 ordered pairs inside, the rest of 32*31 outside
    assert!(text.contains("|O^2| = 240 ordered pairs, complement = 752 ordered pairs"), "{text}");
}

#[test]
fn describe_cauchy_is_single_stage() {
    let out = run(&["describe", "--config", bundled("cauchy.toml").to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("stages: 1"));
}

#[test]
fn validate_quick_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["validate", "--quick", "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 11, "{text}");
    assert_eq!(manifest_files(tmp.path()), BTreeSet::from(["checks.json".to_string()]));
}

#[test]
fn bundled_default_config_runs_validate_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["run", "--config", bundled("default.toml").to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn bundled_full_blowup_summary_has_decreasing_distances() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["run", "--config", bundled("full_blowup.toml").to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success());
    let mut rdr = csv::Reader::from_path(tmp.path().join("summary.csv")).unwrap();
    let sup: Vec<f64> = rdr.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    assert_eq!(sup.len(), 5);
    assert!(sup.windows(2).all(|w| w[1] < w[0]), "{sup:?}");
}
