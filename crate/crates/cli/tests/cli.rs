use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_filippov");

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn run(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(BIN);
    c.args(args).env_remove("FILIPPOV_SEED");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Main JSON report of each command.
fn report_name(cmd: &str) -> &'static str {
    match cmd {
        "simulate" => "summary.json",
        "classify" => "report.json",
        "return-map" => "roots.json",
        "chaos-check" => "chaos.json",
        "sphere-decompose" => "sphere.json",
        _ => "sweep.json",
    }
}

fn validate(schema: &str, v: &Value) {
    let schema_path = manifest_dir().join("schemas").join(schema);
    let script = "import json, sys, jsonschema\n\
s = json.load(open(sys.argv[1]))\n\
errs = [f'{e.message} at {list(e.path)}' for e in jsonschema.Draft202012Validator(s).iter_errors(json.load(sys.stdin))]\n\
print(errs) if errs else None\n\
sys.exit(1 if errs else 0)\n";
    let mut child = Command::new("python3")
        .args(["-c", script, schema_path.to_str().unwrap()])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .expect("python3 with jsonschema");
    use std::io::Write;
    child.stdin.take().unwrap().write_all(v.to_string().as_bytes()).unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success(), "{schema}: {}", String::from_utf8_lossy(&o.stdout));
}

fn close(a: &Value, b: &Value, path: &str) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            assert!((x - y).abs() <= 1e-9 * x.abs().max(y.abs()) + 1e-12, "{path}: {x} vs {y}");
        }
        (Value::Array(x), Value::Array(y)) => {
            assert_eq!(x.len(), y.len(), "{path}: length");
            for (i, (p, q)) in x.iter().zip(y).enumerate() {
                close(p, q, &format!("{path}[{i}]"));
            }
        }
        (Value::Object(x), Value::Object(y)) => {
            assert_eq!(x.keys().collect::<Vec<_>>(), y.keys().collect::<Vec<_>>(), "{path}: keys");
            for (k, p) in x {
                close(p, &y[k], &format!("{path}.{k}"));
            }
        }
        _ => assert_eq!(a, b, "{path}"),
    }
}

#[test]
fn fixtures_reproduce_and_match_schemas() {
    let dir = manifest_dir().join("tests/fixtures");
    let bless = std::env::var_os("FILIPPOV_BLESS").is_some();
    let mut configs: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    configs.sort();
    assert_eq!(configs.len(), 12);
    let tmp = tempfile::tempdir().unwrap();
    for cfg in configs {
        let stem = cfg.file_stem().unwrap().to_str().unwrap().to_string();
        let cmd = ["simulate", "classify", "return-map", "chaos-check", "sphere-decompose", "sweep"]
            .into_iter()
            .find(|c| stem.starts_with(c))
            .unwrap();
        let out = tmp.path().join(&stem);
        let o = run(&[cmd, "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()], &[]);
        assert!(o.status.success(), "{stem}: {}", String::from_utf8_lossy(&o.stderr));
        let report = read_json(&out.join(report_name(cmd)));
        validate(&format!("{cmd}.schema.json"), &report);
        validate("manifest.schema.json", &read_json(&out.join("manifest.json")));
        let expected = dir.join(format!("{stem}.expected.json"));
        if bless {
            std::fs::write(&expected, serde_json::to_string_pretty(&report).unwrap() + "\n").unwrap();
        } else {
            close(&report, &read_json(&expected), &stem);
        }
    }
}

#[test]
fn manifest_replays_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = manifest_dir().join("tests/fixtures/return-map-two-cycle-band.toml");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run(&["return-map", "-c", cfg.to_str().unwrap(), "-o", a.to_str().unwrap()], &[]).status.success());
    let m = a.join("manifest.json");
    assert!(run(&["return-map", "-c", m.to_str().unwrap(), "-o", b.to_str().unwrap()], &[]).status.success());
    for f in ["roots.json", "return_map.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn print_config_round_trips() {
    let o = run(&["print-config"], &[]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("c.toml");
    std::fs::write(&p, &text).unwrap();
    let again = run(&["print-config", "-c", p.to_str().unwrap()], &[]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
    for section in ["[integration]", "[maps]", "[chaos]", "[sphere]", "[sweep]", "[output]"] {
        assert!(text.contains(section), "{section}");
    }
}

#[test]
fn seed_env_overrides_config() {
    let o = run(&["print-config"], &[("FILIPPOV_SEED", "42")]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("seed = 42"), "{text}");
    assert!(text.contains("[chaos]") && text.matches("seed = 42").count() >= 5);
    let bad = run(&["print-config"], &[("FILIPPOV_SEED", "x")]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[integration]\nrel_tol = 1e-8\nbogus = 1\n").unwrap();
    assert_eq!(run(&["simulate", "-c", bad.to_str().unwrap()], &[]).status.code(), Some(1));
    std::fs::write(&bad, "[integration]\nrel_tol = -1.0\n").unwrap();
    assert_eq!(run(&["simulate", "-c", bad.to_str().unwrap()], &[]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--scenario", "nope"], &[]).status.code(), Some(1));
    assert_eq!(run(&["classify", "--scenario", "four-fold", "--param", "beta=1"], &[]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"], &[]).status.code(), Some(1));
    let missing = tmp.path().join("missing.toml");
    assert_eq!(run(&["simulate", "-c", missing.to_str().unwrap()], &[]).status.code(), Some(3));
    let file = tmp.path().join("file");
    std::fs::write(&file, "").unwrap();
    let under_file = file.join("out");
    assert_eq!(run(&["simulate", "-o", under_file.to_str().unwrap()], &[]).status.code(), Some(3));
    let out = tmp.path().join("refused");
    let o = run(&["chaos-check", "--scenario", "two-cycle-band", "-o", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("refused"));
    assert!(run(&["--help"], &[]).status.success());
}

#[test]
fn simulate_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = manifest_dir().join("tests/fixtures");
    let out = tmp.path().join("closed");
    run(&["simulate", "-c", dir.join("simulate-regular-closed.toml").to_str().unwrap(), "-o", out.to_str().unwrap()], &[]);
    let s = read_json(&out.join("summary.json"));
    assert!(s["trajectories"][0]["closed_orbit"]["closure_distance"].as_f64().unwrap() < 1e-7);
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,x,y,regime,event\n"));
    assert!(std::fs::read_to_string(out.join("events.jsonl")).unwrap().lines().count() > 2);
    let out = tmp.path().join("poles");
    run(&["simulate", "-c", dir.join("simulate-sphere-poles.toml").to_str().unwrap(), "-o", out.to_str().unwrap()], &[]);
    let s = read_json(&out.join("summary.json"));
    assert_eq!(s["trajectories"][0]["terminal_event"]["kind"], "HitPole");
    assert_eq!(s["trajectories"][0]["terminal_event"]["detail"], "north");
    let out = tmp.path().join("chaotic");
    let o = run(&["simulate", "--scenario", "chaotic-torus", "-o", out.to_str().unwrap()], &[]);
    assert!(o.status.success());
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["outputs"].as_array().unwrap().len(), 3);
}

#[test]
fn branch_enumeration_writes_each_branch() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("b.toml");
    std::fs::write(
        &cfg,
        "[scenario]\nname = \"regular\"\nparams = { a = 1, b = 1, sigma1 = 1, sigma2 = -1 }\n\
         [integration]\nt_max = 1.0\nbranch_policy = { EnumerateToDepth = 1 }\n[simulate]\nx0 = 0.3\ny0 = 0.5\n",
    )
    .unwrap();
    let out = tmp.path().join("o");
    let o = run(&["simulate", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_json(&out.join("summary.json"));
    assert_eq!(s["trajectories"].as_array().unwrap().len(), 2);
    assert!(out.join("trajectory_1.csv").exists());
}

#[test]
fn sweep_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = manifest_dir().join("tests/fixtures");
    let out = tmp.path().join("ff");
    run(&["sweep", "-c", dir.join("sweep-four-fold.toml").to_str().unwrap(), "-o", out.to_str().unwrap()], &[]);
    let s = read_json(&out.join("sweep.json"));
    let t = s["transitions"].as_array().unwrap();
    assert_eq!(t.len(), 1);
    let (lo, hi) = (t[0]["lo"].as_f64().unwrap(), t[0]["hi"].as_f64().unwrap());
    let estimate = t[0]["estimate"].as_f64().unwrap();
    assert!(estimate.abs() <= 1e-6 && lo <= 1e-12 && hi >= -1e-12 && hi - lo <= 1e-6, "[{lo}, {hi}]");

    let out = tmp.path().join("fc");
    run(&["sweep", "-c", dir.join("sweep-fold-connection.toml").to_str().unwrap(), "-o", out.to_str().unwrap()], &[]);
    let s = read_json(&out.join("sweep.json"));
    let c_star = c_star();
    let hit = s["transitions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|t| t["stat_lo"].as_f64().unwrap().abs() < 1e-5 && t["stat_hi"].as_f64().unwrap().abs() < 1e-5)
        .expect("a zero-crossing transition");
    let (lo, hi) = (hit["lo"].as_f64().unwrap(), hit["hi"].as_f64().unwrap());
    assert!(hi - lo <= 1e-6 && lo - 1e-9 <= c_star && c_star <= hi + 1e-9, "[{lo}, {hi}] vs {c_star}");

    let cfg = tmp.path().join("empty.toml");
    std::fs::write(&cfg, "[scenario]\nname = \"four-fold\"\n[sweep]\nranges = [{ param = \"alpha\", start = 0.0, end = 1.0, steps = 0 }]\n").unwrap();
    let out = tmp.path().join("empty");
    assert!(run(&["sweep", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()], &[]).status.success());
    let s = read_json(&out.join("sweep.json"));
    assert!(s["rows"].as_array().unwrap().is_empty());
    assert_eq!(std::fs::read_to_string(out.join("sweep.csv")).unwrap(), "index,alpha,verdict,stat,error\n");

    // rows are ordered by index whatever the worker count
    let a = tmp.path().join("w1");
    let b = tmp.path().join("w4");
    let ff = dir.join("sweep-four-fold.toml");
    let cfg1 = tmp.path().join("w1.toml");
    let text = std::fs::read_to_string(&ff).unwrap();
    std::fs::write(&cfg1, text.replace("[sweep]", "[sweep]\nworkers = 1")).unwrap();
    let cfg4 = tmp.path().join("w4.toml");
    std::fs::write(&cfg4, text.replace("[sweep]", "[sweep]\nworkers = 4")).unwrap();
    run(&["sweep", "-c", cfg1.to_str().unwrap(), "-o", a.to_str().unwrap()], &[]);
    run(&["sweep", "-c", cfg4.to_str().unwrap(), "-o", b.to_str().unwrap()], &[]);
    assert_eq!(std::fs::read(a.join("sweep.csv")).unwrap(), std::fs::read(b.join("sweep.csv")).unwrap());
}

/// Root of `sqrt(1 − c²) − c·arccos(c) = π/2`, by bisection here.
fn c_star() -> f64 {
    let g = |c: f64| (1.0 - c * c).sqrt() - c * c.acos() - std::f64::consts::FRAC_PI_2;
    let (mut a, mut b) = (-0.99f64, -0.01f64);
    for _ in 0..100 {
        let m = 0.5 * (a + b);
        if g(m).signum() == g(a).signum() {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[test]
fn two_d_sweep_has_all_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("2d.toml");
    std::fs::write(
        &cfg,
        "[scenario]\nname = \"fold-regular\"\n[sweep]\nranges = [{ param = \"c0\", start = -0.5, end = 0.5, steps = 5 }, { param = \"cos1\", start = 0.2, end = 0.6, steps = 3 }]\n",
    )
    .unwrap();
    let out = tmp.path().join("o");
    let o = run(&["sweep", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_json(&out.join("sweep.json"));
    assert_eq!(s["rows"].as_array().unwrap().len(), 15);
    assert!(!s["transitions"].as_array().unwrap().is_empty());
}
