use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_multienergy"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

/// Fresh scratch directory per test.
fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("multienergy-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(dir: &PathBuf, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const BASIS: &str = "x1,x2,x3\n1,0,0\n0,1,0\n0,0,1\n";

#[test]
fn energy_of_the_basis() {
    let dir = scratch("energy");
    let pts = write(&dir, "pts.csv", BASIS);
    let out = run(&["energy", "--kernel", "uvt", "--points", &pts]);
    assert!(out.status.success());
    let v = json(&out);
    assert!((v["value"].as_f64().unwrap() - 1.0 / 9.0).abs() < 1e-15);
    assert_eq!(v["samples_used"], 27);
}

#[test]
fn mutual_energy_repeats_the_last_measure() {
    let dir = scratch("mutual");
    let pin = write(&dir, "pin.csv", "w,x1,x2,x3\n1,1,0,0\n");
    let mu = write(&dir, "mu.csv", "w,x1,x2,x3\n1,0,1,0\n-1,-1,0,0\n");
    let out = run(&["mutual", "--kernel", "s011", "--measure", &pin, "--measure", &mu]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!((json(&out)["value"].as_f64().unwrap() + 1.0).abs() < 1e-12);
}

#[test]
fn potential_reports_values_and_errors() {
    let dir = scratch("potential");
    let mu = write(&dir, "mu.csv", BASIS);
    let at = write(&dir, "at.csv", "x1,x2,x3\n1,0,0\n0,1,0\n");
    let out = run(&["potential", "--kernel", "frame2", "--measure", &mu, "--order", "1", "--at", &at, "--sampled"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["values"].as_array().unwrap().len(), 2);
    assert!((v["values"][0].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert!(v["stderr"].is_array());
}

#[test]
fn usage_errors_exit_64() {
    let dir = scratch("usage");
    let pts = write(&dir, "pts.csv", BASIS);
    for args in [
        vec!["energy", "--kernel", "bogus", "--points", pts.as_str()],
        vec!["energy", "--points", pts.as_str()],
        vec!["verify", "--scenario", "no-such-thing"],
        vec!["frobnicate"],
        vec!["energy-int", "--kernel", "uvt", "--d", "1"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(64), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = run(&["verify", "--scenario", "no-such-thing"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("area2-sigma"));
}

#[test]
fn missing_files_are_io_errors() {
    let out = run(&["energy", "--kernel", "uvt", "--points", "/nonexistent/pts.csv"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn list_is_sorted() {
    let out = run(&["list"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let names: Vec<&str> = text.lines().collect();
    assert!(names.contains(&"area2-sigma"));
    assert!(names.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn verify_is_deterministic_across_jobs() {
    let quick = ["s011-counterexample", "negvol2-not-cpd", "negarea2-not-cpd", "bcr-shift"];
    let args = |jobs: &str| {
        let mut a = vec!["verify", "--jobs", jobs];
        for s in quick {
            a.extend(["--scenario", s]);
        }
        run(&a)
    };
    let one = args("1");
    let again = args("1");
    let three = args("3");
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, again.stdout);
    assert_eq!(one.stdout, three.stdout);
    let reports = json(&one);
    let names: Vec<&str> = reports.as_array().unwrap().iter().map(|r| r["scenario"].as_str().unwrap()).collect();
    assert_eq!(names, quick);
}

#[test]
fn verify_writes_report_and_flags_failures() {
    let dir = scratch("verify");
    let out_path = dir.join("report.json");
    let out = run(&["verify", "--scenario", "s011-counterexample", "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let report: Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert!((report["assertions"][0]["observed"].as_f64().unwrap() + 1.0).abs() <= 1e-12);
    assert!(report.get("wall_clock_seconds").is_none());

    // Shrinking the tolerances to nothing makes Monte Carlo checks fail.
    let out = run(&["verify", "--scenario", "vol2-sigma", "--tuples", "2000", "--tol-scale", "1e-9"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["pass"], false);
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = scratch("config");
    let cfg = write(&dir, "run.cfg", "# defaults\nseed = 5\ntuples=2000\nsteps = 10\n");
    let base = ["energy-int", "--kernel", "area2", "--d", "3"];
    let with_cfg = |extra: &[&str]| {
        let mut a = vec!["--config", cfg.as_str()];
        a.extend(base);
        a.extend(extra);
        json(&run(&a))
    };
    let direct = |seed: &str| {
        let mut a = base.to_vec();
        a.extend(["--tuples", "2000", "--seed", seed]);
        json(&run(&a))
    };
    assert_eq!(with_cfg(&[]), direct("5"));
    assert_eq!(with_cfg(&["--seed", "6"]), direct("6"));

    let bad = write(&dir, "bad.cfg", "sed = 5\n");
    let mut a = vec!["--config", bad.as_str()];
    a.extend(base);
    assert_eq!(run(&a).status.code(), Some(64));
}

#[test]
fn minimize_writes_trace_and_points() {
    let dir = scratch("minimize");
    let trace = dir.join("trace.csv");
    let pts = dir.join("points.csv");
    let out = run(&[
        "minimize", "--kernel", "s011", "--n", "2", "--d", "3", "--steps", "2000", "--seed", "808",
        "--trace", trace.to_str().unwrap(), "--points-out", pts.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&out);
    assert!(summary["final_energy"].as_f64().unwrap() <= 1e-6);
    assert_eq!(summary["starts"].as_array().unwrap().len(), 4);
    let trace = fs::read_to_string(trace).unwrap();
    assert!(trace.starts_with("iteration,energy\n0,"));
    let cfg = multienergy::io::read_points(&pts).unwrap();
    assert_eq!((cfg.len(), cfg.dim()), (2, 3));
}

#[test]
fn prod_lift_without_guarantee_warns() {
    let out = run(&["energy-int", "--kernel", "prod_lift:base=inner,n=4", "--d", "3", "--tuples", "100"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning: prod_lift"));
    let out = run(&["energy-int", "--kernel", "prod_lift:base=inner,n=3", "--d", "3", "--tuples", "100"]);
    assert!(!String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn pdtest_reports_a_balanced_witness() {
    let out = run(&["pdtest", "--kernel", "s011", "--d", "3", "--conditional", "--trials", "4"]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["outcome"], "fail");
    assert_eq!(v["mode"], "conditional");
    let csv = v["witness"]["measure"].as_str().unwrap();
    let mu = multienergy::io::read_measure_from(csv.as_bytes()).unwrap();
    assert!(mu.total_mass().abs() <= 1e-12);
    let out = run(&["pdtest", "--kernel", "uvt", "--d", "3", "--trials", "4"]);
    assert_eq!(json(&out)["outcome"], "pass_statistical");
}

#[test]
fn convexity_at_a_uniform_sample() {
    let dir = scratch("convexity");
    let nu = write(&dir, "nu.csv", "x1,x2,x3\n1,0,0\n");
    let out = run(&["convexity", "--kernel", "s100", "--mu", "uniform:500", "--nu", &nu, "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["convex_on_unit_interval"], false);
    assert!(v["max_chord_gap"].as_f64().unwrap() > 0.1);
    let out = run(&["convexity", "--kernel", "s100", "--mu", "uniform:many", "--nu", &nu]);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn inequalities_for_uvt_hold() {
    let out = run(&["inequalities", "--kernel", "uvt", "--d", "3", "--trials", "200", "--seed", "1"]);
    let v = json(&out);
    for key in ["am", "gm", "lower_bound", "diagonal"] {
        assert!(v[key]["worst"].as_f64().unwrap() <= 1e-10, "{key}");
        assert_eq!(v[key]["violations"], 0);
    }
}
