use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mrf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn classify_remark44_system() {
    let o = mrf(&["poly", "classify", "--builtin", "remark44-system"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("K = [1, 3, 5]"), "{out}");
    assert!(out.contains("d_bar = 2"), "{out}");
    assert!(out.contains("M = 3"), "{out}");
}

#[test]
fn classify_rejects_even_exponent_with_term() {
    let o = mrf(&["poly", "classify", "--builtin", "diag-example"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("(2,0)"), "{}", stderr(&o));
}

#[test]
fn compact_witness_is_half_half() {
    let o = mrf(&[
        "poly", "witness", "--builtin", "remark44-system", "--at", "0.3,-0.1,2,0.5", "--w", "0,1,1",
        "--compact",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3, "{out}");
    let fifth = 2f64.powf(0.2);
    let mut controls = Vec::new();
    for l in &lines[..2] {
        let (w, u) = l.split_once(' ').unwrap();
        assert_eq!(w.parse::<f64>().unwrap(), 0.5);
        let u: Vec<f64> = u.split(',').map(|v| v.parse().unwrap()).collect();
        controls.push(u);
    }
    // ½ f(x,(1,0,2^{1/5})) + ½ f(x,(0,1,2^{1/5})), in either order.
    controls.sort_by(|a, b| b[0].total_cmp(&a[0]));
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
    assert!(close(&controls[0], &[1.0, 0.0, fifth]), "{controls:?}");
    assert!(close(&controls[1], &[0.0, 1.0, fifth]), "{controls:?}");
    let res: f64 = lines[2].strip_prefix("residual ").unwrap().parse().unwrap();
    assert!(res < 1e-12);
}

#[test]
fn maximal_subsystem_of_diag_example() {
    let o = mrf(&["poly", "subsystem", "--kind", "max", "--builtin", "diag-example"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "[x1, x2] + u1^2*u2^2 [3 * x1, 3 * x2]");
}

#[test]
fn verify_counterexample_is_violated_with_positive_witness() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = mrf(&["verify", "--builtin", "remark48-counterexample", "--out", path_str(&out)]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(rep["verdict"]["verdict"], "violated");
    let x = rep["verdict"]["witness"]["x"][0].as_f64().unwrap();
    assert!(x != 0.0);
    // Re-check the witness: f = (u² + u³)x, l = 0, p = 2x.
    let u = rep["verdict"]["witness"]["u"][0].as_f64().unwrap();
    assert!(2.0 * x * (u * u + u * u * u) * x >= 0.0);
}

#[test]
fn verify_gyroscope_default_is_verified() {
    let o = mrf(&["verify", "--builtin", "gyroscope", "--p0", "0.9"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rep["verdict"]["verdict"], "verified");
}

#[test]
fn empty_band_is_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("s.toml");
    fs::write(
        &sc,
        r#"
name = "far-box"
n = 1
m = 1
[target]
point = [0.0]
[control_set]
kind = "full"
[dynamics]
fields = ["u1"]
[candidate]
w = "x1^2"
p0 = 1.0
[sampling]
sigma = 1.0
bbox = [[0.5, 1.2]]
samples = 50
"#,
    )
    .unwrap();
    let o = mrf(&["verify", "--scenario", path_str(&sc)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_3() {
    assert_eq!(code(&mrf(&["verify", "--builtin", "nope"])), 3);
    assert_eq!(code(&mrf(&["verify"])), 3);
    assert_eq!(code(&mrf(&["verify", "--builtin", "gyroscope", "--bogus"])), 3);
    assert_eq!(code(&mrf(&["poly", "classify", "--builtin", "gyroscope", "--scenario", "x.toml"])), 3);
    assert_eq!(code(&mrf(&["--help"])), 0);
}

#[test]
fn unknown_scenario_keys_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("s.toml");
    fs::write(&sc, "name = \"x\"\nn = 1\nm = 1\ncolour = 3\n").unwrap();
    let o = mrf(&["export", "--scenario", path_str(&sc)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
}

#[test]
fn simulate_from_target_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let o = mrf(&[
        "simulate", "--builtin", "gyroscope", "--from", "0,0", "--samples", "300", "--out", path_str(&csv),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "s,t,x_1,x_2,u_1,u_2,W,cumulative_cost,cert_lhs,cert_rhs,beta_bound,d_target,stage_boundary"
    );
    assert_eq!(lines.len(), 2);
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["total_cost"].as_f64(), Some(0.0));
    assert_eq!(summary["cells"].as_u64(), Some(0));
}

#[test]
fn simulate_gyroscope_respects_cost_bound() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("g.csv");
    let o = mrf(&["simulate", "--builtin", "gyroscope", "--from", "0.5,0", "--out", path_str(&csv)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let cost = s["total_cost"].as_f64().unwrap();
    let bound = s["cost_bound"].as_f64().unwrap();
    assert!(cost > 0.0 && cost <= bound, "{cost} {bound}");
    assert!(s["worst_certificate"].as_f64().unwrap() <= 1e-9);
    let rows = fs::read_to_string(&csv).unwrap().lines().count();
    assert!(rows > 10);
}

#[test]
fn export_round_trip_gives_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["gyroscope", "remark48-counterexample"] {
        let sc = dir.path().join(format!("{name}.toml"));
        let o = mrf(&["export", "--builtin", name, "--out", path_str(&sc)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let a = dir.path().join(format!("{name}-a.json"));
        let b = dir.path().join(format!("{name}-b.json"));
        let flags = ["--samples", "200", "--bands", "4", "--seed", "7"];
        let oa = mrf(&[&["verify", "--builtin", name, "--out", path_str(&a)][..], &flags].concat());
        let ob = mrf(&[&["verify", "--scenario", path_str(&sc), "--out", path_str(&b)][..], &flags].concat());
        assert_eq!(code(&oa), code(&ob));
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap(), "{name}");
    }
}

#[test]
fn hypcheck_on_diag_example() {
    let o = mrf(&["poly", "hypcheck", "--builtin", "diag-example", "--hyp-samples", "300"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("A_max: pass"));
}
