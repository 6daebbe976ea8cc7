use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dirac-ladder"));
    c.env_remove("DIRAC_LADDER_TOL");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn model_path(name: &str) -> String {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models").join(name);
    root.to_string_lossy().into_owned()
}

#[test]
fn analyze_csm_generic() {
    let o = run(&["analyze", "csm", "--a", "2", "--e", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("first-class: 0  second-class: 2"), "{out}");
    assert!(out.contains("oscillator  2 "), "{out}");
    assert!(out.contains("free        0 "), "{out}");
    assert!(out.contains("DOF: 2"));
}

#[test]
fn analyze_csm_critical_with_gauge() {
    let o = run(&["analyze", "csm", "--a", "1", "--e", "1", "--gauge", "A0"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("reduced phase space: A1, p_A1"), "{out}");
    assert!(out.contains("[ 1  0 ]\n  [ 0  0 ]"), "{out}");
    assert!(!out.contains("oscillator  "));
    assert!(out.contains("DOF: 1"));
}

#[test]
fn gauge_required_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.json");
    let text = std::fs::read_to_string(model_path("gauge_oscillator.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v.as_object_mut().unwrap().remove("gauges");
    std::fs::write(&path, v.to_string()).unwrap();
    let o = run(&["analyze", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("2 first-class constraints; supply --gauge"));

    let o = run(&["analyze", path.to_str().unwrap(), "--gauge", "y,x"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("reduced phase space: z, p_z"));
}

#[test]
fn model_file_gauges_are_used() {
    let o = run(&["analyze", &model_path("gauge_oscillator.json")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("first-class: 2"));
    assert!(out.contains("oscillator  2 "), "{out}");
}

#[test]
fn inadmissible_gauge_names_the_pair() {
    let o = run(&["analyze", &model_path("gauge_oscillator.json"), "--gauge", "y,z"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("inadmissible gauge") && err.contains("p_x"), "{err}");
}

#[test]
fn unknown_model_and_bad_flags() {
    assert_eq!(run(&["analyze", "nosuchmodel"]).status.code(), Some(1));
    assert_eq!(run(&["analyze", "cranking", "--a", "2"]).status.code(), Some(1));
    assert_eq!(run(&["analyze", "csm", "--gauge", "Q"]).status.code(), Some(1));
    assert_eq!(run(&["sweep", "--model", "csm"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn json_output_is_deterministic_and_reparses() {
    let args = ["analyze", "csm", "--a", "0.5+0.866i", "--e", "1", "--json"];
    let a = stdout(&run(&args));
    let b = stdout(&run(&args));
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    let again: serde_json::Value = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
    assert_eq!(again, v);
    assert!(v["reduced"]["eliminated"][0][1].as_str().unwrap().starts_with("(0.5"));
    assert_eq!(v["n_scc"], 2);
    assert_eq!(v["params"]["a"][1], 0.866);
}

#[test]
fn tolerance_from_environment() {
    let o = bin().args(["analyze", "csm"]).env("DIRAC_LADDER_TOL", "oops").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = bin().args(["analyze", "csm", "--json"]).env("DIRAC_LADDER_TOL", "1e-7").output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["rel_tol"], 1e-7);
    let o = bin().args(["analyze", "csm", "--json", "--tol", "1e-8"]).env("DIRAC_LADDER_TOL", "1e-7").output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["rel_tol"], 1e-8);
}

#[test]
fn sweep_csv_schema_and_determinism() {
    let args = ["sweep", "--model", "csm", "--param", "a", "--from", "0.1", "--to", "5", "--points", "200", "--fixed", "e=1"];
    let a = stdout(&run(&args));
    let mut lines = a.lines();
    assert_eq!(
        lines.next().unwrap(),
        "model,param1,param2,re_omega_plus,im_omega_plus,re_omega_minus,im_omega_minus,n_fcc,n_scc,dof,gram_det_abs,on_locus,status"
    );
    assert_eq!(lines.count(), 200);
    let mut with_jobs: Vec<&str> = args.to_vec();
    with_jobs.extend(["--jobs", "1"]);
    assert_eq!(stdout(&run(&with_jobs)), a);
}

#[test]
fn sweep_to_file_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig3.csv");
    let o = run(&[
        "sweep", "--model", "csm", "--param", "a1", "--from", "-2", "--to", "2", "--points", "21", "--fixed", "e=1,a0=0.5",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 22);

    let o = run(&["sweep", "--model", "csm-mode", "--param", "k", "--from", "0", "--to", "4", "--points", "5", "--fixed", "a=2,e=1", "--json"]);
    let rows: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for r in rows.as_array().unwrap() {
        let k = r["param1"].as_f64().unwrap();
        let w = r["omega_plus"][0].as_f64().unwrap();
        assert!((w * w - k * k - 4.0).abs() < 1e-7, "{r}");
    }

    let o = run(&["sweep", "--model", "csm", "--from", "0.5", "--to", "2", "--points", "3", "--out", "/nonexistent/dir/x.csv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_complex_grid() {
    let o = run(&["sweep", "--model", "csm", "--complex-grid", "--from", "0.2", "--to", "1.8", "--points", "5", "--from2", "-0.9", "--to2", "0.9", "--points2", "3", "--fixed", "e=1", "--columns", "param1,param2,on_locus"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("param1,param2,on_locus\n"));
    assert_eq!(out.lines().count(), 16);
}

#[test]
fn verify_examples() {
    let o = run(&["verify", "csm", "--a", "2", "--e", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("fourier peaks: [2.00"));

    let o = run(&["verify", "cranking", "--B", "1", "--k", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("fourier peaks: [0.618"), "{}", stdout(&o));

    let o = run(&["verify", "csm", "--a", "1", "--e", "1", "--gauge", "A0"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("fourier peaks: []"));

    let o = run(&["verify", "csm", "--a", "0.5", "--e", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.csv");
    let o = run(&["verify", "cranking", "--B", "1", "--k", "1", "--time", "5", "--trajectory", path.to_str().unwrap()]);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("t,x1,x2,p_x1,p_x2\n"));
    assert_eq!(text.lines().count(), 502);
    // 501 samples are too few for peak extraction to resolve both modes
    assert!(o.status.code().is_some());
}

#[test]
fn zoo_list_names_every_model() {
    let out = stdout(&run(&["zoo", "list"]));
    for m in ["csm", "csm-mode", "cranking", "mcsp-point"] {
        assert!(out.lines().any(|l| l.starts_with(m)), "{out}");
    }
}
