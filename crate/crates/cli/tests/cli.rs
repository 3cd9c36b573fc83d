use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn qvi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qvi"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn summary(dir: &Path, out: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(out).join("summary.json")).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn check(s: &Value, name: &str) -> f64 {
    s["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == name)
        .unwrap()["value"]
        .as_f64()
        .unwrap()
}

#[test]
fn thermoform_reproduces_explicit_solutions() {
    let t = TempDir::new().unwrap();
    let o = qvi(t.path(), &["thermoform", "--n", "512", "--out", "th"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(t.path(), "th");
    assert_eq!(s["schema"], "qvi-extremal/1");
    assert_eq!(s["command"], "thermoform");
    assert!(s["exercises"].as_str().unwrap().contains("thermoforming"));
    assert_eq!(s["pass"], true);
    assert!(check(&s, "min_branch_v_norm") <= 1e-8);
    assert!(check(&s, "max_branch_l2_distance_to_sine") <= 1e-3);
    let csv = fs::read_to_string(t.path().join("th/thermoform.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "x,min,max,sin_pi");
    assert_eq!(csv.lines().count(), 513);
}

#[test]
fn rho_sweep_on_inverse_laplacian_is_nonincreasing() {
    let t = TempDir::new().unwrap();
    let cfg = write(
        t.path(),
        "il.toml",
        r#"
n = 64
source = { kind = "affine", a = 8.0, b = 2.0 }

[obstacle]
kind = "inverse_laplacian"
scale = 3.0
offset = { kind = "const", value = 0.02 }

[interval]
bound = { kind = "const", value = 12.0 }

[rho]
schedule = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
"#,
    );
    let o = qvi(
        t.path(),
        &[
            "rho-sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "sweep",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(t.path().join("sweep/rho_sweep.csv")).unwrap();
    let rows: Vec<(f64, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.windows(2).all(|w| w[1].1 <= w[0].1 + f64::EPSILON));
}

#[test]
fn proptest_suite_passes_for_seed_7() {
    let t = TempDir::new().unwrap();
    let o = qvi(t.path(), &["proptest", "--seed", "7", "--out", "p"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let s = summary(t.path(), "p");
    assert_eq!(s["config"]["seed"], 7);
    assert!(s["checks"].as_array().unwrap().len() >= 15);
}

#[test]
fn summaries_are_bit_identical_across_runs() {
    let t = TempDir::new().unwrap();
    for out in ["a", "b"] {
        assert_eq!(
            code(&qvi(
                t.path(),
                &["lipschitz-probe", "--seed", "3", "--n", "32", "--out", out]
            )),
            0
        );
    }
    // Only the output directory may differ.
    let mut a = summary(t.path(), "a");
    let mut b = summary(t.path(), "b");
    a["config"]["out"] = Value::Null;
    b["config"]["out"] = Value::Null;
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    assert_eq!(
        fs::read(t.path().join("a/ratios.csv")).unwrap(),
        fs::read(t.path().join("b/ratios.csv")).unwrap()
    );
}

#[test]
fn solver_commands_pass_on_defaults() {
    let t = TempDir::new().unwrap();
    for cmd in ["solve-vi", "solve-pen", "extremal", "diff-check"] {
        let o = qvi(t.path(), &[cmd, "--n", "48", "--out", cmd]);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stdout));
        assert_eq!(summary(t.path(), cmd)["command"], cmd);
    }
    let o = qvi(
        t.path(),
        &["extremal", "--n", "48", "--branch", "min", "--out", "min"],
    );
    assert_eq!(code(&o), 0);
    assert_eq!(summary(t.path(), "min")["results"]["branch"], "min");
}

#[test]
fn control_writes_trajectory_and_certificate() {
    let t = TempDir::new().unwrap();
    let cfg = write(
        t.path(),
        "c.toml",
        "n = 32\n[control]\nschedule = [1e-2, 1e-3, 1e-4]\nrho_certify = 1e-4\n",
    );
    let o = qvi(
        t.path(),
        &["control", "--config", cfg.to_str().unwrap(), "--out", "ctl"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let traj = fs::read_to_string(t.path().join("ctl/trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next().unwrap(), "iter,value,kkt_residual,rho");
    let cert: Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("ctl/certificate.json")).unwrap())
            .unwrap();
    assert!(cert["checks"]
        .as_array()
        .unwrap()
        .iter()
        .any(|c| c["name"] == "lambda_p_sign"));
}

#[test]
fn certify_accepts_a_control_from_csv() {
    let t = TempDir::new().unwrap();
    let cfg = write(
        t.path(),
        "c.toml",
        "n = 32\n[control]\nschedule = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6]\n",
    );
    let o = qvi(
        t.path(),
        &[
            "certify",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "first",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    fs::copy(
        t.path().join("first/control.csv"),
        t.path().join("fstar.csv"),
    )
    .unwrap();
    let cfg2 = write(
        t.path(),
        "c2.toml",
        "n = 32\n[control]\nf_star = { kind = \"csv\", path = \"fstar.csv\" }\n",
    );
    let o = qvi(
        t.path(),
        &[
            "certify",
            "--config",
            cfg2.to_str().unwrap(),
            "--out",
            "again",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(!t.path().join("again/trajectory.csv").exists());
}

#[test]
fn csv_source_is_read_on_interior_nodes() {
    let t = TempDir::new().unwrap();
    let n = 9;
    let h = 1.0 / (n + 1) as f64;
    let mut text = String::from("x,value\n");
    for i in 1..=n {
        text += &format!("{},{}\n", i as f64 * h, 5.0);
    }
    write(t.path(), "f.csv", &text);
    let cfg = write(
        t.path(),
        "c.toml",
        "n = 9\nsource = { kind = \"csv\", path = \"f.csv\" }\n",
    );
    let o = qvi(
        t.path(),
        &["solve-vi", "--config", cfg.to_str().unwrap(), "--out", "ok"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let o = qvi(
        t.path(),
        &[
            "solve-vi",
            "--config",
            cfg.to_str().unwrap(),
            "--n",
            "10",
            "--out",
            "short",
        ],
    );
    assert_eq!(code(&o), 2);
    assert_eq!(summary(t.path(), "short")["error"]["kind"], "config");
}

#[test]
fn configuration_errors_exit_2_and_still_write_a_summary() {
    let t = TempDir::new().unwrap();
    let cases = [
        ("neg.toml", "[control]\nnu = -1.0\n"),
        ("typo.toml", "nn = 3\n"),
        (
            "missing.toml",
            "source = { kind = \"csv\", path = \"nope.csv\" }\n",
        ),
        (
            "coef.toml",
            "coefficient = { kind = \"affine\", a = -1.0, b = 0.5 }\n",
        ),
    ];
    for (name, text) in cases {
        let cfg = write(t.path(), name, text);
        let out = format!("out_{name}");
        let o = qvi(
            t.path(),
            &["extremal", "--config", cfg.to_str().unwrap(), "--out", &out],
        );
        assert_eq!(code(&o), 2, "{name}");
        let s = summary(t.path(), &out);
        assert_eq!(s["pass"], false);
        assert_eq!(s["error"]["kind"], "config", "{name}");
    }
    let o = qvi(
        t.path(),
        &["extremal", "--config", "absent.toml", "--out", "absent"],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn solver_failure_exits_3() {
    let t = TempDir::new().unwrap();
    let cfg = write(t.path(), "c.toml", "[solver]\nmax_n = 1\ntol_fp = 1e-14\n");
    let o = qvi(
        t.path(),
        &["extremal", "--config", cfg.to_str().unwrap(), "--out", "f"],
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary(t.path(), "f")["error"]["kind"], "solver");
}

#[test]
fn failed_check_exits_1() {
    let t = TempDir::new().unwrap();
    let cfg = write(t.path(), "c.toml", "[solve]\ntol_residual = 1e-300\n");
    let o = qvi(
        t.path(),
        &["solve-vi", "--config", cfg.to_str().unwrap(), "--out", "f"],
    );
    assert_eq!(code(&o), 1);
    let s = summary(t.path(), "f");
    assert_eq!(s["pass"], false);
    assert!(s["error"].is_null());
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL vi_residual"));
}
