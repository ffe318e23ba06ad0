//! End-to-end tests of the installed binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn contragram(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_contragram"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_etf_z(path: &Path, c: usize) {
    let off = -1.0 / (c as f64 - 1.0);
    let mut text = String::new();
    for i in 0..c {
        let row: Vec<String> = (0..c)
            .map(|j| if i == j { "1".to_string() } else { format!("{off}") })
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

#[test]
fn etf_prints_gram_offdiagonals() {
    let out = contragram(&["etf", "5"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("1,-0.25,-0.25,-0.25,-0.25"), "{text}");
    assert!(text.contains("label,x0,x1,x2,x3,x4"), "{text}");

    let out2 = contragram(&["etf", "2"]);
    assert!(stdout(&out2).contains("1,-1"));
}

#[test]
fn etf_rejects_one_class() {
    let out = contragram(&["etf", "1"]);
    assert!(!out.status.success());
}

#[test]
fn eval_etf_c2_k1() {
    let dir = tempfile::tempdir().unwrap();
    let z = dir.path().join("z.csv");
    write_etf_z(&z, 2);
    let out = contragram(&["eval", z.to_str().unwrap(), "--rho", "uniform:2", "--k", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((v["nce_loss"].as_f64().unwrap() - 0.410038).abs() < 1e-5);
    assert_eq!(v["mode"], "exact");
}

#[test]
fn eval_all_ones_k7() {
    let dir = tempfile::tempdir().unwrap();
    let z = dir.path().join("ones.csv");
    fs::write(&z, "1,1,1\n1,1,1\n1,1,1\n").unwrap();
    let out = contragram(&["eval", z.to_str().unwrap(), "--rho", "uniform:3", "--k", "7"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((v["nce_loss"].as_f64().unwrap() - 8.0f64.ln()).abs() < 1e-9);
}

#[test]
fn eval_rejects_ragged_and_infeasible_files() {
    let dir = tempfile::tempdir().unwrap();
    let ragged = dir.path().join("ragged.csv");
    fs::write(&ragged, "1,0\n0\n").unwrap();
    let out = contragram(&["eval", ragged.to_str().unwrap(), "--rho", "uniform:2", "--k", "1"]);
    assert!(!out.status.success());

    let indefinite = dir.path().join("bad.csv");
    fs::write(&indefinite, "1,0.9,-0.9\n0.9,1,0.9\n-0.9,0.9,1\n").unwrap();
    let out = contragram(&["eval", indefinite.to_str().unwrap(), "--rho", "uniform:3", "--k", "1"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("eigenvalue"), "{err}");
}

#[test]
fn bounds_floor_and_k_range_guard() {
    let out = contragram(&["bounds", "--rho", "uniform:10", "--k-min", "100", "--k-max", "100"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("100,"), "{text}");
    assert!(last.ends_with(",4"), "{text}");

    // rho_max = 0.5 needs k >= 2.
    let dir = tempfile::tempdir().unwrap();
    let rho = dir.path().join("rho.csv");
    fs::write(&rho, "0.5,0.25,0.25\n").unwrap();
    let out = contragram(&["bounds", "--rho", rho.to_str().unwrap(), "--k-min", "1", "--k-max", "3"]);
    assert!(!out.status.success());
}

#[test]
fn metrics_collapsed_etf5_cs() {
    // Two identical embeddings per class at the ETF vertices: CS equals the
    // ETF Gram, so the off-diagonal mean is -0.25 with zero spread.
    let out5 = contragram(&["etf", "5"]);
    let text = stdout(&out5);
    let emb_section = text.split("embeddings\n").nth(1).unwrap();
    let mut csv = String::new();
    for (i, line) in emb_section.lines().enumerate() {
        csv.push_str(line);
        csv.push('\n');
        if i > 0 {
            csv.push_str(line);
            csv.push('\n');
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let emb = dir.path().join("emb.csv");
    fs::write(&emb, csv).unwrap();
    let out = contragram(&["metrics", emb.to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mean_line = text
        .lines()
        .find(|l| l.starts_with("cs_offdiag_mean"))
        .unwrap();
    let mean: f64 = mean_line.rsplit(',').next().unwrap().parse().unwrap();
    assert!((mean + 0.25).abs() < 1e-9, "{mean_line}");
    let std_line = text.lines().find(|l| l.starts_with("cs_offdiag_std")).unwrap();
    let std: f64 = std_line.rsplit(',').next().unwrap().parse().unwrap();
    assert!(std < 1e-9, "{std_line}");
    for line in text.lines().filter(|l| l.starts_with("intra_var")) {
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(v, 0.0, "{line}");
    }
}

#[test]
fn sweep_is_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(
        &cfg_path,
        r#"{"c_list":[2,3],"alpha_list":[1.0],"k_list":[1,2],"root_seed":5,
            "optimizer":{"steps":5,"batch":64,"eta0":50.0,"runs":2,"mode":"stochastic",
            "seed":0,"projection_tol":1e-8,"projection_max_iter":200,"init":"identity","trace_dir":null}}"#,
    )
    .unwrap();
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    for (out, _) in [(&out_a, 0), (&out_b, 1)] {
        let r = contragram(&[
            "sweep",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let a = fs::read_to_string(&out_a).unwrap();
    let b = fs::read_to_string(&out_b).unwrap();
    // wall_ms differs between runs; everything else is bit-identical.
    let strip = |text: &str| -> Vec<String> {
        text.lines()
            .map(|l| {
                let fields: Vec<&str> = l.split(',').collect();
                let mut f: Vec<String> = fields.iter().map(|s| s.to_string()).collect();
                if f.len() == 14 && f[0] != "C" {
                    f[12] = String::new();
                }
                f.join(",")
            })
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
    assert!(a.starts_with("C,alpha,distribution_seed,k,nce_loss_exact,sup_loss,"));

    // A rerun over an existing file is a no-op, byte for byte.
    let r = contragram(&[
        "sweep",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
    ]);
    assert!(r.status.success());
    assert_eq!(fs::read_to_string(&out_a).unwrap(), a);
}

#[test]
fn sweep_json_lines_format() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(
        &cfg_path,
        r#"{"c_list":[2],"alpha_list":[1.0],"k_list":[1],"root_seed":5,
            "optimizer":{"steps":3,"batch":32,"eta0":50.0,"runs":1,"mode":"stochastic",
            "seed":0,"projection_tol":1e-8,"projection_max_iter":200,"init":"identity","trace_dir":null}}"#,
    )
    .unwrap();
    let out = dir.path().join("rows.jsonl");
    let r = contragram(&[
        "sweep",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--format",
        "json-lines",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(v["c"], 2);
    assert_eq!(v["k"], 1);
    assert!(v["sup_loss"].is_f64());
    // The monotonicity report lands next to the rows.
    let report = fs::read_to_string(out.with_extension("report.json")).unwrap();
    let rep: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(rep["summary"]["curves_total"], 1);
}

#[test]
fn verify_quick_passes() {
    let out = contragram(&["verify", "quick"]);
    assert!(
        out.status.success(),
        "verify failed:\n{}",
        stdout(&out)
    );
    let text = stdout(&out);
    assert!(text.contains("10/10 checks passed"), "{text}");
}
