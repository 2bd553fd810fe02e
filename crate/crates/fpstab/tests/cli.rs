use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fpstab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpstab")).args(args).arg("--out-dir").arg(dir).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

const SMALL_VERIFY: [&str; 9] = [
    "verify-theory",
    "--vectors",
    "2000",
    "--oracle-starts",
    "100",
    "--oracle-samples",
    "2000",
    "--mc-samples",
    "10000",
];

#[test]
fn verify_theory_passes_and_lists_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = fpstab(dir.path(), &SMALL_VERIFY);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = json(&dir.path().join("verify-theory.json"));
    let checks = r["checks"].as_array().unwrap();
    assert_eq!(r["failed"], 0);
    let constant = checks.iter().find(|c| c["name"] == "p2_fp16_scale_constant").unwrap();
    let reference = constant["reference"].as_f64().unwrap();
    assert!((reference - 2f64.sqrt() / 512.0).abs() < 1e-15);
    for c in checks {
        let (obs, bound, margin) =
            (c["observed"].as_f64().unwrap(), c["bound"].as_f64().unwrap(), c["margin"].as_f64().unwrap());
        assert!((bound - obs - margin).abs() <= 1e-12 * bound.abs().max(1.0));
    }
}

#[test]
fn degenerate_budget_still_passes() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = SMALL_VERIFY.to_vec();
    args.extend(["--n-max", "2"]);
    let out = fpstab(dir.path(), &args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn corrupted_scale_is_a_violation() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = SMALL_VERIFY.to_vec();
    args.extend(["--corrupt-scale", "0.99"]);
    let out = fpstab(dir.path(), &args);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("prenorm_power_sum_at_most_max"), "{}", stderr(&out));
    assert!(dir.path().join("verify-theory.json").exists());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["audit-layernorm", "--format", "fp12"][..],
        &["profile-conv", "--configs", "conv2d9"],
        &["audit-softmax", "--stream", "/nonexistent/stream.bin"],
        &["rewrite-graph", "--passes", "fold"],
        &["audit-layernorm", "--no-such-flag"],
        &["audit-layernorm", "--accumulation", "random"],
    ] {
        let out = fpstab(dir.path(), args);
        assert_eq!(code(&out), 2, "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn binary_and_csv_streams_give_the_same_audit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bin = d.join("s.bin");
    let csv = d.join("s.csv");
    let common = ["--kind", "adversarial", "--rows", "3", "--cols", "128", "--chunks", "4"];
    let mut a = vec!["gen-stream", "--out", bin.to_str().unwrap()];
    a.extend(common);
    assert_eq!(code(&fpstab(d, &a)), 0);
    let mut a = vec!["gen-stream", "--csv", "--out", csv.to_str().unwrap()];
    a.extend(common);
    assert_eq!(code(&fpstab(d, &a)), 0);

    let (ra, rb) = (d.join("a"), d.join("b"));
    assert_eq!(code(&fpstab(&ra, &["audit-layernorm", "--stream", bin.to_str().unwrap()])), 0);
    assert_eq!(code(&fpstab(&rb, &["audit-layernorm", "--stream", csv.to_str().unwrap()])), 0);
    let name = "layernorm-audit.json";
    assert_eq!(fs::read(ra.join(name)).unwrap(), fs::read(rb.join(name)).unwrap());

    // The same stream generated in memory matches too.
    let rc = d.join("c");
    let mut a = vec!["audit-layernorm"];
    a.extend(common);
    assert_eq!(code(&fpstab(&rc, &a)), 0);
    assert_eq!(fs::read(ra.join(name)).unwrap(), fs::read(rc.join(name)).unwrap());
}

#[test]
fn layernorm_audit_counts_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = fpstab(d, &["audit-layernorm", "--kind", "adversarial", "--rows", "2", "--cols", "256", "--check"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = json(&d.join("layernorm-audit.json"));
    for v in r["variants"].as_array().unwrap() {
        let n = v["invocations"].as_u64().unwrap();
        let k = v["overflow_invocations"].as_u64().unwrap();
        assert_eq!(v["overflow_fraction"].as_f64().unwrap(), k as f64 / n as f64);
        if v["prenorm"] == "none" {
            assert!(k > 0);
        } else {
            assert_eq!(k, 0);
        }
    }
    let hist = fs::read_to_string(d.join("layernorm-input-max-hist.csv")).unwrap();
    for series in ["x1", "x22"] {
        let total: u64 = hist
            .lines()
            .skip(1)
            .filter(|l| l.starts_with(&format!("{series},")))
            .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, 16, "{series}");
    }
}

#[test]
fn tiny_stream_never_overflows() {
    let dir = tempfile::tempdir().unwrap();
    let out = fpstab(
        dir.path(),
        &["audit-layernorm", "--scale", "0.01", "--rows", "4", "--cols", "64", "--prenorm", "theorem1"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = json(&dir.path().join("layernorm-audit.json"));
    for v in r["variants"].as_array().unwrap() {
        assert_eq!(v["overflow_invocations"], 0, "{v}");
    }
}

#[test]
fn stream_parse_errors_carry_locations() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad_csv = d.join("bad.csv");
    fs::write(&bad_csv, "0,1,2\n0,1,x\n").unwrap();
    let out = fpstab(d, &["audit-layernorm", "--stream", bad_csv.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    let bad_bin = d.join("bad.bin");
    fs::write(&bad_bin, b"{\"chunk\":0,\"dtype\":\"f64\",\"shape\":[2,2]}\n\x00\x00").unwrap();
    let out = fpstab(d, &["audit-layernorm", "--stream", bad_bin.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("byte"), "{}", stderr(&out));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.toml");
    fs::write(
        &cfg,
        "command = \"audit-softmax\"\nformat = \"fp32\"\nseed = 3\n[stream]\nrows = 4\ncols = 16\n[softmax]\nthreshold = 100.0\n",
    )
    .unwrap();
    let out = fpstab(&d.join("a"), &["audit-softmax", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = json(&d.join("a/softmax-audit.json"));
    assert_eq!(r["format"], "fp32");
    assert_eq!(r["threshold"], 100.0);
    assert_eq!(r["rows"], 32);

    let out = fpstab(
        &d.join("b"),
        &["audit-softmax", "--config", cfg.to_str().unwrap(), "--format", "bf16", "--threshold", "50"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = json(&d.join("b/softmax-audit.json"));
    assert_eq!(r["format"], "bf16");
    assert_eq!(r["threshold"], 50.0);

    let out = fpstab(d, &["audit-layernorm", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("audit-softmax"));

    let bad = d.join("bad.toml");
    fs::write(&bad, "format = \"fp16\"\n\n[stream]\nrowz = 3\n").unwrap();
    let out = fpstab(d, &["audit-layernorm", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 4"), "{}", stderr(&out));
}

#[test]
fn dumped_table_reloads_to_the_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let lut = d.join("exp.lut");
    let out = fpstab(&d.join("a"), &["audit-softmax", "--lut-entries", "300", "--dump-lut", lut.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = fpstab(&d.join("b"), &["audit-softmax", "--lut", lut.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let a = fs::read(d.join("a/softmax-audit.json")).unwrap();
    assert_eq!(a, fs::read(d.join("b/softmax-audit.json")).unwrap());
    assert_eq!(json(&d.join("b/softmax-audit.json"))["lut_entries"], 300);
}

#[test]
fn softmax_check_flags_a_coarse_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = fpstab(dir.path(), &["audit-softmax", "--lut-entries", "8", "--rows", "2", "--cols", "8"]);
    assert_eq!(code(&out), 0);
    let out = fpstab(dir.path(), &["audit-softmax", "--lut-entries", "8", "--rows", "2", "--cols", "8", "--check"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("table relative error"));
}

fn column(path: &Path) -> Vec<f64> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect()
}

#[test]
fn profile_conv_scaling_and_macs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out =
        fpstab(d, &["profile-conv", "--format", "exact", "--rows", "20", "--cols", "30", "--width", "8", "--check"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for base in ["conv2d6", "dws2d6"] {
        let a = column(&d.join(format!("conv-{base}-chunk-max.csv")));
        let b = column(&d.join(format!("conv-{base}x22-chunk-max.csv")));
        assert_eq!(a.len(), 8);
        for (x, y) in a.iter().zip(&b) {
            assert!((y / x / 512f64.sqrt() - 1.0).abs() < 1e-12);
        }
    }
    let t = json(&d.join("mac-table.json"));
    assert_eq!(t["assumptions"]["width"], 512);
    let rows = t["rows"].as_array().unwrap();
    let macs = |n: &str| rows.iter().find(|r| r["config"] == n).unwrap()["subsampling"].as_u64().unwrap();
    assert!(macs("dws2d6") < macs("conv2d6"));
    assert!(rows.iter().all(|r| r["reference_asserted"] == false));
}

#[test]
fn empty_stream_still_writes_mac_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let empty = d.join("empty.bin");
    fs::write(&empty, b"").unwrap();
    let out = fpstab(d, &["profile-conv", "--stream", empty.to_str().unwrap(), "--configs", "conv2d6,dws2d6"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(column(&d.join("conv-conv2d6-chunk-max.csv")).is_empty());
    assert_eq!(json(&d.join("mac-table.json"))["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn rewrite_graph_full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = fpstab(d, &["rewrite-graph", "--passes", "all", "--check", "--dim", "64", "--seq", "16", "--dot"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m = json(&d.join("graph-metrics.json"));
    assert_eq!(m["passes"], serde_json::json!(["layout", "einsum", "chunk:8"]));
    assert_eq!(m["after"]["interior_transposes"], 0);
    assert_eq!(m["after"]["memory_copy_score"], 0);
    assert!(m["after"]["op_counts"].get("batched_matmul").is_none());
    assert_eq!(m["equivalence"]["equivalent"], true);
    assert!(m["before"]["memory_copy_score"].as_u64().unwrap() > 0);
    assert!(fs::read_to_string(d.join("graph-after.dot")).unwrap().starts_with("digraph"));
}

#[test]
fn empty_pass_list_keeps_the_graph() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = fpstab(d, &["rewrite-graph", "--passes", ""]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read(d.join("graph-before.json")).unwrap(), fs::read(d.join("graph-after.json")).unwrap());
}

#[test]
fn graph_file_roundtrip_and_unsupported_op() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&fpstab(d, &["rewrite-graph", "--passes", "", "--heads", "2", "--dim", "8", "--seq", "4"])), 0);
    let saved = d.join("graph-before.json");
    let again = d.join("again");
    let out =
        fpstab(&again, &["rewrite-graph", "--graph", saved.to_str().unwrap(), "--passes", "layout,einsum", "--check"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let odd = d.join("odd.json");
    fs::write(
        &odd,
        r#"{"layout":"BSF","params":{"w":[4,4]},"nodes":[
            {"op":"input","name":"x","dims":[1,2,3,4]},
            {"op":"linear","weight":"w","bias":null,"inputs":[{"node":0,"port":0}]},
            {"op":"output","name":"y","inputs":[{"node":1,"port":0}]}]}"#,
    )
    .unwrap();
    let out = fpstab(d, &["rewrite-graph", "--graph", odd.to_str().unwrap(), "--passes", "layout"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    fs::write(&odd, "{\"layout\": \"BSF\",\n \"nodes\": [ }").unwrap();
    let out = fpstab(d, &["rewrite-graph", "--graph", odd.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}
