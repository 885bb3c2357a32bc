use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use upcycle_core::workload::{Mode, Trace};

fn upcycle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_upcycle"))
        .args(args)
        .env_remove("UPCYCLE_COEFFICIENTS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = upcycle(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn trace(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/traces")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn characterize_prints_census_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("c.csv");
    let out = ok(&["characterize", &trace("resnet50_inf.json"), "--csv", csv.to_str().unwrap()]);
    assert!(out.contains("resnet50_inf"));
    let mut r = csv::Reader::from_path(&csv).unwrap();
    let header = r.headers().unwrap().clone();
    assert!(header.iter().any(|h| h == "distinct_shape_count"));
    let row = r.records().next().unwrap().unwrap();
    let shapes: usize = row[header.iter().position(|h| h == "distinct_shape_count").unwrap()].parse().unwrap();
    assert!(shapes.abs_diff(30) <= 3);
}

#[test]
fn missing_trace_is_an_io_error() {
    let o = upcycle(&["characterize", "missing.json"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));
}

#[test]
fn simulate_base_resnet_utilization() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.json");
    ok(&["simulate", &trace("resnet50_inf.json"), "--preset", "base", "--dtype", "int8", "--json", out.to_str().unwrap()]);
    let util = json(&out)["run"]["utilization"].as_f64().unwrap();
    assert!((util - 0.359).abs() <= 0.10, "{util}");
}

#[test]
fn halving_bandwidth_costs_about_a_tenth_across_the_suite() {
    let dir = tempfile::tempdir().unwrap();
    let throughput = |model: &str, extra: &[&str]| {
        let out = dir.path().join(format!("{model}{}.json", extra.len()));
        let spec = format!("zoo:{model}");
        let mut args = vec!["simulate", spec.as_str(), "--json", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        ok(&args);
        json(&out)["run"]["samples_per_s"].as_f64().unwrap()
    };
    let models = ["resnet50", "ssd_resnet34", "bert_large_128", "rnnt"];
    let mut logs = 0.0;
    for m in models {
        let ratio = throughput(m, &["--mem-bw", "450e9"]) / throughput(m, &[]);
        assert!(ratio <= 1.0, "{m}: {ratio}");
        logs += ratio.ln();
    }
    let geo = (logs / models.len() as f64).exp();
    assert!((geo - 0.89).abs() <= 0.06, "{geo}");
}

#[test]
fn empty_trace_draws_static_power_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.json");
    Trace::empty("empty", Mode::Inference, 1).save(&path).unwrap();
    let out = dir.path().join("run.json");
    ok(&["simulate", path.to_str().unwrap(), "--json", out.to_str().unwrap()]);
    let v = json(&out);
    assert_eq!(v["run"]["total_ops"].as_u64(), Some(0));
    assert_eq!(v["power"]["avg_power_w"], v["power"]["static_w"]);
    assert_eq!(v["power"]["pj_per_op"].as_f64(), Some(0.0));
}

#[test]
fn one_config_manifest_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.toml");
    std::fs::write(
        &manifest,
        "version = 1\nname = \"one\"\n[[trace]]\nmodel = \"bert_base_128\"\nmode = \"inference\"\nbatch = 1\n",
    )
    .unwrap();
    let csv = dir.path().join("s.csv");
    ok(&["sweep", manifest.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    let mut r = csv::Reader::from_path(&csv).unwrap();
    assert_eq!(r.records().count(), 1);
}

#[test]
fn default_sweep_has_an_efficient_base_and_a_poor_low_point() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("grid.csv");
    ok(&["sweep", "--csv", csv.to_str().unwrap()]);
    let mut r = csv::Reader::from_path(&csv).unwrap();
    let h = r.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|x| x == name).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 24 * 8);
    let base: Vec<&csv::StringRecord> = rows.iter().filter(|x| &x[col("config")] == "2048c-512v-2ghz-64mib-900gbs").collect();
    assert_eq!(base.len(), 8);
    let on_front = base.iter().filter(|x| &x[col("pareto")] == "true").count();
    assert!(on_front * 2 >= base.len(), "{on_front}");
    let low: Vec<&csv::StringRecord> = rows.iter().filter(|x| &x[col("config")] == "1024c-256v-1ghz-64mib-900gbs").collect();
    let geo = |rs: &[&csv::StringRecord]| {
        let logs: f64 = rs.iter().map(|x| x[col("pj_per_op")].parse::<f64>().unwrap().ln()).sum();
        (logs / rs.len() as f64).exp()
    };
    assert!(geo(&low) >= 2.0 * geo(&base));
}

#[test]
fn comparing_a_run_with_itself_is_unity() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("rec.json");
    let rep = dir.path().join("rep.json");
    ok(&["simulate", "zoo:resnet50", "--json", rec.to_str().unwrap()]);
    ok(&["compare", rec.to_str().unwrap(), "--baseline", rec.to_str().unwrap(), "--json", rep.to_str().unwrap()]);
    let v = json(&rep);
    assert_eq!(v["rows"][0]["speedup"].as_f64(), Some(1.0));
    assert_eq!(v["rows"][0]["rel_efficiency"].as_f64(), Some(1.0));
}

#[test]
fn a100_comparison_reports_regimes_and_exclusions() {
    let dir = tempfile::tempdir().unwrap();
    let rep = dir.path().join("rep.json");
    let o = upcycle(&["compare", "zoo:resnet50", "zoo:ssd_resnet34", "zoo:alexnet", "--json", rep.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("alexnet_inf"));
    let v = json(&rep);
    assert_eq!(v["excluded"][0], "alexnet_inf");
    assert_eq!(v["summaries"][0]["regime"], "small");
    assert_eq!(v["summaries"][0]["apps"], 2);
    assert!(v["summaries"][0]["geomean_speedup"].as_f64().unwrap() > 1.0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("published utilization"));
}

#[test]
fn exit_codes_separate_error_classes() {
    assert_eq!(upcycle(&["simulate", "zoo:resnet50", "--simd-bits", "384"]).status.code(), Some(5));
    assert_eq!(upcycle(&["simulate", "zoo:resnet50", "--preset", "nope"]).status.code(), Some(5));
    assert_eq!(upcycle(&["simulate", "zoo:nope"]).status.code(), Some(3));
    assert_eq!(upcycle(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "version = 1\nname = \"x\"\n").unwrap();
    assert_eq!(upcycle(&["sweep", bad.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn coefficient_file_comes_from_the_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_upcycle"))
        .args(["simulate", "zoo:alexnet"])
        .env("UPCYCLE_COEFFICIENTS", "/nonexistent/coeffs.toml")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("coeffs.toml"));
}

#[test]
fn microbench_verifies_kernels() {
    let out = ok(&["microbench", "--verify", "--shape", "8x24x40", "--shape", "1x64x64"]);
    assert_eq!(out.lines().filter(|l| l.trim_end().ends_with("yes")).count(), 2);
    let o = upcycle(&["microbench", "--shape", "8x0x4"]);
    assert_eq!(o.status.code(), Some(2));
}
