use std::path::Path;
use std::process::{Command, Output};

use faultbin_core::netlist::{parse_netlist, Netlist, RawNetlist};
use serde_json::Value;

fn faultbin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_faultbin"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = faultbin(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn text_netlist(path: &Path) -> Netlist {
    parse_netlist(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_mac_parses_back_to_three_buses() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen", "mac-int8", "--out", "g"]);
    let nl = text_netlist(&d.path().join("g/netlist.net"));
    let ins: Vec<(&str, usize)> = nl.input_buses().iter().map(|b| (b.name.as_str(), b.width())).collect();
    assert_eq!(ins, [("a", 8), ("b", 8), ("acc", 16)]);
    assert_eq!(nl.output_buses()[0].width(), 16);
}

#[test]
fn gen_bw_text_and_json_agree() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen", "bw", "--width", "8", "--json", "--out", "g"]);
    let a = text_netlist(&d.path().join("g/netlist.net"));
    let raw: RawNetlist = serde_json::from_value(json(&d.path().join("g/netlist.json"))).unwrap();
    let b = Netlist::from_raw(&raw).unwrap();
    assert_eq!(a.to_raw(), b.to_raw());
}

#[test]
fn gen_cla_annotates_every_carry() {
    let d = tempfile::tempdir().unwrap();
    let s = ok(d.path(), &["gen", "cla", "--width", "16", "--out", "g"]);
    assert_eq!(s["carry_annotations"], 16);
    let nl = text_netlist(&d.path().join("g/netlist.net"));
    let bits: Vec<usize> = nl.carry_annotations().keys().copied().collect();
    // Carry into bit i, for every bit above the LSB and the carry out.
    assert_eq!(bits, (1..=16).collect::<Vec<_>>());
}

#[test]
fn unknown_generator_is_a_validation_error() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(faultbin(d.path(), &["gen", "wallace"]).status.code(), Some(4));
}

#[test]
fn partition_sets_are_disjoint_and_grow_with_k() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen", "mac-int8", "--out", "g"]);
    let p1 = ok(d.path(), &["partition", "g/netlist.net", "--k", "1", "--out", "p1"]);
    let p0 = ok(d.path(), &["partition", "g/netlist.net", "--k", "0", "--out", "p0"]);
    assert!(p1["g_noncrit"].as_u64().unwrap() > 0 && p1["g_crit"].as_u64().unwrap() > 0);
    assert!(p0["g_noncrit"].as_u64() < p1["g_noncrit"].as_u64());
    let part = json(&d.path().join("p1/partition.json"));
    let noncrit = part["g_noncrit"].as_array().unwrap();
    let crit = part["g_crit"].as_array().unwrap();
    assert!(noncrit.iter().all(|g| !crit.contains(g)));
}

#[test]
fn missing_carry_annotation_needs_the_flag() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen", "mac-int8", "--json", "--out", "g"]);
    let mut raw = json(&d.path().join("g/netlist.json"));
    let carry = raw["annotations"]
        .as_array()
        .unwrap()
        .iter()
        .find(|a| a["bit"] == 2)
        .unwrap()["net"]
        .as_str()
        .unwrap()
        .to_string();
    raw["annotations"] = Value::Array(vec![]);
    std::fs::write(d.path().join("bare.json"), raw.to_string()).unwrap();

    let out = faultbin(d.path(), &["partition", "bare.json", "--k", "1"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--carry-net"));

    ok(d.path(), &["partition", "bare.json", "--k", "1", "--carry-net", &carry, "--out", "flag"]);
    ok(d.path(), &["partition", "g/netlist.net", "--k", "1", "--out", "annotated"]);
    assert_eq!(
        std::fs::read(d.path().join("flag/partition.json")).unwrap(),
        std::fs::read(d.path().join("annotated/partition.json")).unwrap()
    );
}

#[test]
fn atpg_report_and_seed_stability() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen", "mac-int8", "--out", "g"]);
    let r = ok(d.path(), &["atpg", "g/netlist.net", "--seed", "5", "--out", "a"]);
    let rows = r["rows"].as_array().unwrap();
    let sets: Vec<&str> = rows.iter().map(|r| r["set"].as_str().unwrap()).collect();
    assert_eq!(sets, ["all", "crit", "noncrit"]);
    for row in rows {
        assert_eq!(row["test_coverage"], 1.0);
        assert_eq!(row["resimulation_agrees"], true);
    }
    ok(d.path(), &["atpg", "g/netlist.net", "--seed", "5", "--out", "b"]);
    for f in ["patterns_all.hex", "patterns_crit.hex", "patterns_noncrit.hex", "faults.csv", "coverage.json"] {
        assert_eq!(
            std::fs::read(d.path().join("a").join(f)).unwrap(),
            std::fs::read(d.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    // The written patterns and fault list re-simulate to full coverage.
    let f = ok(
        d.path(),
        &["fsim", "g/netlist.net", "--patterns", "a/patterns_crit.hex", "--faults", "a/faults.csv", "--class", "crit", "--out", "f"],
    );
    assert_eq!(f["test_coverage"], 1.0);
}

#[test]
fn fsim_rejects_patterns_for_another_netlist() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen", "mac-int8", "--out", "g"]);
    ok(d.path(), &["gen", "bw", "--out", "bw"]);
    ok(d.path(), &["atpg", "bw/netlist.net", "--out", "a"]);
    let out = faultbin(d.path(), &["fsim", "g/netlist.net", "--patterns", "a/patterns_all.hex"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn max_error_respects_the_bound() {
    let d = tempfile::tempdir().unwrap();
    let s = ok(d.path(), &["max-error", "--k", "1", "--out", "m"]);
    assert_eq!(s["compliant"], s["faults"]);
    assert_eq!(s["bound"], 7);
    let csv = std::fs::read_to_string(d.path().join("m/max_error.csv")).unwrap();
    assert_eq!(csv.lines().count() as u64, s["faults"].as_u64().unwrap() + 1);
}

#[test]
fn array_build_then_deactivate_at_same_rate_is_a_no_op() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["array", "build", "--rows", "128", "--cols", "16", "--fr", "5", "--out", "b"]);
    let s = ok(d.path(), &["array", "deactivate", "b/fsr.json", "--fr-max", "5", "--out", "d"]);
    assert_eq!(s["unchanged"], true);
    assert_eq!(s["within_quota"], true);
    let s = ok(d.path(), &["array", "deactivate", "b/fsr.json", "--fr-max", "2", "--out", "d2"]);
    assert_eq!(s["unchanged"], false);
}

#[test]
fn array_throughput_formulas_recompute() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["array", "build", "--rows", "32", "--cols", "32", "--fr", "10", "--fr-crit", "3", "--out", "b"]);
    ok(d.path(), &["array", "deactivate", "b/fsr.json", "--out", "d"]);
    let t = ok(d.path(), &["array", "throughput", "d/fsr.json", "--steps", "7", "--out", "t"]);
    let f = |k: &str| t[k].as_u64().unwrap();
    assert_eq!(t["simd_factor"].as_f64().unwrap(), f("n_remaining_pe") as f64 / f("n_total_pe") as f64);
    assert_eq!(f("systolic_extra_macs"), f("n_dim_sys_arr") * f("n_sys_arr_faulty_cols") * 7);
}

#[test]
fn array_bypass_check_is_exact() {
    let d = tempfile::tempdir().unwrap();
    let s = ok(d.path(), &["array", "bypass-check", "--out", "c"]);
    assert_eq!(s["cases"], 20);
    assert_eq!(s["all_exact"], true);
}

#[test]
fn exit_codes_distinguish_failures() {
    let d = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| faultbin(d.path(), args).status.code();
    assert_eq!(code(&["array", "deactivate", "missing.json"]), Some(5));
    std::fs::write(d.path().join("broken.json"), "{\"rows\": ").unwrap();
    assert_eq!(code(&["array", "deactivate", "broken.json"]), Some(3));
    std::fs::write(d.path().join("bad.net"), "gate 0 FROB y a\n").unwrap();
    assert_eq!(code(&["partition", "bad.net"]), Some(3));
    assert_eq!(code(&["array", "build", "--fr", "120"]), Some(4));
    assert_eq!(code(&["--threads", "0", "array", "bypass-check"]), Some(4));
    assert_eq!(code(&["array", "frobnicate"]), Some(2));
}

#[test]
fn config_layers_under_flags() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(
        d.path().join("run.json"),
        r#"{"command": "array build", "params": {"rows": 8, "cols": 4, "fr": 25, "seed": 9}}"#,
    )
    .unwrap();
    let s = ok(d.path(), &["--config", "run.json", "array", "build", "--cols", "6", "--out", "o"]);
    assert_eq!((s["rows"].as_u64(), s["cols"].as_u64()), (Some(8), Some(6)));
    let m = json(&d.path().join("o/manifest.json"));
    assert_eq!(m["command"], "array build");
    assert_eq!(m["params"]["seed"], 9);
    assert_eq!(m["params"]["fr"], 25.0);

    let out = faultbin(d.path(), &["--config", "run.json", "gen", "bw"]);
    assert_eq!(out.status.code(), Some(4));
    std::fs::write(d.path().join("typo.json"), r#"{"command": "array build", "params": {"rowz": 8}}"#).unwrap();
    assert_eq!(faultbin(d.path(), &["--config", "typo.json", "array", "build"]).status.code(), Some(4));
}

#[test]
fn replay_reproduces_outputs_byte_for_byte() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["array", "build", "--rows", "24", "--cols", "12", "--fr", "10", "--seed", "4", "--out", "a"]);
    ok(d.path(), &["replay", "a/manifest.json", "--out", "b"]);
    assert_eq!(
        std::fs::read(d.path().join("a/fsr.json")).unwrap(),
        std::fs::read(d.path().join("b/fsr.json")).unwrap()
    );
    let log = std::fs::read_to_string(d.path().join("a/run.log")).unwrap();
    assert!(log.trim_end().ends_with("array build"));
}
