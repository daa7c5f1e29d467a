use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name).display().to_string()
}

fn gridsens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridsens")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json_ok(args: &[&str]) -> Value {
    let o = gridsens(args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["meta"]["tool"], "gridsens");
    assert_eq!(v["meta"]["command"], args[0]);
    v
}

fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn is_num_or_null(v: &Value) -> bool {
    v.is_number() || v.is_null()
}

#[test]
fn solve_json_schema() {
    let v = json_ok(&["solve", &data("case14.m"), "--json"]);
    let d = &v["data"];
    assert_eq!(d["case"], "case14");
    assert_eq!(d["iterations"], 4);
    assert!(d["max_mismatch"].as_f64().unwrap() < 1e-8);
    let buses = d["buses"].as_array().unwrap();
    assert_eq!(buses.len(), 14);
    for b in buses {
        for key in ["id", "vm", "va_deg", "p_inj", "q_inj"] {
            assert!(b[key].is_number(), "{key}");
        }
    }
    assert_eq!(buses[13]["id"], 14);
    assert!((buses[13]["vm"].as_f64().unwrap() - 1.0355299458535663).abs() < 1e-9);
    let branches = d["branches"].as_array().unwrap();
    assert_eq!(branches.len(), 20);
    for b in branches {
        for key in ["index", "from", "to", "p_fr", "q_fr", "p_to", "q_to"] {
            assert!(b[key].is_number(), "{key}");
        }
        assert!(b["closed"].is_boolean());
    }
}

#[test]
fn solve_csv_schema() {
    let o = gridsens(&["solve", &data("case14.m"), "--csv"]);
    let (h, rows) = csv_rows(&stdout(&o));
    assert_eq!(h, ["bus", "vm", "va_deg", "p_inj", "q_inj"]);
    assert_eq!(rows.len(), 14);
    for r in &rows {
        for c in &r[1..] {
            c.parse::<f64>().unwrap();
        }
    }
}

#[test]
fn numbers_have_at_most_twelve_significant_digits() {
    let o = gridsens(&["solve", &data("case118.m"), "--csv"]);
    let (_, rows) = csv_rows(&stdout(&o));
    for cell in rows.iter().flat_map(|r| r[1..].iter()) {
        let digits: String = cell.trim_start_matches('-').chars().filter(|c| c.is_ascii_digit()).collect();
        let significant = digits.trim_start_matches('0').trim_end_matches('0');
        assert!(significant.len() <= 12 || cell.contains('e'), "{cell}");
    }
}

#[test]
fn dclodf_schemas() {
    let o = gridsens(&["dclodf", &data("case14.m"), "--csv"]);
    let (h, rows) = csv_rows(&stdout(&o));
    assert_eq!(h, ["outage", "monitored", "lodf", "pre_flow", "predicted_flow", "islanding"]);
    // 19 non-bridge outages x 20 monitored plus one islanding row
    assert_eq!(rows.len(), 19 * 20 + 1);
    assert!(rows.iter().any(|r| r[0] == "13" && r[5] == "true"));
    let diag = rows.iter().find(|r| r[0] == "3" && r[1] == "3").unwrap();
    assert_eq!(diag[2], "-1");

    let v = json_ok(&["dclodf", &data("case14.m"), "--outage", "3"]);
    let out = &v["data"]["outages"][0];
    assert_eq!(out["outage"], 3);
    assert_eq!(out["islanding"], false);
    assert_eq!(out["lodf"].as_array().unwrap().len(), 20);
    assert!(out["rho"].is_number());
}

#[test]
fn sens_schemas() {
    let v = json_ok(&["sens", &data("case14.m"), "--outage", "2", "--metric", "imag-inf", "--side", "to"]);
    let d = &v["data"];
    assert_eq!(d["metric"], "imag_inf");
    assert_eq!(d["mode"], "full");
    let o = &d["outages"][0];
    assert_eq!(o["outage"], 2);
    assert_eq!(o["bridge"], false);
    assert_eq!(o["gamma"].as_array().unwrap().len(), 4);
    assert_eq!(o["delta_vmag"].as_array().unwrap().len(), 14);
    assert_eq!(o["delta_imag"].as_array().unwrap().len(), 20);
    assert!(o["delta_p"].as_array().unwrap().iter().all(is_num_or_null));

    let o = gridsens(&["sens", &data("case14.m"), "--mode", "network", "--csv"]);
    let (h, rows) = csv_rows(&stdout(&o));
    assert_eq!(h, ["outage", "from", "to", "bridge", "islanding", "severity", "t_condition"]);
    assert_eq!(rows.len(), 20);
    let bridge = rows.iter().find(|r| r[0] == "13").unwrap();
    assert_eq!((bridge[3].as_str(), bridge[4].as_str(), bridge[5].as_str()), ("true", "true", "inf"));
}

#[test]
fn screen_with_oracle_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("summary.json");
    let o = gridsens(&[
        "screen",
        &data("case14.m"),
        "--top",
        "5",
        "--with-oracle",
        "--csv",
        "--summary",
        summary.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let (h, rows) = csv_rows(&stdout(&o));
    assert_eq!(h, ["rank", "branch", "from", "to", "severity", "islanding", "oracle_severity"]);
    assert_eq!(rows.len(), 20);
    assert_eq!(rows[0][..6], ["1", "13", "7", "8", "inf", "true"]);
    for (k, r) in rows.iter().enumerate() {
        assert_eq!(r[0], (k + 1).to_string());
        r[6].parse::<f64>().unwrap();
    }
    let s: Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    let c = &s["data"]["comparison"];
    assert_eq!(c["comparable"], 19);
    assert!(c["spearman"].as_f64().unwrap() >= 0.8);
    assert_eq!(c["overlaps"].as_array().unwrap().len(), 3);
    assert_eq!(s["data"]["top_k"], 5);
    let entries = s["data"]["entries"].as_array().unwrap();
    assert_eq!(entries.iter().filter(|e| e["top_k"] == true).count(), 5);
    assert!(entries[0]["severity"].is_null() && entries[0]["islanding"] == true);

    // without the oracle the CSV has no oracle column
    let o = gridsens(&["screen", &data("case14.m"), "--csv"]);
    let (h, _) = csv_rows(&stdout(&o));
    assert_eq!(h.len(), 6);
}

#[test]
fn compare_reads_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.csv");
    let case = data("case118.m");
    assert!(gridsens(&["screen", &case, "--out", a.to_str().unwrap()]).status.success());
    assert!(gridsens(&["screen", &case, "--csv", "--out", b.to_str().unwrap()]).status.success());
    let v = json_ok(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    let d = &v["data"];
    assert_eq!(d["comparable"], 177);
    assert_eq!(d["spearman"], 1.0);
    for o in d["overlaps"].as_array().unwrap() {
        assert_eq!(o["count"], o["k"]);
    }
}

#[test]
fn dump_is_canonical_json() {
    let v: Value = serde_json::from_str(&stdout(&gridsens(&["dump", &data("case14.m")]))).unwrap();
    assert_eq!(v["name"], "case14");
    assert_eq!(v["buses"].as_array().unwrap().len(), 14);
    assert_eq!(v["branches"][0]["from_bus"], 1);
}

#[test]
fn identical_inputs_give_identical_outputs() {
    let args = ["screen", &data("case118.m"), "--jobs", "3"];
    let first = gridsens(&args);
    let second = gridsens(&["screen", &data("case118.m"), "--jobs", "1"]);
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn exit_codes() {
    let o = gridsens(&["sens", "missing.m"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.m"));
    assert_eq!(gridsens(&["solve", &data("case14.m"), "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(gridsens(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(gridsens(&["sens", &data("case14.m"), "--outage", "99"]).status.code(), Some(1));
    assert_eq!(gridsens(&["sens", &data("case14.m"), "--outage", "x"]).status.code(), Some(1));
    // numerical failures
    assert_eq!(gridsens(&["solve", &data("case14.m"), "--max-iter", "1"]).status.code(), Some(2));
    assert_eq!(gridsens(&["dclodf", &data("case14.m"), "--outage", "13"]).status.code(), Some(2));
    // help and version
    assert_eq!(gridsens(&["--help"]).status.code(), Some(0));
    let v = gridsens(&["--version"]);
    assert_eq!(v.status.code(), Some(0));
    assert!(stdout(&v).starts_with("gridsens "));
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.csv");
    let o = gridsens(&["solve", &data("case14.m"), "--csv", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    assert!(std::fs::read_to_string(path).unwrap().starts_with("bus,vm,"));
}
