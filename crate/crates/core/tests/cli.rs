mod common;

use common::{chainscope, instance, read_json, repo_root, validate};
use tempfile::TempDir;

fn run_ok(dir: &TempDir, extra: &[&str]) -> serde_json::Value {
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["--out", out, "--samples", "2000"];
    args.extend_from_slice(extra);
    let o = chainscope(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let cmd = extra.iter().find(|a| ["analyze", "bounds", "partition", "duality", "ellipsoid", "modulus"].contains(a)).unwrap();
    read_json(&dir.path().join(format!("{cmd}.json")))
}

#[test]
fn every_command_matches_the_schema() {
    let report_schema = read_json(&repo_root().join("schemas/report.schema.json"));
    let manifest_schema = read_json(&repo_root().join("schemas/manifest.schema.json"));
    let inst = instance("collinear_013.json");
    let inst = inst.to_str().unwrap();
    for cmd in ["analyze", "bounds", "partition", "duality", "modulus"] {
        let dir = TempDir::new().unwrap();
        let report = run_ok(&dir, &["--instance", inst, cmd]);
        validate(&report_schema, &report).unwrap_or_else(|e| panic!("{cmd}: {e}"));
        let manifest = read_json(&dir.path().join(format!("{cmd}.manifest.json")));
        validate(&manifest_schema, &manifest).unwrap_or_else(|e| panic!("{cmd} manifest: {e}"));
        for f in manifest["outputs"].as_array().unwrap() {
            assert!(dir.path().join(f.as_str().unwrap()).exists(), "{f}");
        }
    }
    let dir = TempDir::new().unwrap();
    let report = run_ok(&dir, &["ellipsoid", "--axes", "1,0.5,0.25"]);
    validate(&report_schema, &report).unwrap();
    assert!(dir.path().join("ellipsoid_instance.json").exists());
}

#[test]
fn csv_headers_match_fields() {
    let dir = TempDir::new().unwrap();
    let inst = instance("two_point.json");
    run_ok(&dir, &["--instance", inst.to_str().unwrap(), "bounds"]);
    let text = std::fs::read_to_string(dir.path().join("bounds_delta.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "delta,modulus,modulus_stderr,cover_size,entropy_term,upper_proxy,lower_expression,lower_witness_c"
    );
}

#[test]
fn same_seed_same_bytes_across_threads() {
    let inst = instance("iid_16.json");
    let mut reports = Vec::new();
    for threads in ["1", "4"] {
        let dir = TempDir::new().unwrap();
        run_ok(&dir, &["--instance", inst.to_str().unwrap(), "--threads", threads, "--seed", "7", "bounds"]);
        reports.push(std::fs::read(dir.path().join("bounds.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn input_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"name":"x","metric":{"type":"matrix","data":[[0,1],[2,0]]}}"#).unwrap();
    let o = chainscope(&["--instance", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "analyze"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("metric.data"));

    std::fs::write(&bad, "{\n \"name\": \"x\",\n \"metric\": 4\n}").unwrap();
    let o = chainscope(&["--instance", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "analyze"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let o = chainscope(&["--out", dir.path().to_str().unwrap(), "analyze"]);
    assert_eq!(o.status.code(), Some(2));
    let o = chainscope(&["--out", dir.path().to_str().unwrap(), "ellipsoid", "--axes", "1,2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = chainscope(&["--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn nonembeddable_metric_is_an_input_error_for_bounds() {
    // a 4-cycle with unit edges does not embed in Hilbert space
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("c4.json");
    std::fs::write(
        &p,
        r#"{"name":"c4","metric":{"type":"matrix","data":[[0,1,2,1],[1,0,1,2],[2,1,0,1],[1,2,1,0]]}}"#,
    )
    .unwrap();
    let out = dir.path().to_str().unwrap();
    let o = chainscope(&["--instance", p.to_str().unwrap(), "--out", out, "bounds"]);
    assert_eq!(o.status.code(), Some(2));
    let o = chainscope(&["--instance", p.to_str().unwrap(), "--out", out, "--samples", "500", "duality"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&dir.path().join("duality.json"));
    assert!(report["warnings"].as_array().unwrap().iter().any(|w| w.as_str().unwrap().contains("no Gaussian model")));
}

#[test]
fn replay_detects_changes() {
    let dir = TempDir::new().unwrap();
    let inst = instance("equilateral_8.json");
    run_ok(&dir, &["--instance", inst.to_str().unwrap(), "modulus"]);
    let manifest = dir.path().join("modulus.manifest.json");
    let again = TempDir::new().unwrap();
    let o = chainscope(&["replay", "--manifest", manifest.to_str().unwrap(), "--out", again.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("\"identical\": true"));

    let mut m = read_json(&manifest);
    m["report_sha256"] = serde_json::Value::String("00".into());
    std::fs::write(&manifest, m.to_string()).unwrap();
    let o = chainscope(&["replay", "--manifest", manifest.to_str().unwrap(), "--out", again.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn young_mode_reports_doubling_data() {
    let dir = TempDir::new().unwrap();
    let inst = instance("equilateral_8.json");
    let r = run_ok(&dir, &["--instance", inst.to_str().unwrap(), "--mode", "young-inverse", "--young", "1", "analyze"]);
    assert_eq!(r["payload"]["young"]["q"], 1.0);
    let r = run_ok(&dir, &["--instance", inst.to_str().unwrap(), "--mode", "young-inverse", "--young", "3", "analyze"]);
    assert!(r["payload"]["young"]["doubling_constant"].is_number());
}

#[test]
fn two_point_command_examples() {
    let inst = instance("two_point.json");
    let inst = inst.to_str().unwrap();
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = chainscope(&["--instance", inst, "--out", out, "--samples", "100000", "--seed", "7", "bounds"]);
    assert_eq!(o.status.code(), Some(0));
    let p = &read_json(&dir.path().join("bounds.json"))["payload"];
    let exact = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let (e, se) = (p["esup"].as_f64().unwrap(), p["stderr"].as_f64().unwrap());
    assert!((e - exact).abs() <= 3.0 * se, "{e} ± {se}");

    let o = chainscope(&["--instance", inst, "--out", out, "duality"]);
    assert_eq!(o.status.code(), Some(0));
    let r = &read_json(&dir.path().join("duality.json"))["payload"]["report"];
    for key in ["sup_self", "inf_sup", "sup_inf"] {
        assert!((r[key].as_f64().unwrap() - 1.0).abs() < 1e-6, "{key} = {}", r[key]);
    }
}
