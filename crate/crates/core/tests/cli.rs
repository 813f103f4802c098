use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use stormchain::cli::{read_ensemble, read_manifest, sha256_file, Manifest};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stormchain")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> PathBuf {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    PathBuf::from(String::from_utf8(o.stdout).unwrap().trim())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn output_hash(m: &Manifest, p: &Path) -> String {
    m.outputs.iter().find(|f| Path::new(&f.path) == p).expect("output listed").sha256.clone()
}

fn input_hash(m: &Manifest, p: &Path) -> String {
    m.inputs.iter().find(|f| Path::new(&f.path) == p).expect("input listed").sha256.clone()
}

#[test]
fn pipeline_manifests_chain_by_hash() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data.csv");
    let model = d.path().join("model.json");
    let ens = d.path().join("ens.csv");
    let resp = d.path().join("resp.csv");
    let diag = d.path().join("diag");

    let m_synth = read_manifest(&ok(&["synth", "--out", s(&data), "--n", "30000", "--seed", "3"])).unwrap();
    let m_fit = read_manifest(&ok(&["fit", "--data", s(&data), "--out", s(&model), "--family", "evar", "--order", "1"])).unwrap();
    let m_sim = read_manifest(&ok(&["simulate", "--model", s(&model), "--out", s(&ens), "--n", "300", "--seed", "5"])).unwrap();
    let m_resp = read_manifest(&ok(&["respond", "--input", s(&ens), "--out", s(&resp)])).unwrap();
    let m_diag = read_manifest(&ok(&[
        "diagnose", "--data", s(&data), "--ensemble", s(&ens), "--out-dir", s(&diag), "--n-boot", "20", "--max-lag", "3",
    ]))
    .unwrap();

    assert_eq!(input_hash(&m_fit, &data), output_hash(&m_synth, &data));
    assert_eq!(input_hash(&m_sim, &model), output_hash(&m_fit, &model));
    assert_eq!(input_hash(&m_resp, &ens), output_hash(&m_sim, &ens));
    assert_eq!(input_hash(&m_diag, &ens), output_hash(&m_sim, &ens));
    for m in [&m_synth, &m_fit, &m_sim, &m_resp, &m_diag] {
        for f in &m.outputs {
            assert_eq!(sha256_file(Path::new(&f.path)).unwrap(), f.sha256);
        }
    }
    assert_eq!(m_sim.seed, Some(5));

    let excursions = read_ensemble(std::fs::File::open(&ens).unwrap()).unwrap();
    assert_eq!(excursions.len(), 300);
    let responses = std::fs::read_to_string(&resp).unwrap();
    // header plus one row per excursion and response
    assert_eq!(responses.lines().count(), 1 + 2 * 300);

    let summary: Value = serde_json::from_reader(std::fs::File::open(ens.with_extension("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n"], 300);
    assert_eq!(summary["rejection"], "keep-peak");

    let chi = std::fs::read_to_string(diag.join("chi.csv")).unwrap();
    assert!(chi.lines().any(|l| l.starts_with("data,hw,3,")));
    assert!(chi.lines().any(|l| l.starts_with("model,hh,1,")));
    assert!(diag.join("survival.csv").is_file());
}

#[test]
fn simulation_is_byte_for_byte_reproducible_and_reruns_verify() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data.csv");
    let model = d.path().join("hm.json");
    ok(&["synth", "--out", s(&data), "--n", "30000", "--seed", "4"]);
    ok(&["fit", "--data", s(&data), "--out", s(&model), "--family", "hm"]);
    let a = d.path().join("a.csv");
    let b = d.path().join("b.csv");
    let ma = ok(&["simulate", "--model", s(&model), "--out", s(&a), "--n", "200", "--seed", "9"]);
    ok(&["simulate", "--model", s(&model), "--out", s(&b), "--n", "200", "--seed", "9"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let before = read_manifest(&ma).unwrap();
    std::fs::remove_file(&a).unwrap();
    ok(&["rerun", s(&ma), "--verify"]);
    assert_eq!(read_manifest(&ma).unwrap(), before);

    std::fs::write(&model, "{}").unwrap();
    let o = run(&["rerun", s(&ma), "--verify"]);
    assert!(!o.status.success());
}

#[test]
fn config_file_supplies_flags() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data.csv");
    let cfg = d.path().join("synth.json");
    std::fs::write(&cfg, format!(r#"{{"out": "{}", "n": 5000, "seed": 2}}"#, s(&data))).unwrap();
    let m = read_manifest(&ok(&["synth", "--config", s(&cfg), "--seed", "8"])).unwrap();
    assert_eq!(m.seed, Some(8));
    assert_eq!(std::fs::read_to_string(&data).unwrap().lines().count(), 5001);
}

fn error_of(o: &Output) -> Value {
    serde_json::from_slice(o.stderr.trim_ascii()).expect("error is one JSON object")
}

#[test]
fn failures_exit_nonzero_with_json() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["fit", "--out", s(&d.path().join("m.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_of(&o)["exit_code"], 2);

    let o = run(&["fit", "--data", "/nonexistent/x.csv", "--out", s(&d.path().join("m.json"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(error_of(&o)["message"].as_str().unwrap().contains("/nonexistent/x.csv"));

    let o = run(&["simulate", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    error_of(&o);

    let bad = d.path().join("bad.csv");
    std::fs::write(&bad, "t,hs,ws,theta_h,theta_w\n0,1.0,oops,0,0\n").unwrap();
    let o = run(&["fit", "--data", s(&bad), "--out", s(&d.path().join("m.json"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(error_of(&o)["message"].as_str().unwrap().contains("ws"));

    let o = run(&["fit", "--data", s(&bad), "--out", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));

    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn crossval_reports_every_competitor() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data.csv");
    let out = d.path().join("cv.csv");
    ok(&["synth", "--out", s(&data), "--n", "60000", "--seed", "6"]);
    ok(&[
        "crossval", "--data", s(&data), "--out", s(&out), "--families", "evar,mmem,evar0,hm", "--max-order", "2", "--partitions", "1",
        "--ensemble", "200",
    ]);
    let mut rd = csv::Reader::from_path(&out).unwrap();
    let h = rd.headers().unwrap().clone();
    let col = |n: &str| h.iter().position(|x| x == n).unwrap();
    let (m, r, st) = (col("model"), col("response"), col("statistic"));
    let rows: Vec<csv::StringRecord> = rd.records().map(|x| x.unwrap()).collect();
    let mut groups = std::collections::BTreeMap::<(String, String), Vec<String>>::new();
    for x in &rows {
        groups.entry((x[r].to_string(), x[st].to_string())).or_default().push(x[m].to_string());
    }
    assert_eq!(groups.len(), 4);
    for models in groups.values() {
        assert_eq!(models.len(), 7, "{models:?}");
    }
    assert!(out.with_extension("json").is_file());
}
