use std::path::Path;
use std::process::{Command, Output};

fn qdcascade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdcascade"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

const RABI: &str = r#"
experiment = "rabi_sweep"
seed = 5

[rabi]
points = 21
"#;

#[test]
fn rabi_run_succeeds_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("rabi.toml");
    std::fs::write(&cfg, RABI).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = qdcascade(&["run", "--config", arg(&cfg), "--out", arg(out), "--check", "--threads", "2"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut data = 0;
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "summary.json" {
            continue;
        }
        let left = std::fs::read(a.join(&name)).unwrap();
        let right = std::fs::read(b.join(&name)).unwrap();
        assert_eq!(left, right, "{name:?} differs between runs");
        data += 1;
    }
    assert!(data >= 2);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 5);
    assert_eq!(summary["passed"], true);
}

#[test]
fn json_format_writes_json_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdcascade(&["simulate", "circular", "--seed", "3", "--format", "json", "--out", arg(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let json: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json") && !p.ends_with("summary.json"))
        .collect();
    assert!(!json.is_empty());
    for p in json {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert!(v["columns"].is_array() && v["rows"].is_array(), "{}", p.display());
    }
}

#[test]
fn configuration_problems_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(qdcascade(&["simulate", "rabi", "--out", arg(&out)]).status.code(), Some(2));
    assert_eq!(qdcascade(&["run", "--seed", "1", "--out", arg(&out)]).status.code(), Some(2));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, format!("{RABI}\n[qd]\nexciton_lifetime_nanoseconds = 1.0\n")).unwrap();
    let o = qdcascade(&["run", "--config", arg(&cfg), "--out", arg(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exciton_lifetime_nanoseconds"));

    std::fs::write(&cfg, "experiment = \"rabi_sweep\"\n").unwrap();
    assert_eq!(qdcascade(&["run", "--config", arg(&cfg), "--out", arg(&out)]).status.code(), Some(2));

    std::fs::write(&cfg, format!("{RABI}\n[qd]\nexciton_lifetime_ns = -1.0\n")).unwrap();
    assert_eq!(qdcascade(&["run", "--config", arg(&cfg), "--out", arg(&out)]).status.code(), Some(2));
}

#[test]
fn missed_target_exits_4_only_with_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ideal.toml");
    std::fs::write(&cfg, format!("{RABI}\n[phonon]\ncoupling = 0.0\ndrive_dephasing_ps = 0.0\n")).unwrap();
    let out = dir.path().join("out");
    let plain = qdcascade(&["run", "--config", arg(&cfg), "--out", arg(&out)]);
    assert_eq!(plain.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&plain.stdout).contains("FAIL"));
    let checked = qdcascade(&["run", "--config", arg(&cfg), "--out", arg(&out), "--check"]);
    assert_eq!(checked.status.code(), Some(4));
}

#[test]
fn analyze_counts_table() {
    let dir = tempfile::tempdir().unwrap();
    let counts = dir.path().join("counts.csv");
    let rows = [
        ("HH", 1710),
        ("HV", 573),
        ("VV", 1811),
        ("VH", 453),
        ("DD", 1750),
        ("DA", 696),
        ("AA", 1739),
        ("AD", 787),
        ("RR", 622),
        ("RL", 1761),
        ("LL", 740),
        ("LR", 1698),
    ];
    let mut text = String::from("setting,count,duration_s\n");
    for (s, c) in rows {
        text += &format!("{s},{c},600\n");
    }
    std::fs::write(&counts, text).unwrap();
    let out = dir.path().join("out");
    let o = qdcascade(&["analyze", "tomography", "--counts", arg(&counts), "--out", arg(&out), "--check"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("tomography_report.json")).unwrap()).unwrap();
    let f = report["fidelity"]["value"].as_f64().unwrap();
    assert!((f - 0.586).abs() < 0.004, "f = {f}");

    std::fs::write(&counts, "setting,count,duration_s\nHH,10,1\n").unwrap();
    let o = qdcascade(&["analyze", "tomography", "--counts", arg(&counts), "--out", arg(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tags_convert_and_correlate() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("tags.csv");
    let mut text = String::from("channel,time_ps\n");
    for k in 0..2000u64 {
        text += &format!("1,{}\n", k * 12_500);
        text += &format!("2,{}\n", k * 12_500 + 400);
    }
    std::fs::write(&csv, &text).unwrap();
    let bin = dir.path().join("tags.qtt");
    let back = dir.path().join("back.csv");
    assert_eq!(qdcascade(&["convert-tags", arg(&csv), arg(&bin)]).status.code(), Some(0));
    assert_eq!(qdcascade(&["convert-tags", arg(&bin), arg(&back)]).status.code(), Some(0));
    let again = dir.path().join("again.qtt");
    assert_eq!(qdcascade(&["convert-tags", arg(&back), arg(&again)]).status.code(), Some(0));
    assert_eq!(std::fs::read(&bin).unwrap(), std::fs::read(&again).unwrap());

    let out = dir.path().join("out");
    let o = qdcascade(&["correlate", "--tags", arg(&bin), "--start", "1", "--stop", "2", "--out", arg(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let hist = out.join("histogram_1_2.csv");
    assert!(std::fs::read_to_string(&hist).unwrap().starts_with('#'));
    let o = qdcascade(&["analyze", "g2", "--histogram", arg(&hist), "--out", arg(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let g2 = summary["headlines"][0]["value"].as_f64().unwrap();
    assert!((g2 - 1.0).abs() < 0.01, "periodic comb g2 = {g2}");
}
