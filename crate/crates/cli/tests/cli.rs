use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rtc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtc")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(dir: &Path, extra: &[&str]) -> PathBuf {
    let file = dir.join("scenario.toml");
    let mut args = vec!["generate", "--grid", "builtin:case9", "--out", p(&file)];
    args.extend_from_slice(extra);
    let out = rtc(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    file
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|x| x.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn run_case9_writes_one_row_per_slice_and_microgrid() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = generate(dir.path(), &[]);
    let out = dir.path().join("rtc");
    let res = rtc(&["run", "--scenario", p(&scenario), "--controller", "rtc", "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let (header, rows) = read_csv(&out.join("slices.csv"));
    assert_eq!(rows.len(), 180);
    assert_eq!(&header[..5], ["t", "mg", "bus", "target_kw", "x_market_kw"]);
    let (_, lines) = read_csv(&out.join("lines.csv"));
    assert_eq!(lines.len(), 60 * 9);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["slices"], 60);
    assert_eq!(report["controller"], "rtc");
    assert!(report["max_soc_error_kwh"].as_f64().unwrap() < 1e-6);
}

#[test]
fn naive_has_no_peer_trades() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = generate(dir.path(), &["--archetype", "pv-early"]);
    let out = dir.path().join("naive");
    let res = rtc(&["run", "--scenario", p(&scenario), "--controller", "naive", "--out", p(&out)]);
    let code = res.status.code().unwrap();
    assert!(code == 0 || code == 2);
    let (header, rows) = read_csv(&out.join("slices.csv"));
    let k = column(&header, "p2p_net_kw");
    assert!(rows.iter().all(|r| r[k].parse::<f64>().unwrap() == 0.0));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(code == 2, report["violations"].as_u64().unwrap() > 0);
}

#[test]
fn runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = generate(dir.path(), &["--seed", "4", "--archetype", "pv-late"]);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        rtc(&["run", "--scenario", p(&scenario), "--out", p(out)]);
    }
    for f in ["slices.csv", "lines.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn offline_is_refused_above_the_cap() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("nw.toml");
    let res = rtc(&["generate", "--grid", "builtin:caseNW", "--slice-seconds", "1", "--out", p(&file)]);
    assert!(res.status.success());
    let res = rtc(&["run", "--scenario", p(&file), "--controller", "offline", "--out", p(&dir.path().join("o"))]);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("48600") && err.contains("cap"), "{err}");
}

#[test]
fn compare_marks_offline_unavailable_when_capped() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = generate(dir.path(), &[]);
    let out = dir.path().join("cmp");
    let res = rtc(&["compare", "--scenario", p(&scenario), "--out", p(&out), "--offline-cap", "10"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let (header, rows) = read_csv(&out.join("comparison.csv"));
    assert_eq!(rows.len(), 3);
    let avail = column(&header, "available");
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["rtc", "naive", "offline"]);
    assert_eq!(rows[2][avail], "false");
    assert!(rows[2][column(&header, "note")].contains("cap"));
    assert_eq!(rows[0][avail], "true");
    assert!(!rows[0][column(&header, "median_us")].is_empty());
}

#[test]
fn compare_flags_the_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = generate(dir.path(), &[]);
    let out = dir.path().join("cmp");
    let res = rtc(&["compare", "--scenario", p(&scenario), "--out", p(&out)]);
    assert!(res.status.success());
    let table: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(table["ordering_holds"], true);
    let (header, rows) = read_csv(&out.join("market.csv"));
    assert_eq!(header, ["t", "mg", "plan_kw", "rtc_kw", "naive_kw", "offline_kw"]);
    assert_eq!(rows.len(), 180);
    let (_, timing) = read_csv(&out.join("runtime.csv"));
    assert_eq!(timing.len(), 180);
}

#[test]
fn ptdf_table_shapes() {
    let res = rtc(&["ptdf", "--grid", "builtin:case9"]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    // 9 lines × 36 bus pairs
    assert_eq!(text.lines().count(), 1 + 9 * 36);

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("isf.csv");
    let res = rtc(&["ptdf", "--grid", "builtin:caseNW", "--shift-factors", "--out", p(&file)]);
    assert!(res.status.success());
    let (header, rows) = read_csv(&file);
    assert_eq!(header.len(), 3 + 124);
    assert_eq!(rows.len(), 123);
    for row in &rows {
        for v in &row[3..] {
            let v: f64 = v.parse().unwrap();
            assert!(v.abs() < 1e-9 || (v.abs() - 1.0).abs() < 1e-9, "{v}");
        }
    }
}

#[test]
fn powerflow_from_injection_file() {
    let res = rtc(&["powerflow", "--grid", "builtin:case9"]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    for line in text.lines().skip(1) {
        assert_eq!(line.split(',').nth(3).unwrap().parse::<f64>().unwrap(), 0.0);
    }

    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("two.case");
    fs::write(&case, "baseMVA 1\nbus\n1 3 0\n2 1 5\nbranch\n1 2 0.1 8\n").unwrap();
    let inj = dir.path().join("inj.csv");
    fs::write(&inj, "bus,injection_kw\n2,-10\n").unwrap();
    let res = rtc(&["powerflow", "--grid", p(&case), "--injections", p(&inj)]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..3], ["0", "1", "2"]);
    assert!((row[3].parse::<f64>().unwrap() - 10.0).abs() < 1e-9);
    assert!((row[5].parse::<f64>().unwrap() - 1.25).abs() < 1e-9);
}

#[test]
fn convert_matpower_case() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("tiny.m");
    fs::write(
        &m,
        "function mpc = tiny\nmpc.baseMVA = 100;\nmpc.bus = [\n\t1\t3\t0\t0;\n\t2\t1\t40\t0;\n];\n\
         mpc.branch = [\n\t1\t2\t0.01\t0.1\t0\t120;\n];\n",
    )
    .unwrap();
    let out = dir.path().join("tiny.case");
    let res = rtc(&["convert", "--matpower", p(&m), "--out", p(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let res = rtc(&["powerflow", "--grid", p(&out)]);
    assert!(res.status.success());
}

#[test]
fn generated_scenario_with_grid_file() {
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("grid.case");
    fs::write(&case, "baseMVA 1\nbus\n1 3 0\n2 1 50\n3 1 40\nbranch\n1 2 0.1 inf\n2 3 0.1 inf\n").unwrap();
    let sub = dir.path().join("sub");
    fs::create_dir(&sub).unwrap();
    let file = sub.join("s.toml");
    let res = rtc(&["generate", "--grid", p(&case), "--out", p(&file), "--slice-seconds", "60"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let res = rtc(&["run", "--scenario", p(&file), "--out", p(&dir.path().join("o"))]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let (_, rows) = read_csv(&dir.path().join("o").join("slices.csv"));
    assert_eq!(rows.len(), 15 * 2);
}

#[test]
fn errors_exit_with_one() {
    assert_eq!(rtc(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(rtc(&["run", "--scenario", "/nonexistent.toml"]).status.code(), Some(1));
    assert_eq!(rtc(&["ptdf", "--grid", "builtin:nope"]).status.code(), Some(1));
    assert_eq!(rtc(&["--help"]).status.code(), Some(0));
}
