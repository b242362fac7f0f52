use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hybridseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybridseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hybridseg(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            files.extend(snapshot(&path));
        } else {
            files.push((path.display().to_string(), fs::read(&path).unwrap()));
        }
    }
    files.sort();
    files
}

const SMALL_CONFIG: &str = r#"{
  "network": { "scales": [[2, 8], [4, 16]] },
  "train": { "iterations": 4, "warmup": 1, "batch_size": 2 },
  "data": { "synth": { "width": 32, "height": 32 }, "train_samples": 4, "test_samples": 2 }
}"#;

#[test]
fn generate_train_evaluate_profile() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let config = dir.path().join("config.json");
    fs::write(&config, SMALL_CONFIG).unwrap();
    let out = ok(&["gen-synthetic", "--seed", "3", "--out-dir", p(&data), "--width", "32", "--height", "32", "--samples", "3"]);
    assert!(out.contains("wrote 3 samples"));
    let before = snapshot(&data);

    let ckpt = dir.path().join("model.hess");
    let log = dir.path().join("loss.csv");
    ok(&["train", "--config", p(&config), "--data", p(&data), "--out", p(&ckpt), "--loss-log", p(&log)]);
    assert_eq!(&fs::read(&ckpt).unwrap()[..4], b"HESS");
    let rows: Vec<String> = fs::read_to_string(&log).unwrap().lines().map(String::from).collect();
    assert_eq!(rows[0], "iteration,loss");
    assert_eq!(rows.len(), 5);

    let report = dir.path().join("eval.json");
    let images = dir.path().join("images");
    let out = ok(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--report", p(&report), "--emit-images", p(&images), "--energy"]);
    assert!(out.contains("mIoU") && out.contains("E_Total"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let miou = json["miou"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&miou));
    assert!(json["energy"]["e_total_mj"].as_f64().unwrap() > 0.0);
    assert!(images.join("pred_0002.pgm").exists());

    let prof = dir.path().join("profile.json");
    let out = ok(&["profile", "--ckpt", p(&ckpt), "--data", p(&data), "--report", p(&prof)]);
    assert!(out.contains("GFLOPs_ANN"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&prof).unwrap()).unwrap();
    assert!(json["gflops_snn"].as_f64().unwrap() >= 0.0);

    assert_eq!(snapshot(&data), before, "commands modified their inputs");
}

#[test]
fn generation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["gen-synthetic", "--seed", "9", "--out-dir", p(d), "--width", "16", "--height", "16", "--samples", "2"]);
    }
    let strip = |s: Vec<(String, Vec<u8>)>, root: &Path| -> Vec<(String, Vec<u8>)> {
        let prefix = root.display().to_string();
        s.into_iter().map(|(n, b)| (n.replacen(&prefix, "", 1), b)).collect()
    };
    assert_eq!(strip(snapshot(&a), &a), strip(snapshot(&b), &b));
}

#[test]
fn voxelize_writes_a_grid() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("events.csv");
    fs::write(&csv, "x,y,t,p\n0,0,0,1\n1,0,50,-1\n1,1,100,1\n").unwrap();
    let out_path = dir.path().join("grid.vox");
    let out = ok(&["voxelize", "--events", p(&csv), "--bins", "3", "--out", p(&out_path)]);
    assert!(out.contains("3 events"), "{out}");
    assert!(fs::metadata(&out_path).unwrap().len() > 0);

    let data = dir.path().join("data");
    ok(&["gen-synthetic", "--out-dir", p(&data), "--width", "16", "--height", "16", "--samples", "1"]);
    let evt = data.join("sample_0000/events.evt1");
    let before = fs::read(&evt).unwrap();
    ok(&["voxelize", "--events", p(&evt), "--bins", "5", "--out", p(&out_path)]);
    assert_eq!(fs::read(&evt).unwrap(), before);
}

#[test]
fn gradcheck_reports_each_module() {
    let out = ok(&["gradcheck", "--module", "lif"]);
    assert!(out.contains("lif") && out.contains("pass"), "{out}");
    let out = ok(&["gradcheck", "--module", "csf", "--seed", "2"]);
    assert!(out.contains("csf") && out.contains("pass"), "{out}");
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let cases: Vec<Vec<String>> = vec![
        vec!["eval".into(), "--ckpt".into(), p(&missing).into(), "--data".into(), p(&missing).into()],
        vec!["voxelize".into(), "--events".into(), p(&missing).into(), "--bins".into(), "3".into(), "--out".into(), p(&dir.path().join("v")).into()],
        vec!["train".into(), "--data".into(), p(&missing).into(), "--out".into(), p(&dir.path().join("m")).into()],
    ];
    for args in cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = hybridseg(&args);
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"), "{args:?}");
    }

    let bad = dir.path().join("bad.evt1");
    fs::write(&bad, b"EVT1 garbage").unwrap();
    let out = hybridseg(&["voxelize", "--events", p(&bad), "--bins", "2", "--out", p(&dir.path().join("v"))]);
    assert!(!out.status.success());

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "x,y,t,p\n").unwrap();
    let out = hybridseg(&["voxelize", "--events", p(&empty), "--bins", "2", "--out", p(&dir.path().join("v"))]);
    assert!(!out.status.success());

    assert!(!hybridseg(&["gradcheck", "--module", "bogus"]).status.success());
}
