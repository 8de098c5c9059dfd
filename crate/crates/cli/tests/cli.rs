use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bobnet::volume::{load_boxes, write_boxes, write_volume, BBox3D, Volume3D};

fn bobnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bobnet"))
        .args(args)
        .output()
        .expect("run bobnet")
}

fn ok(args: &[&str]) -> String {
    let out = bobnet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    bobnet(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_CONFIG: &str = "epochs = 1\nchannel_scale = 1/8\nmin_input = 64\ntarget_spacing_mm = 1.0\nseed = 4\n";

fn tiny_dataset(dir: &Path) {
    ok(&["gen-synth", "--out", s(dir), "--count", "10", "--seed", "3", "--dims", "24,24,16"]);
}

#[test]
fn gen_synth_layout_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    tiny_dataset(a.path());
    tiny_dataset(b.path());
    let split = fs::read_to_string(a.path().join("split.txt")).unwrap();
    assert_eq!(split.lines().count(), 10);
    for i in 0..10 {
        let case = a.path().join(format!("case{i:03}"));
        for f in ["volume.mhd", "volume.raw", "boxes.txt"] {
            assert_eq!(
                fs::read(case.join(f)).unwrap(),
                fs::read(b.path().join(format!("case{i:03}")).join(f)).unwrap()
            );
        }
    }
    assert_eq!(split, fs::read_to_string(b.path().join("split.txt")).unwrap());

    let c = tempfile::tempdir().unwrap();
    assert_eq!(code(&["gen-synth", "--out", s(c.path()), "--count", "5", "--seed", "1"]), 1);
    assert_eq!(
        code(&["gen-synth", "--out", s(c.path()), "--count", "10", "--seed", "1", "--structures", "liver"]),
        1
    );
    assert_eq!(code(&["gen-synth", "--count", "10"]), 1);
}

#[test]
fn train_localize_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    tiny_dataset(&data);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, TINY_CONFIG).unwrap();
    let model = dir.path().join("m.bbn");
    let log = dir.path().join("train.log");
    let stdout = ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&model), "--log", s(&log)]);
    assert!(stdout.contains("epoch   1"), "{stdout}");
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 1);

    let again = dir.path().join("m2.bbn");
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&again)]);
    assert_eq!(fs::read(&model).unwrap(), fs::read(&again).unwrap());

    let vol = data.join("case000").join("volume.mhd");
    let boxes = dir.path().join("boxes.txt");
    let profiles = dir.path().join("p.csv");
    let timing = ok(&[
        "localize", "--model", s(&model), "--volume", s(&vol), "--out", s(&boxes), "--profiles", s(&profiles), "--time",
    ]);
    assert!(timing.contains("ms per slice") && timing.contains("s total"), "{timing}");
    load_boxes(&boxes).unwrap();
    let text = fs::read_to_string(&boxes).unwrap();
    let listed = text.lines().filter(|l| l.starts_with("heart") || l.starts_with("# heart not found")).count();
    assert_eq!(listed, 1, "{text}");
    let rows = fs::read_to_string(&profiles).unwrap().lines().count() - 1;
    assert_eq!(rows, 2 * (24 + 24 + 16));

    let boxes3 = dir.path().join("boxes3.txt");
    let profiles3 = dir.path().join("p3.csv");
    ok(&[
        "localize", "--model", s(&model), "--volume", s(&vol), "--out", s(&boxes3), "--profiles", s(&profiles3),
        "--workers", "3",
    ]);
    assert_eq!(fs::read(&boxes).unwrap(), fs::read(&boxes3).unwrap());
    assert_eq!(fs::read(&profiles).unwrap(), fs::read(&profiles3).unwrap());

    let missing = dir.path().join("nope.bbn");
    assert_eq!(code(&["localize", "--model", s(&missing), "--volume", s(&vol), "--out", s(&boxes)]), 2);
    fs::write(&missing, b"garbage").unwrap();
    assert_eq!(code(&["localize", "--model", s(&missing), "--volume", s(&vol), "--out", s(&boxes)]), 2);
}

#[test]
fn train_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    tiny_dataset(&data);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "epochs = 1\nlearning_rate = 0.1\n").unwrap();
    let model = dir.path().join("m.bbn");
    assert_eq!(code(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&model)]), 2);

    fs::write(&cfg, TINY_CONFIG).unwrap();
    fs::remove_file(data.join("case004").join("boxes.txt")).unwrap();
    let out = bobnet(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&model)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("case004"));
}

#[test]
fn evaluate_reports() {
    let dir = tempfile::tempdir().unwrap();
    let vol = dir.path().join("v.mhd");
    write_volume(&Volume3D::filled([30, 10, 10], [1.5, 1.5, 2.0], 0.0).unwrap(), &vol).unwrap();
    let pred = dir.path().join("pred.txt");
    let reference = dir.path().join("ref.txt");
    let b = |n: &str, lo: usize, hi: usize| BBox3D::new(n, [lo, 2, 2], [hi, 6, 6], [1.0; 3]).unwrap();
    write_boxes(&pred, &[b("heart", 10, 20)]).unwrap();
    write_boxes(&reference, &[b("heart", 12, 18), b("aorta", 1, 3)]).unwrap();
    let csv = dir.path().join("agg.csv");
    let out = ok(&["evaluate", "--pred", s(&pred), "--ref", s(&reference), "--volume", s(&vol), "--csv", s(&csv)]);
    let heart = out.lines().find(|l| l.starts_with("heart ")).unwrap();
    let fields: Vec<&str> = heart.split_whitespace().collect();
    assert_eq!(&fields[1..3], &["3.00", "3.00"], "{out}");
    assert!(out.lines().any(|l| l.starts_with("aorta") && l.contains("FAILED")), "{out}");
    let csv = fs::read_to_string(&csv).unwrap();
    assert!(csv.starts_with("structure,wall_mean_mm,wall_std_mm,centroid_mean_mm,centroid_std_mm\nheart,1.000000,"));

    let out = ok(&["evaluate", "--pred", s(&reference), "--ref", s(&reference), "--volume", s(&vol)]);
    for line in out.lines().skip(1).take(2) {
        assert!(line.split_whitespace().skip(1).all(|f| f == "0.00"), "{out}");
    }
}

fn profile_csv(rows: impl Iterator<Item = (usize, f64)>) -> String {
    let mut out = String::from("plane,slice_index,structure,probability\n");
    for (i, p) in rows {
        out += &format!("axial,{i},heart,{p:.6}\n");
    }
    out
}

#[test]
fn compare_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.csv");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&labels, profile_csv((0..20).map(|i| (i, 1.0)))).unwrap();
    fs::write(&a, profile_csv((0..20).map(|i| (i, if (10..12).contains(&i) { 0.1 } else { 0.9 })))).unwrap();
    fs::write(&b, profile_csv((0..20).map(|i| (i, if i < 10 { 0.2 } else { 0.8 })))).unwrap();
    let out = ok(&["compare", "--a", s(&a), "--b", s(&b), "--labels", s(&labels)]);
    assert!(out.contains("b = 10\nc = 2\nstatistic = 4.0833\np = 0.0433"), "{out}");
    let out = ok(&["compare", "--a", s(&a), "--b", s(&a), "--labels", s(&labels)]);
    assert!(out.contains("p = 1.0000"), "{out}");

    fs::write(&b, profile_csv((0..19).map(|i| (i, 0.5)))).unwrap();
    let out = bobnet(&["compare", "--a", s(&a), "--b", s(&b), "--labels", s(&labels)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("axial,19,heart"));

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, profile_csv(std::iter::empty())).unwrap();
    assert_eq!(code(&["compare", "--a", s(&empty), "--b", s(&empty), "--labels", s(&empty)]), 1);
}

#[test]
fn labels_profile_counts() {
    let dir = tempfile::tempdir().unwrap();
    let vol = dir.path().join("v.mhd");
    write_volume(&Volume3D::filled([5, 6, 7], [1.0; 3], 0.0).unwrap(), &vol).unwrap();
    let boxes = dir.path().join("b.txt");
    write_boxes(&boxes, &[BBox3D::new("heart", [1, 1, 1], [2, 3, 4], [1.0; 3]).unwrap()]).unwrap();
    let out = dir.path().join("l.csv");
    ok(&["labels", "--volume", s(&vol), "--boxes", s(&boxes), "--out", s(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + 5 + 6 + 7);
    assert_eq!(text.lines().filter(|l| l.ends_with("1.000000")).count(), 2 + 3 + 4);
}
