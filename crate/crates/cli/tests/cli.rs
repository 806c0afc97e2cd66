use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use crowdmap::annotations::annotations_to_string;
use crowdmap::formats::{decode_dmap, encode_pgm, GrayImage};
use crowdmap::msnn::{decode_checkpoint, encode_checkpoint, preset, Msnn};
use crowdmap::{ImageAnnotation, Point2D};
use serde_json::Value;

fn crowdmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdmap"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = crowdmap(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// One square image with a few heads; returns the annotation path.
fn fixture(dir: &Path, side: usize) -> std::path::PathBuf {
    let heads = vec![
        Point2D::new(10.0, 12.0),
        Point2D::new(side as f64 / 2.0, 30.0),
        Point2D::new(side as f64 - 5.0, 7.5),
    ];
    let ann = ImageAnnotation::new("scene.pgm", (side, side), heads).unwrap();
    fs::write(dir.join("scene.pgm"), encode_pgm(&GrayImage::filled(side, side, 90))).unwrap();
    let path = dir.join("ann.json");
    fs::write(&path, annotations_to_string(&[ann])).unwrap();
    path
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn face_method_requires_detections() {
    let dir = tempfile::tempdir().unwrap();
    let ann = fixture(dir.path(), 64);
    let out = crowdmap(&[
        "gen-gt",
        "--method",
        "face",
        "--annotations",
        s(&ann),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = crowdmap(&[
        "gen-gt",
        "--method",
        "blur",
        "--annotations",
        s(&ann),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let det = dir.path().join("det.json");
    fs::write(&det, "[]").unwrap();
    let out = crowdmap(&[
        "gen-gt",
        "--method",
        "fixed",
        "--detections",
        s(&det),
        "--annotations",
        s(&ann),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert!(!out.status.success());
}

#[test]
fn fixed_maps_conserve_counts_and_record_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let ann = fixture(dir.path(), 64);
    let out = dir.path().join("fixed");
    ok(&[
        "gen-gt",
        "--method",
        "fixed",
        "--annotations",
        s(&ann),
        "--out",
        s(&out),
    ]);
    let map = decode_dmap(&fs::read(out.join("scene.pgm.dmap")).unwrap()).unwrap();
    assert!((map.count() - 3.0).abs() < 1e-5);
    let m = manifest(&out);
    assert_eq!(m["command"], "gen-gt");
    assert_eq!(m["provenance"]["sigma"], "paper");
    assert_eq!(m["provenance"]["method"], "user");

    let knn = dir.path().join("knn");
    ok(&[
        "gen-gt",
        "--method",
        "knn",
        "--k",
        "3",
        "--beta",
        "0.3",
        "--annotations",
        s(&ann),
        "--out",
        s(&knn),
    ]);
    let m = manifest(&knn);
    assert_eq!(m["config"]["k"], 3);
    assert_eq!(m["config"]["beta"], 0.3);
    assert_eq!(m["provenance"]["k"], "user");
    assert_eq!(m["provenance"]["min_sigma"], "artifact-default");
}

#[test]
fn empty_detections_reproduce_fixed_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let ann = fixture(dir.path(), 64);
    let det = dir.path().join("det.json");
    fs::write(&det, r#"[{"image": "scene.pgm", "boxes": []}]"#).unwrap();
    let (face, fixed) = (dir.path().join("face"), dir.path().join("fixed"));
    ok(&[
        "gen-gt",
        "--method",
        "face",
        "--crowded-sigma",
        "3",
        "--detections",
        s(&det),
        "--annotations",
        s(&ann),
        "--out",
        s(&face),
    ]);
    ok(&[
        "gen-gt",
        "--method",
        "fixed",
        "--sigma",
        "3",
        "--annotations",
        s(&ann),
        "--out",
        s(&fixed),
    ]);
    assert_eq!(
        fs::read(face.join("scene.pgm.dmap")).unwrap(),
        fs::read(fixed.join("scene.pgm.dmap")).unwrap()
    );
    let boxes: Value = serde_json::from_str(&fs::read_to_string(face.join("boxes.json")).unwrap()).unwrap();
    assert!(boxes[0]["boxes"]
        .as_array()
        .unwrap()
        .iter()
        .all(|b| b["crowded"] == true));
}

fn patch_count(dir: &Path, side: usize, extra: &[&str]) -> usize {
    let ann = fixture(dir, side);
    let maps = dir.join("maps");
    ok(&[
        "gen-gt",
        "--method",
        "fixed",
        "--annotations",
        s(&ann),
        "--out",
        s(&maps),
    ]);
    let out = dir.join("aug");
    let mut args = vec![
        "augment",
        "--annotations",
        s(&ann),
        "--maps",
        s(&maps),
        "--out",
        s(&out),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    let m = manifest(&out);
    assert_eq!(
        m["provenance"]["window"],
        if extra.is_empty() { "paper" } else { "user" }
    );
    fs::read_dir(out.join("images")).unwrap().count()
}

#[test]
fn augment_patch_counts() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(patch_count(dir.path(), 396, &[]), 9);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(patch_count(dir.path(), 512, &["--window", "256", "--stride", "256"]), 4);
}

#[test]
fn augment_lists_unreadable_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let ann = fixture(dir.path(), 64);
    fs::remove_file(dir.path().join("scene.pgm")).unwrap();
    let empty = dir.path().join("nomaps");
    fs::create_dir(&empty).unwrap();
    let out = crowdmap(&[
        "augment",
        "--annotations",
        s(&ann),
        "--maps",
        s(&empty),
        "--out",
        s(&dir.path().join("a")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("scene.pgm") && err.contains("scene.pgm.dmap"), "{err}");
}

fn train_once(dir: &Path, name: &str, lr: &str) -> Vec<u8> {
    let ann = dir.join("ann.json");
    let out = dir.join(name);
    ok(&[
        "train",
        "--annotations",
        s(&ann),
        "--maps",
        s(&dir.join("maps")),
        "--streams",
        "2",
        "--shrink",
        "4",
        "--epochs",
        "1",
        "--seed",
        "7",
        "--lr",
        lr,
        "--out",
        s(&out),
    ]);
    fs::read(out.join("model.msnw")).unwrap()
}

#[test]
fn training_is_deterministic_and_zero_lr_keeps_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let ann = fixture(dir.path(), 32);
    ok(&[
        "gen-gt",
        "--method",
        "fixed",
        "--annotations",
        s(&ann),
        "--out",
        s(&dir.path().join("maps")),
    ]);
    let a = train_once(dir.path(), "a", "1e-3");
    let b = train_once(dir.path(), "b", "1e-3");
    assert_eq!(a, b);
    let init = Msnn::random(&preset(2).unwrap().shrink(4), 0.01, 7).unwrap();
    assert_eq!(train_once(dir.path(), "zero", "0"), encode_checkpoint(&init));
    assert_ne!(
        decode_checkpoint(&a).unwrap().params()[0].data(),
        init.params()[0].data()
    );
    let log = fs::read_to_string(dir.path().join("a/loss.csv")).unwrap();
    assert!(log.starts_with("epoch,mean_loss,train_mae,steps\n0,"));
}

#[test]
fn eval_reports_oracle_and_missing_images() {
    let dir = tempfile::tempdir().unwrap();
    let ann = fixture(dir.path(), 64);
    let maps = dir.path().join("maps");
    ok(&[
        "gen-gt",
        "--method",
        "fixed",
        "--annotations",
        s(&ann),
        "--out",
        s(&maps),
    ]);
    let out = dir.path().join("eval");
    ok(&[
        "eval",
        "--annotations",
        s(&ann),
        "--oracle-maps",
        s(&maps),
        "--out",
        s(&out),
    ]);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "image_id,y_true,y_pred,abs_err");
    let mae: f64 = lines[2].strip_prefix("MAE,").unwrap().parse().unwrap();
    assert!(mae < 1e-5);

    let mut two = fs::read_to_string(&ann).unwrap();
    two = two.replacen('[', r#"[{"image": "gone.pgm", "shape": [8, 8], "heads": [[1, 1]]},"#, 1);
    let ann2 = dir.path().join("ann2.json");
    fs::write(&ann2, two).unwrap();
    let ck = dir.path().join("ck.msnw");
    fs::write(
        &ck,
        encode_checkpoint(&Msnn::zeros(&preset(1).unwrap().shrink(8)).unwrap()),
    )
    .unwrap();
    ok(&[
        "eval",
        "--annotations",
        s(&ann2),
        "--checkpoint",
        s(&ck),
        "--out",
        s(&out),
    ]);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.contains("\ngone.pgm,1,,\n"), "{report}");
    assert!(report.contains("\nMAE,3\n"), "{report}");
}

#[test]
fn render_zero_map_is_black() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("ann.json");
    fs::write(&ann, r#"[{"image": "empty", "shape": [6, 5], "heads": []}]"#).unwrap();
    let maps = dir.path().join("maps");
    ok(&[
        "gen-gt",
        "--method",
        "fixed",
        "--annotations",
        s(&ann),
        "--out",
        s(&maps),
    ]);
    let out = dir.path().join("png");
    ok(&["render", s(&maps.join("empty.dmap")), "--out", s(&out)]);
    let pgm = fs::read(out.join("empty.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n5 6\n255\n"));
    assert!(pgm[pgm.len() - 30..].iter().all(|&b| b == 0));
}

#[test]
fn gradcheck_passes_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc");
    let stdout = String::from_utf8(ok(&["gradcheck", "--out", s(&out)]).stdout).unwrap();
    assert!(stdout.contains("passed"));
    let replay = String::from_utf8(
        ok(&[
            "replay",
            s(&out.join("manifest.json")),
            "--out",
            s(&dir.path().join("r")),
        ])
        .stdout,
    )
    .unwrap();
    assert!(replay.contains("1 outputs identical"));
}
