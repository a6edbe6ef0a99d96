use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use crowdmot_core::metrics::{evaluate_video, CurveConfig};
use crowdmot_core::sim::{synthetic_video, SyntheticSpec};
use crowdmot_core::store::{export_mot_csv, load_annotations, save_annotations, SchemaMode};

fn crowdmot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdmot")).current_dir(dir).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn setup(dir: &Path, frames: u32) {
    let gt = synthetic_video(&SyntheticSpec { video_id: "cells".into(), frame_count: frames, objects: 4, splits: 1, seed: 11 });
    let export = export_mot_csv(&gt);
    fs::write(dir.join("gt.csv"), export.csv).unwrap();
    fs::write(dir.join("gt.lineage.csv"), export.lineage.unwrap()).unwrap();
    let meta = serde_json::json!({
        "id": "cells", "url": "https://example.org/cells.mp4", "frame_count": frames, "fps": 30.0,
        "width": 1920, "height": 1080
    });
    fs::write(dir.join("meta.json"), meta.to_string()).unwrap();
    fs::write(dir.join("model.json"), r#"{"center_jitter_px": 2.0, "keyframe_stride": 15, "omission_prob": 0.2}"#).unwrap();
}

#[test]
fn singseg_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir, 1000);
    let out = ok(&crowdmot(dir, &["ingest", "--video", "meta.json", "--gt", "gt.csv"]));
    assert!(out.contains("6 ground-truth tracks"), "{out}");
    let gt = load_annotations(&fs::read_to_string(dir.join("gt/cells.json")).unwrap(), SchemaMode::Strict).unwrap();
    assert_eq!(gt.tracks.iter().filter(|t| t.split().is_some()).count(), 1);

    ok(&crowdmot(dir, &["tasks", "generate", "--strategy", "singseg", "--redundancy", "3"]));
    assert_eq!(fs::read_dir(dir.join("tasks")).unwrap().count(), 4);

    ok(&crowdmot(dir, &["simulate", "--model", "model.json", "--seed", "7"]));
    let snapshot = |d: &Path| {
        let mut files: Vec<(String, Vec<u8>)> = Vec::new();
        for task in fs::read_dir(d.join("submissions")).unwrap() {
            for f in fs::read_dir(task.unwrap().path()).unwrap() {
                let p = f.unwrap().path();
                files.push((p.display().to_string(), fs::read(&p).unwrap()));
            }
        }
        files.sort();
        files
    };
    let first = snapshot(dir);
    assert_eq!(first.len(), 12);
    ok(&crowdmot(dir, &["simulate", "--model", "model.json", "--seed", "7", "--force"]));
    assert_eq!(snapshot(dir), first);

    let out = ok(&crowdmot(dir, &["workflow", "advance"]));
    assert!(out.starts_with("round 0: 1 accepted"), "{out}");
    assert!(dir.join("accepted/cells.json").exists());
    assert!(fs::read_to_string(dir.join("reports/rounds.csv")).unwrap().contains("NonIterative-Filtered"));
    assert_eq!(crowdmot(dir, &["workflow", "advance"]).status.code(), Some(1));
}

#[test]
fn eval_identity_layout_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir, 400);
    ok(&crowdmot(dir, &["ingest", "--video", "meta.json", "--gt", "gt.csv"]));
    let gt_path = dir.join("gt/cells.json");
    let gt_arg = gt_path.to_str().unwrap();
    let report_path = dir.join("report.json");
    let curves = dir.join("curves");
    let out = ok(&crowdmot(
        dir,
        &["eval", "--pred", gt_arg, "--gt", gt_arg, "--out", report_path.to_str().unwrap(), "--curves", curves.to_str().unwrap()],
    ));
    assert_eq!(out, "AUC     TrAcc   Precision\n0.990   1.000   1.000\n");

    let gt = load_annotations(&fs::read_to_string(&gt_path).unwrap(), SchemaMode::Strict).unwrap();
    let direct = evaluate_video(&gt, &gt, &CurveConfig::default()).unwrap();
    let expected = serde_json::to_string_pretty(&direct).unwrap() + "\n";
    assert_eq!(fs::read_to_string(&report_path).unwrap(), expected);
    let success = fs::read_to_string(curves.join("success.csv")).unwrap();
    assert_eq!(success.lines().count(), 102);
    assert!(success.starts_with("threshold,value\n0,1\n"));

    // refuses to overwrite without --force
    let again = crowdmot(dir, &["eval", "--pred", gt_arg, "--gt", gt_arg, "--out", report_path.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(1));
    // pred as MOT CSV against native ground truth
    let csv_out = ok(&crowdmot(dir, &["eval", "--pred", dir.join("gt.csv").to_str().unwrap(), "--gt", gt_arg]));
    assert!(csv_out.ends_with("0.990   1.000   1.000\n"), "{csv_out}");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir, 400);
    assert_eq!(crowdmot(dir, &["ingest", "--video", "missing.json"]).status.code(), Some(2));
    fs::write(dir.join("bad.json"), r#"{"id":"x","url":"u","frame_count":0,"fps":30,"width":10,"height":10}"#).unwrap();
    let out = crowdmot(dir, &["ingest", "--video", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
    fs::write(dir.join("typo.json"), r#"{"id":"x","url":"u","frame_count":"many","fps":30,"width":10,"height":10}"#).unwrap();
    let out = crowdmot(dir, &["ingest", "--video", "typo.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("typo.json") && err.contains("frame_count"), "{err}");
    ok(&crowdmot(dir, &["ingest", "--video", "meta.json", "--gt", "gt.csv"]));
    assert_eq!(crowdmot(dir, &["ingest", "--video", "meta.json", "--gt", "gt.csv"]).status.code(), Some(1));
    ok(&crowdmot(dir, &["ingest", "--video", "meta.json", "--gt", "gt.csv", "--force"]));
    assert_eq!(crowdmot(dir, &["workflow", "advance"]).status.code(), Some(2));
}

#[test]
fn merge_command_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let gt = synthetic_video(&SyntheticSpec { video_id: "v".into(), frame_count: 700, objects: 3, splits: 0, seed: 5 });
    let plan = crowdmot_core::merge::plan_segments(700, 320, 20).unwrap();
    let slices = crowdmot_core::merge::slice_by_plan(&gt, &plan);
    let mut args = vec!["merge".to_owned(), "--frame-count".into(), "700".into(), "--out".into(), "merged.json".into()];
    for (i, s) in slices.iter().enumerate() {
        let name = dir.join(format!("seg{i}.json"));
        fs::write(&name, save_annotations(s)).unwrap();
        args.push(name.display().to_string());
    }
    let out = Command::new(env!("CARGO_BIN_EXE_crowdmot")).current_dir(dir).args(&args).output().unwrap();
    ok(&out);
    let merged = crowdmot_core::merge::merge_chain(&slices, &plan, &Default::default()).unwrap();
    assert_eq!(fs::read_to_string(dir.join("merged.json")).unwrap(), save_annotations(&merged) + "\n");
}

#[test]
fn dir_flag_selects_working_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let work = tmp.path().join("work");
    fs::create_dir(&work).unwrap();
    setup(tmp.path(), 400);
    let out = Command::new(env!("CARGO_BIN_EXE_crowdmot"))
        .current_dir(tmp.path())
        .args(["--dir", "work", "ingest", "--video", "meta.json", "--gt", "gt.csv"])
        .output()
        .unwrap();
    ok(&out);
    assert!(work.join("videos/cells.json").exists() && work.join("gt/cells.json").exists());
    assert!(!tmp.path().join("videos").exists());
}
