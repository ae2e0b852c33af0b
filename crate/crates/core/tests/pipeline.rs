mod common;

use std::path::Path;

use common::{manifest, quiet_config, write_scene};
use facade_loc::camera::{CameraRecord, Pose};
use facade_loc::pipeline::report::{parse_summary_csv, row_values, ALL_FORMATS, CURVES_FILE, REPORT_FILE, SUMMARY_FILE};
use facade_loc::pipeline::{
    build_pairs, emit_report, run_evaluation, summary_csv, CameraRef, FaceRef, MatchSource, PairSpec, PipelineError, RunConfig, RunReport,
    VisibilityRule,
};
use facade_loc::synth::{look_at, SceneConfig, GT_MATCHES_FILE};
use facade_loc::{MatchSet, Vec3};

#[test]
fn builtin_frontal_scene() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SceneConfig::default();
    let (_, spec) = write_scene(dir.path(), "frontal", &cfg, None);
    let report = run_evaluation(&manifest(vec![spec]), dir.path(), &quiet_config()).unwrap();
    let r = &report.pairs[0];
    assert!(!r.failure, "{:?}", r.failure_reason);
    assert!(r.num_inliers >= 30);
    assert!(r.rot_err_deg < 0.5);
    assert!(r.trans_err_m < 0.01 * cfg.standoff_m);
}

#[test]
fn builtin_oblique_scene_completes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SceneConfig {
        yaw_deg: 45.0,
        ..Default::default()
    };
    let (_, spec) = write_scene(dir.path(), "oblique", &cfg, None);
    let report = run_evaluation(&manifest(vec![spec]), dir.path(), &quiet_config()).unwrap();
    report.pairs[0].check().unwrap();
}

#[test]
fn gt_match_file_scene() {
    let dir = tempfile::tempdir().unwrap();
    let (_, spec) = write_scene(dir.path(), "gt", &SceneConfig::default(), Some(GT_MATCHES_FILE));
    let report = run_evaluation(&manifest(vec![spec]), dir.path(), &RunConfig::default()).unwrap();
    let r = &report.pairs[0];
    assert!(!r.failure);
    assert!(r.rot_err_deg < 1e-4, "{}", r.rot_err_deg);
    assert!(r.trans_err_m < 1e-4);
    assert_eq!(r.method, "synth-gt");
}

fn write_empty_matches(dir: &Path, scene: &str) -> String {
    let gt = std::fs::read(dir.join(scene).join(GT_MATCHES_FILE)).unwrap();
    let mut ms = facade_loc::features::matchset::load_matchset(&gt).unwrap();
    ms.matches.clear();
    let name = format!("{scene}/empty.matchset.json");
    std::fs::write(dir.join(&name), ms.to_json()).unwrap();
    name
}

#[test]
fn zero_matches_fail_the_pair_not_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut spec) = write_scene(dir.path(), "s", &SceneConfig::default(), None);
    spec.matches = MatchSource::File(write_empty_matches(dir.path(), "s"));
    let report = run_evaluation(&manifest(vec![spec]), dir.path(), &quiet_config()).unwrap();
    let r = &report.pairs[0];
    assert!(r.failure);
    assert_eq!(r.num_matches, 0);
    assert_eq!(r.rot_err_deg, f64::INFINITY);
    assert_eq!(report.summary.rows[0].num_failures, 1);
}

#[test]
fn missing_files_abort_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let (_, good) = write_scene(dir.path(), "s", &SceneConfig::default(), Some(GT_MATCHES_FILE));
    let bad = PairSpec {
        pair_id: "bad".into(),
        camera: "s/nowhere.json".into(),
        ..good.clone()
    };
    let err = run_evaluation(&manifest(vec![good, bad]), dir.path(), &quiet_config()).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    match err {
        PipelineError::Validation(msgs) => assert!(msgs.iter().any(|m| m.contains("nowhere.json")), "{msgs:?}"),
        other => panic!("{other}"),
    }
}

#[test]
fn failure_isolation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (_, a) = write_scene(d, "a", &SceneConfig::default(), Some(GT_MATCHES_FILE));
    let (_, b) = write_scene(
        d,
        "b",
        &SceneConfig {
            seed: 9,
            yaw_deg: 20.0,
            ..Default::default()
        },
        Some(GT_MATCHES_FILE),
    );
    let cfg = quiet_config();
    let before = run_evaluation(&manifest(vec![a.clone(), b.clone()]), d, &cfg).unwrap();
    std::fs::write(d.join("b").join(GT_MATCHES_FILE), b"{\"schema\": \"matchset/1\"").unwrap();
    let after = run_evaluation(&manifest(vec![a, b]), d, &cfg).unwrap();
    assert_eq!(before.pairs[0], after.pairs[0]);
    assert!(!before.pairs[1].failure);
    assert!(after.pairs[1].failure);
    assert!(after.pairs[1].failure_reason.as_deref().unwrap().contains("b/"));
}

#[test]
fn reproducible_across_runs_and_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (_, x) = write_scene(d, "x", &SceneConfig::default(), None);
    let (_, y) = write_scene(
        d,
        "y",
        &SceneConfig {
            seed: 4,
            pitch_deg: 8.0,
            ..Default::default()
        },
        None,
    );
    let m = manifest(vec![y, x]);
    let one = RunConfig {
        jobs: Some(1),
        ..quiet_config()
    };
    let four = RunConfig {
        jobs: Some(4),
        ..quiet_config()
    };
    let r1 = run_evaluation(&m, d, &one).unwrap();
    let r2 = run_evaluation(&m, d, &one).unwrap();
    let r4 = run_evaluation(&m, d, &four).unwrap();
    assert_eq!(r1.to_json(), r2.to_json());
    let pairs = |r: &RunReport| serde_json::to_string(&r.pairs).unwrap();
    assert_eq!(pairs(&r1), pairs(&r4));
    assert_eq!(r1.summary, r4.summary);
    assert_eq!(r1.pairs[0].pair_id, "x");
}

#[test]
fn resize_is_neutral_for_exact_match_files() {
    let dir = tempfile::tempdir().unwrap();
    let (_, spec) = write_scene(
        dir.path(),
        "s",
        &SceneConfig {
            yaw_deg: 15.0,
            ..Default::default()
        },
        Some(GT_MATCHES_FILE),
    );
    let m = manifest(vec![spec]);
    let off = run_evaluation(&m, dir.path(), &quiet_config()).unwrap();
    let on = run_evaluation(
        &m,
        dir.path(),
        &RunConfig {
            resize_long_edge: Some(512),
            ..quiet_config()
        },
    )
    .unwrap();
    let (a, b) = (&off.pairs[0], &on.pairs[0]);
    assert!((a.rot_err_deg - b.rot_err_deg).abs() < 1e-9);
    assert!((a.trans_err_m - b.trans_err_m).abs() < 1e-9);
    assert_eq!(a.num_inliers, b.num_inliers);
}

#[test]
fn builtin_matcher_with_resize_reports_original_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let (_, spec) = write_scene(dir.path(), "s", &SceneConfig::default(), None);
    let cfg = RunConfig {
        resize_long_edge: Some(640),
        ..quiet_config()
    };
    let report = run_evaluation(&manifest(vec![spec]), dir.path(), &cfg).unwrap();
    let r = &report.pairs[0];
    assert!(!r.failure, "{:?}", r.failure_reason);
    // Reprojection errors are measured in original pixels; a scale slip
    // would push nearly all of them past 30 px.
    assert!(r.precision_at.get(30.0).unwrap() > 0.5);
    assert!(r.rot_err_deg < 1.0);
}

fn two_method_report(d: &Path) -> RunReport {
    let (_, gt) = write_scene(d, "gt", &SceneConfig::default(), Some(GT_MATCHES_FILE));
    let (_, orb) = write_scene(
        d,
        "orb",
        &SceneConfig {
            seed: 3,
            ..Default::default()
        },
        None,
    );
    run_evaluation(&manifest(vec![gt, orb]), d, &quiet_config()).unwrap()
}

#[test]
fn report_round_trip_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let report = two_method_report(dir.path());

    let back = RunReport::from_json(report.to_json().as_bytes()).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.recompute_summary().unwrap(), report.summary);

    let csv = summary_csv(&report.summary);
    let (header, rows) = parse_summary_csv(&csv).unwrap();
    assert_eq!(header[..4], ["method", "mPrec@3px", "mPrec@30px", "AUC@3deg"]);
    let methods: Vec<&str> = rows.iter().map(|(m, _)| m.as_str()).collect();
    assert_eq!(methods, ["builtin-orb", "synth-gt"]);
    for ((method, parsed), row) in rows.iter().zip(&report.summary.rows) {
        assert_eq!(method, &row.method);
        for (p, v) in parsed.iter().zip(row_values(row)) {
            if v.is_infinite() || v == 0.0 {
                assert_eq!(*p, v);
            } else {
                assert!(((p - v) / v).abs() <= 5e-6, "{method}: {p} vs {v}");
            }
        }
    }
}

#[test]
fn emit_writes_all_formats() {
    let dir = tempfile::tempdir().unwrap();
    let report = two_method_report(dir.path());
    let out = dir.path().join("out");
    let written = emit_report(&report, &out, &ALL_FORMATS).unwrap();
    assert_eq!(written.len(), 3);
    for f in [REPORT_FILE, SUMMARY_FILE, CURVES_FILE] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let svg = std::fs::read_to_string(out.join(CURVES_FILE)).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 4);
    assert!(svg.contains("stroke-dasharray"));
    let leftovers: Vec<_> = std::fs::read_dir(&out).unwrap().filter_map(|e| e.ok()).collect();
    assert_eq!(leftovers.len(), 3);
}

#[test]
fn emit_to_unwritable_path_fails_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let (_, spec) = write_scene(dir.path(), "s", &SceneConfig::default(), Some(GT_MATCHES_FILE));
    let report = run_evaluation(&manifest(vec![spec]), dir.path(), &quiet_config()).unwrap();
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "").unwrap();
    let err = emit_report(&report, &blocker.join("out"), &ALL_FORMATS).unwrap_err();
    assert_eq!(err.exit_code(), 2);

    // Target names occupied by directories: the first rename fails and
    // nothing is published.
    let out = dir.path().join("out");
    std::fs::create_dir_all(out.join(REPORT_FILE)).unwrap();
    assert!(emit_report(&report, &out, &ALL_FORMATS).is_err());
    assert!(!out.join(SUMMARY_FILE).exists());
    assert!(!out.join(CURVES_FILE).exists());
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 1);
}

fn orbit_camera(scene_cam: &CameraRecord, target: &Vec3, angle_deg: f64, look_away: bool) -> CameraRecord {
    let c = scene_cam.gt_pose.center();
    let rel = c - target;
    let a = angle_deg.to_radians();
    let rel = Vec3::new(a.cos() * rel.x - a.sin() * rel.y, a.sin() * rel.x + a.cos() * rel.y, rel.z);
    let eye = target + rel;
    let aim = if look_away { eye + rel } else { *target };
    let r = look_at(&eye, &aim, &Vec3::z()).unwrap();
    CameraRecord {
        image_path: format!("orbit_{angle_deg}.png"),
        gt_pose: Pose::from_center(r, eye),
        ..scene_cam.clone()
    }
}

#[test]
fn build_pairs_from_orbiting_cameras() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (scene, _) = write_scene(d, "s", &SceneConfig::default(), None);
    let target = scene.face.world_ring.iter().sum::<Vec3>() / scene.face.world_ring.len() as f64;
    let face = FaceRef {
        gml: d.join("s/scene.gml"),
        face: scene.face.clone(),
    };

    let synth_cam = CameraRef {
        record_path: d.join("s/camera.json"),
        record: scene.camera.clone(),
    };
    let single = build_pairs(std::slice::from_ref(&face), &[synth_cam], &VisibilityRule::default(), d);
    assert_eq!(single.pairs.len(), 1);
    assert_eq!(single.pairs[0].pair_id, "facade_0__view");
    single.validate(d).unwrap();

    let cams: Vec<CameraRef> = [(0.0, false), (40.0, false), (0.0, true)]
        .iter()
        .enumerate()
        .map(|(i, &(angle, away))| CameraRef {
            record_path: d.join(format!("cam{i}.json")),
            record: orbit_camera(&scene.camera, &target, angle, away),
        })
        .collect();
    let m = build_pairs(&[face], &cams, &VisibilityRule::default(), d);
    let ids: Vec<&str> = m.pairs.iter().map(|p| p.pair_id.as_str()).collect();
    assert_eq!(ids, ["facade_0__orbit_0", "facade_0__orbit_40"]);
    assert_eq!(m.pairs[1].camera, "cam1.json");
    assert_eq!(m.pairs[1].gml, "s/scene.gml");
}

#[test]
fn bridge_sample_fixture_runs() {
    let bytes = std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bridge_sample.matchset.json")).unwrap();
    let ms: MatchSet = facade_loc::features::matchset::load_matchset(&bytes).unwrap();
    let meta = &ms.meta.extra;
    assert_eq!(ms.keypoints0.len() as u64, meta["num_keypoints0"].as_u64().unwrap());
    assert_eq!(ms.keypoints1.len() as u64, meta["num_keypoints1"].as_u64().unwrap());
    assert_eq!(ms.meta.resize_long_edge, Some(1024));

    let dir = tempfile::tempdir().unwrap();
    let (_, mut spec) = write_scene(dir.path(), "s", &SceneConfig::default(), None);
    std::fs::write(dir.path().join("s/bridge.matchset.json"), &bytes).unwrap();
    spec.matches = MatchSource::File("s/bridge.matchset.json".into());
    let report = run_evaluation(&manifest(vec![spec]), dir.path(), &quiet_config()).unwrap();
    let r = &report.pairs[0];
    assert_eq!(r.method, "superpoint+lightglue");
    assert!(r.num_matches >= 1);
    assert!(!r.failure);
}

#[test]
fn invalid_match_file_keeps_its_method_label() {
    let dir = tempfile::tempdir().unwrap();
    let (_, spec) = write_scene(dir.path(), "s", &SceneConfig::default(), Some(GT_MATCHES_FILE));
    let path = dir.path().join("s").join(GT_MATCHES_FILE);
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    v["matches"][0][1] = serde_json::json!(100_000);
    std::fs::write(&path, v.to_string()).unwrap();
    let report = run_evaluation(&manifest(vec![spec]), dir.path(), &quiet_config()).unwrap();
    let r = &report.pairs[0];
    assert!(r.failure);
    assert_eq!(r.method, "synth-gt");
    assert!(r.failure_reason.as_deref().unwrap().contains("matches[0][1]"), "{:?}", r.failure_reason);
}
