mod common;

use common::*;
use hazard_core::pipeline::{
    build_gateway, emit_run_summary, evaluate_only, read_records, render_heatmaps, run_pipeline,
    Mode, PipelineError, RunOptions, StageOutcome,
};
use hazard_core::AnomalousObjectSet;
use serde_json::{json, Value};

#[test]
fn five_video_run_layout() {
    let work = tempfile::tempdir().unwrap();
    let out = run(&config_in(work.path()), "r1");
    assert_eq!(out.records.len(), 5);
    assert_eq!(out.exit_code(), 0);
    for f in ["report.json", "report.csv"] {
        assert!(out.run_dir.join(f).is_file(), "{f}");
    }
    for id in &dataset().video_ids {
        let dir = out.run_dir.join(id);
        for f in [
            "rhs.json",
            "aes.json",
            "cos.json",
            "aos.json",
            "record.json",
        ] {
            assert!(dir.join(f).is_file(), "{id}/{f}");
        }
    }
    // v05 has no common objects, so there is nothing to verify.
    for id in ["v01", "v02", "v03", "v04"] {
        assert!(out.run_dir.join(id).join("matrix.json").is_file());
        assert!(out.run_dir.join(id).join("detections.json").is_file());
    }
    let report = out.report.unwrap();
    assert_eq!(report.n_videos, 5);
    assert_eq!(
        report
            .per_video
            .iter()
            .find(|v| v.video_id == "v05")
            .unwrap()
            .m,
        0
    );
    assert_eq!(read_records(&out.run_dir).unwrap(), out.records);
}

#[test]
fn video_filter_selects_one_record() {
    let work = tempfile::tempdir().unwrap();
    let cfg = config_in(work.path());
    let gw = build_gateway(&cfg).unwrap();
    let opts = RunOptions {
        run_id: Some("one".into()),
        videos: Some(vec!["v03".into()]),
    };
    let out = run_pipeline(&cfg, &gw, &opts).unwrap();
    assert_eq!(out.records.len(), 1);
    assert_eq!(read_records(&out.run_dir).unwrap().len(), 1);
    assert_eq!(out.report.unwrap().n_videos, 1);

    let bad = RunOptions {
        run_id: Some("bad".into()),
        videos: Some(vec!["nope".into()]),
    };
    let err = run_pipeline(&cfg, &gw, &bad).unwrap_err();
    assert!(matches!(err, PipelineError::UnknownVideo(_)));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn empty_intersection_scores_zero_and_stays_isolated() {
    let work = tempfile::tempdir().unwrap();
    let mut cfg = config_in(work.path());
    cfg.cache_dir = None;
    let fixtures = private_fixtures(&mut cfg, work.path());
    let clean = run(&cfg, "clean");
    let n = edit_fixtures(&fixtures, "v01", "cross reference", |fx| {
        fx.insert("text".into(), json!("NONE"));
    });
    assert_eq!(n, 1);
    let cut = run(&cfg, "cut");
    let v01 = cut.records.iter().find(|r| r.video_id == "v01").unwrap();
    assert_eq!(v01.m, Some(0));
    assert_eq!(v01.stages.merge, StageOutcome::ok_with("no common objects"));
    assert_eq!(cut.exit_code(), 0);
    let (a, b) = (snapshot(&clean.run_dir), snapshot(&cut.run_dir));
    for (path, bytes) in &a {
        if path.starts_with("v01")
            || path.starts_with("report.json")
            || path.starts_with("report.csv")
        {
            continue;
        }
        assert_eq!(Some(bytes), b.get(path), "{}", path.display());
    }
    assert!(cut.report.unwrap().besm < clean.report.unwrap().besm);
}

#[test]
fn failed_track_is_recorded_and_summarized() {
    let work = tempfile::tempdir().unwrap();
    let mut cfg = config_in(work.path());
    cfg.cache_dir = None;
    let fixtures = private_fixtures(&mut cfg, work.path());
    assert!(corrupt_fixtures(&fixtures, "v02", "describe frame") > 0);
    let out = run(&cfg, "broken");
    assert_eq!(out.failed_videos(), vec!["v02"]);
    assert_eq!(out.exit_code(), 2);
    let v02 = out.records.iter().find(|r| r.video_id == "v02").unwrap();
    assert!(v02.stages.track1.is_failed());
    assert!(v02.stages.track2.is_ok());
    assert_eq!(v02.m, Some(0));
    assert!(!out.run_dir.join("v02/rhs.json").exists());

    let summary = emit_run_summary(&out.run_dir).unwrap();
    assert!(
        summary.contains("Videos: 5 (4 ok, 1 with failures)"),
        "{summary}"
    );
    assert!(summary.contains("v02 track1:"), "{summary}");
}

#[test]
fn summary_metrics_match_report_csv() {
    let work = tempfile::tempdir().unwrap();
    let out = run(&config_in(work.path()), "s");
    let summary = emit_run_summary(&out.run_dir).unwrap();
    let csv = std::fs::read_to_string(out.run_dir.join("report.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let (name, value) = line.split_once(',').unwrap();
        let found = summary
            .lines()
            .find(|l| l.starts_with(name) && l[name.len()..].trim() == value)
            .unwrap_or_else(|| panic!("{name},{value} missing from summary:\n{summary}"));
        assert!(!found.is_empty());
        rows += 1;
    }
    assert_eq!(rows, 3);
    assert!(
        summary.contains("track1         5        0       0"),
        "{summary}"
    );
}

#[test]
fn offline_fallback_marks_selection() {
    let work = tempfile::tempdir().unwrap();
    let mut cfg = config_in(work.path());
    cfg.mode = Mode::OfflineFallback;
    let out = run(&cfg, "off");
    assert_eq!(out.exit_code(), 0);
    for id in &dataset().video_ids {
        let aes: Value = serde_json::from_str(
            &std::fs::read_to_string(out.run_dir.join(id).join("aes.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(aes["selection"], "fallback_selection");
        // The fallback picks the reply variant with an extra item.
        assert!(aes["items"].as_array().unwrap().contains(&json!("sky")));
    }
    let rec = &out.records[0];
    assert_eq!(
        rec.stages.track2,
        StageOutcome::ok_with("fallback selection")
    );
}

#[test]
fn heatmaps_render_from_a_run() {
    let work = tempfile::tempdir().unwrap();
    let out = run(&config_in(work.path()), "h");
    let files = render_heatmaps(&out.run_dir, None).unwrap();
    assert_eq!(files.len(), 4);
    let svg = std::fs::read_to_string(&files[0].svg).unwrap();
    assert!(svg.contains(r#"class="detected""#));
    assert!(render_heatmaps(&out.run_dir, Some(&["zzz".to_string()])).is_err());
}

#[test]
fn evaluate_only_cases() {
    let work = tempfile::tempdir().unwrap();
    let cfg = config_in(work.path());
    let gw = build_gateway(&cfg).unwrap();
    let gt = hazard_core::dataset::load_ground_truth(&dataset().ground_truth).unwrap();

    // Predictions that copy the ground-truth captions.
    let copies: Vec<AnomalousObjectSet> = gt
        .iter()
        .map(|g| AnomalousObjectSet {
            video_id: g.video_id.clone(),
            entries: vec![hazard_core::merge::AnomalyEntry {
                label: g.hazard_label.clone(),
                description: g.hazard_description.clone(),
                head_noun: g.hazard_label.clone(),
            }],
            warnings: vec![],
        })
        .collect();
    let p = work.path().join("copies.json");
    std::fs::write(&p, serde_json::to_string(&copies).unwrap()).unwrap();
    let r = evaluate_only(&cfg, &gw, &p, &dataset().ground_truth).unwrap();
    assert!((r.besm - 1.0).abs() < 1e-12 && (r.sam - 1.0).abs() < 1e-12);

    let empty = work.path().join("empty.json");
    std::fs::write(&empty, "[]").unwrap();
    let r = evaluate_only(&cfg, &gw, &empty, &dataset().ground_truth).unwrap();
    assert_eq!((r.besm, r.sam, r.success_rate), (0.0, 0.0, 0.0));
    assert_eq!(r.n_videos, 5);

    let orphan = work.path().join("orphan.json");
    std::fs::write(&orphan, r#"{"video_id": "v99", "entries": []}"#).unwrap();
    assert!(matches!(
        evaluate_only(&cfg, &gw, &orphan, &dataset().ground_truth),
        Err(PipelineError::MissingGroundTruth(_))
    ));
    let garbage = work.path().join("garbage.json");
    std::fs::write(&garbage, "{not json").unwrap();
    assert!(matches!(
        evaluate_only(&cfg, &gw, &garbage, &dataset().ground_truth),
        Err(PipelineError::Predictions { .. })
    ));

    // Re-scoring a run directory reproduces the run's report.
    let out = run(&cfg, "e");
    let again = evaluate_only(&cfg, &gw, &out.run_dir, &dataset().ground_truth).unwrap();
    assert_eq!(again, out.report.unwrap());
}
