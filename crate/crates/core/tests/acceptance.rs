//! Acceptance checks. Each criterion prints one PASS or FAIL line; the
//! process exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use hazard_core::dataset::{
    extract_snippet, filter_snippets, plan_sampling, BoundingBox, GroundTruthAnnotation,
    SnippetThresholds, VideoScene,
};
use hazard_core::gateway::{
    CacheKey, EmbedRequest, FixtureFile, FixtureResponse, Gateway, GatewayOptions, MockBackend,
    ResponseCache,
};
use hazard_core::merge::{AnomalousObjectSet, AnomalyEntry};
use hazard_core::metrics::{besm, cosine, sam, VideoScoreSet};
use hazard_core::pipeline::{evaluate_only, PipelineConfig};
use hazard_core::verify::{detect_top_decile, RowId, SimilarityMatrix};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;

type Check = Result<String, String>;
type Snapshot = BTreeMap<PathBuf, Vec<u8>>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_scoresets(rng: &mut StdRng, max_m: usize) -> Vec<VideoScoreSet> {
    let n = rng.random_range(1..=20);
    (0..n)
        .map(|i| {
            let m = rng.random_range(0..=max_m);
            let scores = (0..m)
                .map(|_| rng.random_range(0..=1000) as f64 / 1000.0)
                .collect();
            VideoScoreSet::new(format!("v{i}"), scores)
        })
        .collect()
}

/// Direct reading of the definitions: per-video midpoint of the sorted
/// extremes (or the lone score, or 0), mean over videos.
fn oracle_besm(sets: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for s in sets {
        let mut v = s.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        total += match v.len() {
            0 => 0.0,
            1 => v[0],
            n => (v[0] + v[n - 1]) / 2.0,
        };
    }
    total / sets.len() as f64
}

fn oracle_sam(sets: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for s in sets {
        if !s.is_empty() {
            let mut acc = 0.0;
            for x in s {
                acc += x;
            }
            total += acc / s.len() as f64;
        }
    }
    total / sets.len() as f64
}

fn metric_oracle() -> Check {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5EED_0001);
    let mut worst: f64 = 0.0;
    for trial in 0..1000 {
        let sets = random_scoresets(&mut rng, 5);
        let raw: Vec<Vec<f64>> = sets.iter().map(|s| s.description_scores.clone()).collect();
        let (b, s) = (besm(&sets).unwrap(), sam(&sets).unwrap());
        let (ob, os) = (oracle_besm(&raw), oracle_sam(&raw));
        let d = (b - ob).abs().max((s - os).abs());
        worst = worst.max(d);
        ensure(d <= 1e-12, || {
            format!("collection {trial}: besm {b} vs {ob}, sam {s} vs {os}")
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "1000 collections, max deviation {worst:.1e}, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn degenerate_coincidence() -> Check {
    let mut rng = StdRng::seed_from_u64(0x5EED_0002);
    for trial in 0..200 {
        let n = rng.random_range(1..=20);
        let sets: Vec<VideoScoreSet> = (0..n)
            .map(|i| {
                VideoScoreSet::new(
                    format!("v{i}"),
                    vec![rng.random_range(0..=1000) as f64 / 1000.0],
                )
            })
            .collect();
        let (b, s) = (besm(&sets).unwrap(), sam(&sets).unwrap());
        ensure(b == s, || {
            format!("collection {trial}: besm {b} != sam {s}")
        })?;
    }
    Ok("200 single-score collections, BESM == SAM exactly".into())
}

fn cosine_properties() -> Check {
    let mut rng = StdRng::seed_from_u64(0x5EED_0003);
    let hand = cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
    ensure(
        (hand - std::f64::consts::FRAC_1_SQRT_2).abs() <= 1e-6,
        || format!("(1,1)·(1,0) = {hand}"),
    )?;
    for trial in 0..1000 {
        let dim = rng.random_range(2..=64);
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (alpha, beta) = (
            rng.random_range(0.001..1000.0),
            rng.random_range(0.001..1000.0),
        );
        let self_sim = cosine(&a, &a).unwrap();
        ensure((self_sim - 1.0).abs() <= 1e-12, || {
            format!("trial {trial}: self-similarity {self_sim}")
        })?;
        let ab = cosine(&a, &b).unwrap();
        ensure(ab == cosine(&b, &a).unwrap(), || {
            format!("trial {trial}: asymmetric")
        })?;
        let sa: Vec<f64> = a.iter().map(|x| x * alpha).collect();
        let sb: Vec<f64> = b.iter().map(|x| x * beta).collect();
        let scaled = cosine(&sa, &sb).unwrap();
        ensure((scaled - ab).abs() <= 1e-9, || {
            format!("trial {trial}: scaled {scaled} vs {ab}")
        })?;
    }
    Ok(format!(
        "hand case {hand:.6}; 1000 random pairs symmetric, self = 1, scale-invariant"
    ))
}

fn snippet_boundaries() -> Check {
    let frame = image::RgbImage::from_pixel(400, 400, image::Rgb([1, 2, 3]));
    let cases = [
        (174, 300, false),
        (175, 200, false),
        (176, 199, true),
        (175, 175, false),
    ];
    for (w, h, expect) in cases {
        let b = BoundingBox {
            video_id: "v".into(),
            frame_index: 0,
            track_id: "1".into(),
            x1: 10,
            y1: 10,
            x2: 10 + w,
            y2: 10 + h,
        };
        let kept = filter_snippets(vec![extract_snippet(&frame, &b).unwrap()]).len() == 1;
        ensure(kept == expect, || {
            format!("{w}x{h} (area {}) kept = {kept}", w * h)
        })?;
    }
    let t = SnippetThresholds::default();
    let predicate = |w: u32, h: u32| w >= 175 && h >= 175 && (w as u64 * h as u64) > 35_000;
    let mut n = 0;
    for (hs, he) in [(170, 180), (195, 205)] {
        for w in 170..=180u32 {
            for h in hs..=he {
                let got = t.accepts(w, h, w as u64 * h as u64);
                ensure(got == predicate(w, h), || {
                    format!("{w}x{h}: accepts = {got}")
                })?;
                n += 1;
            }
        }
    }
    Ok(format!(
        "4 boundary crops; {n}-point sweep matches the three-clause predicate"
    ))
}

fn sampling_check() -> Check {
    let scene = |frame_count| VideoScene {
        video_id: "v".into(),
        frame_count,
        fps: 30.0,
        frame_source: "frames".into(),
    };
    let plan = plan_sampling(&scene(300), 25).map_err(|e| e.to_string())?;
    let expected: Vec<usize> = (0..25).map(|i| i * 12).collect();
    ensure(plan.stride == 12 && plan.indices == expected, || {
        format!("{plan:?}")
    })?;
    let mut rng = StdRng::seed_from_u64(0x5EED_0004);
    for _ in 0..1000 {
        let fc = rng.random_range(1..=5000);
        let n = rng.random_range(1..=fc.min(200));
        let p = plan_sampling(&scene(fc), n).map_err(|e| e.to_string())?;
        ensure(p.indices.len() == n, || {
            format!("fc {fc} n {n}: {} indices", p.indices.len())
        })?;
        ensure(p.indices.iter().all(|&i| i < fc), || {
            format!("fc {fc} n {n}: out of bounds")
        })?;
        ensure(
            p.stride >= 1 && p.indices.windows(2).all(|w| w[1] - w[0] == p.stride),
            || format!("fc {fc} n {n}: uneven stride"),
        )?;
    }
    Ok("300 frames / 25 → stride 12, indices 0..=288; 1000 random plans in bounds and evenly strided".into())
}

fn top_decile_oracle() -> Check {
    let mut rng = StdRng::seed_from_u64(0x5EED_0005);
    let mut all_equal_rows = 0;
    for trial in 0..1000 {
        let (rows, cols) = (rng.random_range(1..=30), rng.random_range(1..=12));
        let scores: Vec<Vec<f64>> = (0..rows)
            .map(|_| {
                if rng.random_range(0..10) == 0 {
                    all_equal_rows += 1;
                    vec![rng.random_range(0..=100) as f64 / 100.0; cols]
                } else {
                    (0..cols)
                        .map(|_| rng.random_range(0..=100) as f64 / 100.0)
                        .collect()
                }
            })
            .collect();
        let m = SimilarityMatrix {
            rows: (0..rows)
                .map(|i| RowId {
                    video_id: "v".into(),
                    frame_index: i,
                    track_id: "t".into(),
                })
                .collect(),
            cols: (0..cols).map(|j| format!("label {j}")).collect(),
            scores: scores.clone(),
        };
        let got: Vec<(usize, usize)> = detect_top_decile(&m)
            .detections
            .iter()
            .map(|d| (d.row_id.frame_index, d.col_label[6..].parse().unwrap()))
            .collect();
        let mut want = Vec::new();
        for (i, row) in scores.iter().enumerate() {
            let mut sorted = row.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let threshold = sorted[(9 * cols).div_ceil(10) - 1];
            let hits: Vec<_> = (0..cols)
                .filter(|&j| row[j] >= threshold)
                .map(|j| (i, j))
                .collect();
            ensure(!hits.is_empty(), || {
                format!("trial {trial}: row {i} without detection")
            })?;
            if row.iter().all(|&x| x == row[0]) {
                ensure(hits.len() == cols, || {
                    format!("trial {trial}: all-equal row {i} not fully detected")
                })?;
            }
            want.extend(hits);
        }
        ensure(got == want, || {
            format!("trial {trial}: {got:?} vs {want:?}")
        })?;
    }
    Ok(format!(
        "1000 matrices match sort-based brute force ({all_equal_rows} all-equal rows)"
    ))
}

fn end_to_end_determinism() -> Check {
    let start = Instant::now();
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = config_in(work.path());
    ensure(cfg.mode.uses_mock(), || {
        "demo config is not a mock mode".into()
    })?;
    let cold = run(&cfg, "cold");
    ensure(cold.exit_code() == 0, || {
        format!("cold run failed: {:?}", cold.failed_videos())
    })?;
    let a = run(&cfg, "warm-a");
    let b = run(&cfg, "warm-b");
    let files = snapshot(&a.run_dir);
    ensure(files == snapshot(&b.run_dir), || "warm runs differ".into())?;
    ensure(
        files.len() > 5 && files.contains_key(Path::new("report.json")),
        || "run directory incomplete".into(),
    )?;
    let records = files.keys().filter(|p| p.ends_with("record.json")).count();
    ensure(records == 5, || format!("{records} record files"))?;
    for workers in [1, 8] {
        let c = run(
            &PipelineConfig {
                max_concurrency: workers,
                ..cfg.clone()
            },
            &format!("conc-{workers}"),
        );
        ensure(snapshot(&c.run_dir) == files, || {
            format!("max_concurrency {workers} differs")
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{} files byte-identical across 2 warm runs and concurrency 1 vs 8, {:.1}s",
        files.len(),
        elapsed.as_secs_f64()
    ))
}

fn failure_isolation() -> Check {
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fresh = |name: &str| {
        let mut cfg = config_in(&work.path().join(name));
        let fixtures = private_fixtures(&mut cfg, &work.path().join(name));
        (cfg, fixtures)
    };
    let (clean_cfg, _) = fresh("clean");
    let clean = run(&clean_cfg, "run");
    let (bad_cfg, bad_fixtures) = fresh("bad");
    let n = corrupt_fixtures(&bad_fixtures, "v03", "describe frame");
    ensure(n > 0, || "no track 1 fixtures found for v03".into())?;
    let bad = run(&bad_cfg, "run");
    ensure(bad.failed_videos() == ["v03"], || {
        format!("failed videos {:?}", bad.failed_videos())
    })?;
    let (a, b) = (snapshot(&clean.run_dir), snapshot(&bad.run_dir));
    let mut compared = 0;
    for id in ["v01", "v02", "v04", "v05"] {
        let mine = |m: &Snapshot| -> Vec<(PathBuf, Vec<u8>)> {
            m.iter()
                .filter(|(p, _)| p.starts_with(id))
                .map(|(p, v)| (p.clone(), v.clone()))
                .collect()
        };
        let (x, y) = (mine(&a), mine(&b));
        ensure(!x.is_empty() && x == y, || format!("{id} outputs changed"))?;
        compared += x.len();
    }
    let rec = |m: &Snapshot| m.get(Path::new("v03/record.json")).cloned();
    ensure(rec(&a) != rec(&b), || "v03 record unchanged".into())?;
    let (ra, rb) = (clean.report.unwrap(), bad.report.unwrap());
    ensure(ra.besm != rb.besm || ra.sam != rb.sam, || {
        "aggregates unchanged".into()
    })?;
    Ok(format!(
        "{n} v03 frame fixtures corrupted; {compared} files of the other four videos identical; BESM {:.4} → {:.4}",
        ra.besm, rb.besm
    ))
}

fn evaluate_golden() -> Check {
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let model = PipelineConfig::default().models.embedding;
    let mut fixtures = FixtureFile::default();
    let mut embed = |text: &str, v: Vec<f64>| {
        let req = EmbedRequest {
            model_tag: model.clone(),
            text: text.into(),
        };
        fixtures.push(&req, FixtureResponse::Vector(v), text);
    };
    let gt = [("a", "reference caption a"), ("b", "reference caption b")];
    for (_, caption) in gt {
        embed(caption, vec![1.0, 0.0]);
    }
    let mut predictions = Vec::new();
    for (video, cs) in [("a", &[0.2, 0.6, 0.9][..]), ("b", &[0.5][..])] {
        let mut entries = Vec::new();
        for c in cs {
            let text = format!("prediction {video} {c}");
            embed(&text, vec![*c, (1.0 - c * c).sqrt()]);
            entries.push(AnomalyEntry {
                label: "object".into(),
                description: text,
                head_noun: "object".into(),
            });
        }
        predictions.push(AnomalousObjectSet {
            video_id: video.into(),
            entries,
            warnings: vec![],
        });
    }
    let fx_dir = work.path().join("fixtures");
    std::fs::create_dir_all(&fx_dir).map_err(|e| e.to_string())?;
    fixtures
        .save(&fx_dir.join("golden.json"))
        .map_err(|e| e.to_string())?;
    let pred_path = work.path().join("predictions.json");
    std::fs::write(
        &pred_path,
        serde_json::to_string_pretty(&predictions).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    let gt_path = work.path().join("gt.csv");
    let mut w = csv::Writer::from_path(&gt_path).map_err(|e| e.to_string())?;
    for (id, caption) in gt {
        let g = GroundTruthAnnotation {
            video_id: id.into(),
            hazard_label: "object".into(),
            hazard_description: caption.into(),
        };
        w.serialize(g).unwrap();
    }
    w.flush().map_err(|e| e.to_string())?;

    let mock = MockBackend::from_dir(&fx_dir, 0)?;
    let gw = Gateway::new(Arc::new(mock), None, GatewayOptions::default());
    let cfg = PipelineConfig {
        fixtures: Some(fx_dir),
        ..PipelineConfig::default()
    };
    let r = evaluate_only(&cfg, &gw, &pred_path, &gt_path).map_err(|e| e.to_string())?;
    ensure(r.n_videos == 2, || format!("{} videos scored", r.n_videos))?;
    let (want_besm, want_sam) = ((0.55 + 0.5) / 2.0, (1.7 / 3.0 + 0.5) / 2.0);
    ensure(
        (r.besm - 0.525).abs() <= 1e-4 && (r.besm - want_besm).abs() <= 1e-4,
        || format!("BESM {}", r.besm),
    )?;
    ensure(
        (r.sam - 0.5333).abs() <= 1e-4 && (r.sam - want_sam).abs() <= 1e-4,
        || format!("SAM {}", r.sam),
    )?;
    Ok(format!(
        "BESM {:.6} (want 0.525), SAM {:.6} (want 0.5333)",
        r.besm, r.sam
    ))
}

fn cache_integrity() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cache = ResponseCache::new(dir.path());
    let key = CacheKey::of_canonical(&json!({"kind": "chat", "user": "same"}));
    let payload = |writer: usize| json!({"text": format!("{writer}:").repeat(20_000)});
    let valid: Vec<_> = (0..10).map(payload).collect();
    let stop = AtomicBool::new(false);
    let mut reads = 0usize;
    let bad_read = std::thread::scope(|s| {
        let readers: Vec<_> = (0..4)
            .map(|_| {
                s.spawn(|| {
                    let (mut n, mut bad) = (0usize, None);
                    while !stop.load(Ordering::Relaxed) {
                        if let Some(entry) = cache.get(&key) {
                            n += 1;
                            if !valid.contains(&entry.response) {
                                bad = Some("read a response no writer wrote".to_string());
                            }
                        }
                    }
                    (n, bad)
                })
            })
            .collect();
        let writers: Vec<_> = (0..10)
            .map(|w| {
                let (cache, key, value) = (&cache, &key, payload(w));
                s.spawn(move || {
                    for _ in 0..20 {
                        cache
                            .put(key, json!({"kind": "chat"}), value.clone())
                            .unwrap();
                    }
                })
            })
            .collect();
        for w in writers {
            w.join().unwrap();
        }
        stop.store(true, Ordering::Relaxed);
        let mut bad = None;
        for r in readers {
            let (n, b) = r.join().unwrap();
            reads += n;
            bad = bad.or(b);
        }
        bad
    });
    if let Some(b) = bad_read {
        return Err(b);
    }
    let files = walk_files(dir.path());
    ensure(files.len() == 1, || {
        format!("{} files in cache: {files:?}", files.len())
    })?;
    ensure(files[0] == cache.path_for(&key), || {
        format!("unexpected path {:?}", files[0])
    })?;
    let entry = cache.get(&key).ok_or("final entry unreadable")?;
    ensure(valid.contains(&entry.response), || {
        "final entry malformed".into()
    })?;
    Ok(format!(
        "10 writers × 20 puts, {reads} concurrent reads all well-formed, one file left"
    ))
}

fn walk_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk_files(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("metric oracle equivalence", metric_oracle),
        ("degenerate coincidence", degenerate_coincidence),
        ("cosine properties", cosine_properties),
        ("snippet filter boundaries", snippet_boundaries),
        ("sampling", sampling_check),
        ("top-decile oracle equivalence", top_decile_oracle),
        ("end-to-end determinism", end_to_end_determinism),
        ("failure isolation", failure_isolation),
        ("evaluate-only golden", evaluate_golden),
        ("gateway cache integrity", cache_integrity),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
