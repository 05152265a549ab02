#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use hazard_core::demo::{self, DemoDataset};
use hazard_core::pipeline::{build_gateway, run_pipeline, PipelineConfig, RunOptions, RunOutcome};
use serde_json::{json, Value};

/// The demo dataset, generated once per test binary.
pub fn dataset() -> &'static DemoDataset {
    static DATA: OnceLock<DemoDataset> = OnceLock::new();
    DATA.get_or_init(|| {
        let root =
            Path::new(env!("CARGO_TARGET_TMPDIR")).join(concat!("demo-", env!("CARGO_CRATE_NAME")));
        let _ = std::fs::remove_dir_all(&root);
        demo::generate(&root).expect("demo generation")
    })
}

/// Demo config with cache and output redirected into `work`.
pub fn config_in(work: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::load(&dataset().config).unwrap();
    cfg.cache_dir = Some(work.join("cache"));
    cfg.out_dir = work.join("runs");
    cfg
}

pub fn run(cfg: &PipelineConfig, run_id: &str) -> RunOutcome {
    let gw = build_gateway(cfg).unwrap();
    run_pipeline(
        cfg,
        &gw,
        &RunOptions {
            run_id: Some(run_id.into()),
            videos: None,
        },
    )
    .unwrap()
}

/// Relative path → bytes for every file under `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(
                    p.strip_prefix(base).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Copies the demo fixtures into `work/fixtures` and points `cfg` at them.
pub fn private_fixtures(cfg: &mut PipelineConfig, work: &Path) -> PathBuf {
    let dst = work.join("fixtures");
    std::fs::create_dir_all(&dst).unwrap();
    for e in std::fs::read_dir(&dataset().fixtures).unwrap() {
        let p = e.unwrap().path();
        std::fs::copy(&p, dst.join(p.file_name().unwrap())).unwrap();
    }
    cfg.fixtures = Some(dst.clone());
    dst
}

/// Rewrites the fixtures of `video_id` whose note contains `note`.
pub fn edit_fixtures(
    fixtures: &Path,
    video_id: &str,
    note: &str,
    edit: impl Fn(&mut serde_json::Map<String, Value>),
) -> usize {
    let path = fixtures.join(format!("{video_id}.json"));
    let mut file: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let mut n = 0;
    for fx in file["fixtures"].as_array_mut().unwrap() {
        if fx["note"].as_str().is_some_and(|s| s.contains(note)) {
            edit(fx.as_object_mut().unwrap());
            n += 1;
        }
    }
    std::fs::write(&path, serde_json::to_string_pretty(&file).unwrap()).unwrap();
    n
}

/// Replaces every matching fixture with a non-retryable backend error.
pub fn corrupt_fixtures(fixtures: &Path, video_id: &str, note: &str) -> usize {
    edit_fixtures(fixtures, video_id, note, |fx| {
        fx.retain(|k, _| k == "key" || k == "note");
        fx.insert(
            "error".into(),
            json!({"status": 400, "message": "corrupted fixture"}),
        );
    })
}
