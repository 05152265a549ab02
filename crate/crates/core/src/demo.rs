//! A small synthetic dataset with mock fixtures, for trying the pipeline
//! without any model backend and for end-to-end tests.
//!
//! Frames are drawn procedurally. Fixture replies are authored by a
//! scripted backend while the real pipeline runs over the generated data,
//! so every fixture key matches the requests the pipeline sends.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::{Rgb, RgbImage};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{extract_snippet, plan_sampling, BoundingBox, VideoScene};
use crate::gateway::{
    hashed_embedding, Backend, CanonicalRequest, ChatRequest, EmbedRequest, FixtureFile,
    FixtureResponse, Gateway, GatewayError, GatewayOptions, ImagePayload, ImageTextSimRequest,
    MOCK_EMBEDDING_DIMENSION,
};
use crate::pipeline::{run_pipeline, Mode, PipelineConfig, PipelineError, RunOptions};
use crate::prompts;

pub const WIDTH: u32 = 640;
pub const HEIGHT: u32 = 360;
pub const FRAME_COUNT: usize = 300;
pub const N_FRAMES: usize = 25;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("cannot write {path}: {message}")]
    Write { path: PathBuf, message: String },
    #[error("authoring fixtures: {0}")]
    Pipeline(#[from] PipelineError),
}

/// Paths of a generated demo dataset.
#[derive(Debug, Clone)]
pub struct DemoDataset {
    pub root: PathBuf,
    pub config: PathBuf,
    pub manifest: PathBuf,
    pub boxes: PathBuf,
    pub ground_truth: PathBuf,
    pub fixtures: PathBuf,
    pub video_ids: Vec<String>,
}

impl DemoDataset {
    pub fn fixture_file(&self, video_id: &str) -> PathBuf {
        self.fixtures.join(format!("{video_id}.json"))
    }
}

struct BoxedObject {
    name: &'static str,
    track: &'static str,
    w: u32,
    h: u32,
    colour: [u8; 3],
    /// Positions (in the sampling plan) where the object is annotated.
    frames: std::ops::Range<usize>,
}

struct Scenario {
    id: &'static str,
    sky: [u8; 3],
    frame_descriptions: &'static [&'static str],
    ranked: &'static [&'static str],
    inventory: &'static [&'static str],
    /// `None` means the cross-reference reply is NONE.
    critical: Option<&'static [&'static str]>,
    anomalies: &'static [(&'static str, &'static str)],
    gt: (&'static str, &'static str),
    objects: &'static [BoxedObject],
}

const SCENARIOS: &[Scenario] = &[
    Scenario {
        id: "v01",
        sky: [150, 190, 230],
        frame_descriptions: &[
            "A dog running across the road ahead of the ego vehicle",
            "A white van driving at high speed near the ego lane",
            "A parked car on the right shoulder",
        ],
        ranked: &[
            "Dog running across the road ahead of the ego vehicle",
            "White van driving at high speed near the ego lane",
            "Parked car on the right shoulder",
        ],
        inventory: &["car", "dog", "van", "traffic light", "tree"],
        critical: Some(&[
            "Dog running across the road ahead of the ego vehicle",
            "Van driving at high speed near the ego lane",
            "Car parked on the right shoulder",
        ]),
        anomalies: &[(
            "dog",
            "A dog running across the road ahead of the ego vehicle",
        )],
        gt: (
            "dog",
            "A dog running across the road ahead of the ego vehicle",
        ),
        objects: &[
            BoxedObject {
                name: "dog",
                track: "1",
                w: 220,
                h: 180,
                colour: [140, 90, 40],
                frames: 0..6,
            },
            BoxedObject {
                name: "van",
                track: "2",
                w: 240,
                h: 200,
                colour: [235, 235, 235],
                frames: 0..3,
            },
        ],
    },
    Scenario {
        id: "v02",
        sky: [40, 50, 90],
        frame_descriptions: &[
            "A deer standing at the edge of the road",
            "An oncoming truck with its headlights on",
            "A road sign on the left",
        ],
        ranked: &[
            "Deer standing at the edge of the road",
            "Oncoming truck with its headlights on",
            "Road sign on the left",
        ],
        inventory: &["deer", "truck", "road sign", "fence"],
        critical: Some(&[
            "Deer standing at the edge of the road",
            "Truck approaching in the oncoming lane",
        ]),
        anomalies: &[
            ("deer", "A deer standing near the roadside at night"),
            ("deer", "The deer may jump into the ego lane"),
        ],
        gt: (
            "deer",
            "A deer crosses the road in front of the car at night",
        ),
        objects: &[
            BoxedObject {
                name: "deer",
                track: "7",
                w: 200,
                h: 210,
                colour: [120, 80, 50],
                frames: 2..8,
            },
            BoxedObject {
                name: "truck",
                track: "8",
                w: 230,
                h: 190,
                colour: [200, 40, 40],
                frames: 0..4,
            },
        ],
    },
    Scenario {
        id: "v03",
        sky: [170, 200, 220],
        frame_descriptions: &[
            "A pedestrian crossing the street outside the crosswalk",
            "A cyclist riding along the bike lane",
            "A bus stopped at the bus stop",
        ],
        ranked: &[
            "Pedestrian crossing the street outside the crosswalk",
            "Cyclist riding along the bike lane",
            "Bus stopped at the bus stop",
        ],
        inventory: &["pedestrian", "cyclist", "bus", "crosswalk", "building"],
        critical: Some(&[
            "Pedestrian crossing the street outside the crosswalk",
            "Cyclist riding along the bike lane",
            "Bus stopped at the bus stop",
        ]),
        anomalies: &[
            (
                "pedestrian",
                "A pedestrian crossing the street outside the crosswalk",
            ),
            ("cyclist", "A cyclist swerving toward the ego lane"),
        ],
        gt: (
            "pedestrian",
            "A pedestrian walks into the street without using the crosswalk",
        ),
        objects: &[
            BoxedObject {
                name: "pedestrian",
                track: "3",
                w: 180,
                h: 220,
                colour: [60, 60, 160],
                frames: 0..5,
            },
            BoxedObject {
                name: "cyclist",
                track: "4",
                w: 200,
                h: 200,
                colour: [40, 160, 60],
                frames: 1..4,
            },
        ],
    },
    Scenario {
        id: "v04",
        sky: [200, 200, 200],
        frame_descriptions: &[
            "Debris scattered across the ego lane",
            "A tire lying in the middle of the road",
            "A sedan braking ahead",
            "",
        ],
        ranked: &[
            "Debris scattered across the ego lane",
            "Tire lying in the middle of the road",
            "Sedan braking ahead",
        ],
        inventory: &["debris", "tire", "sedan", "guardrail"],
        critical: Some(&[
            "Debris scattered across the ego lane",
            "Tire lying in the middle of the road",
            "Sedan braking ahead",
        ]),
        anomalies: &[
            ("debris", "Debris scattered across the ego lane"),
            ("tire", "A tire lying in the middle of the road"),
            ("debris", "Loose debris could puncture a tire"),
        ],
        gt: ("debris", "Debris and a loose tire lie in the lane ahead"),
        objects: &[
            BoxedObject {
                name: "debris",
                track: "11",
                w: 260,
                h: 150,
                colour: [90, 70, 60],
                frames: 0..4,
            },
            BoxedObject {
                name: "tire",
                track: "12",
                w: 190,
                h: 190,
                colour: [20, 20, 20],
                frames: 3..7,
            },
        ],
    },
    Scenario {
        id: "v05",
        sky: [110, 120, 130],
        frame_descriptions: &[
            "Heavy rain reduces visibility on the highway",
            "Wet road surface reflecting headlights",
        ],
        ranked: &[
            "Heavy rain reduces visibility on the highway",
            "Wet road surface reflecting headlights",
        ],
        inventory: &["truck", "guardrail", "sign"],
        critical: None,
        anomalies: &[],
        gt: ("truck", "A truck skids across the wet highway"),
        objects: &[BoxedObject {
            name: "truck",
            track: "21",
            w: 240,
            h: 200,
            colour: [180, 120, 30],
            frames: 0..3,
        }],
    },
];

fn hash64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

fn unit(parts: &[&[u8]]) -> f64 {
    (hash64(parts) >> 11) as f64 / (1u64 << 53) as f64
}

/// Cheap per-pixel noise so crops from different frames never coincide.
fn noise(seed: u64, x: u32, y: u32) -> i16 {
    let mut v = seed ^ ((x as u64) << 20) ^ (y as u64) ^ 0x9E37_79B9_7F4A_7C15;
    v ^= v >> 33;
    v = v.wrapping_mul(0xff51_afd7_ed55_8ccd);
    v ^= v >> 33;
    (v % 17) as i16 - 8
}

fn shade(c: [u8; 3], n: i16) -> Rgb<u8> {
    Rgb(c.map(|v| (v as i16 + n).clamp(0, 255) as u8))
}

fn object_box(
    scenario: &Scenario,
    slot: usize,
    obj: &BoxedObject,
    frame_index: usize,
    position: usize,
) -> BoundingBox {
    let x1 = 30 + 320 * slot as u32 + 6 * position as u32;
    let y1 = 120 - 10 * slot as u32;
    BoundingBox {
        video_id: scenario.id.to_string(),
        frame_index,
        track_id: obj.track.to_string(),
        x1,
        y1,
        x2: (x1 + obj.w).min(WIDTH),
        y2: (y1 + obj.h).min(HEIGHT),
    }
}

fn draw_frame(
    scenario: &Scenario,
    video_no: usize,
    frame_index: usize,
    boxes: &[(&BoxedObject, BoundingBox)],
) -> RgbImage {
    let seed = hash64(&[
        &(video_no as u64).to_le_bytes(),
        &(frame_index as u64).to_le_bytes(),
    ]);
    let horizon = HEIGHT / 3;
    let mut img = RgbImage::from_fn(WIDTH, HEIGHT, |x, y| {
        let n = noise(seed, x, y);
        if y < horizon {
            shade(scenario.sky, n)
        } else {
            let g = 70 + (y - horizon) as u8 / 4;
            shade([g, g, g + 5], n)
        }
    });
    for (obj, b) in boxes {
        for y in b.y1 + 10..b.y2 - 10 {
            for x in b.x1 + 10..b.x2 - 10 {
                img.put_pixel(x, y, shade(obj.colour, noise(seed ^ 0xABCD, x, y)));
            }
        }
    }
    img
}

fn numbered(items: &[&str]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Repetition-dependent phrasing of the object inventory. The third
/// variant adds an extra item, so it has the most unique entries.
fn video_reply(inventory: &[&str], repetition: usize) -> String {
    match repetition % 3 {
        0 => inventory[..inventory.len() - 1].join(", "),
        1 => inventory
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if i % 2 == 0 {
                    format!("a {s}")
                } else {
                    format!("the {s}")
                }
            })
            .collect::<Vec<_>>()
            .join(", "),
        _ => {
            let mut v: Vec<String> = inventory.iter().rev().map(|s| s.to_string()).collect();
            v.push("sky".into());
            format!("{}.", v.join(", "))
        }
    }
}

/// Answers the pipeline's requests for one scenario and records them.
struct Author {
    scenario: &'static Scenario,
    frames: HashMap<String, usize>,
    snippets: HashMap<String, (&'static str, String)>,
    recorded: Mutex<BTreeMap<String, (FixtureResponse, String)>>,
}

impl Author {
    fn record(&self, request: &dyn CanonicalRequest, response: FixtureResponse, note: String) {
        let key = request.cache_key().hex();
        self.recorded
            .lock()
            .expect("recorder lock")
            .insert(key, (response, note));
    }

    fn reply(&self, r: &ChatRequest) -> Result<(String, String), GatewayError> {
        let s = self.scenario;
        let text = match (r.system_prompt.as_deref(), r.user_prompt.as_str()) {
            (None, prompts::DESCRIBE_FRAME) => {
                let digest = r
                    .images
                    .first()
                    .map(ImagePayload::digest_hex)
                    .unwrap_or_default();
                let position = *self
                    .frames
                    .get(&digest)
                    .ok_or_else(|| GatewayError::InvalidRequest("unknown frame".into()))?;
                let d = s.frame_descriptions[position % s.frame_descriptions.len()];
                return Ok((d.to_string(), format!("describe frame position {position}")));
            }
            (None, prompts::VIDEO_OBJECTS) => {
                return Ok((
                    video_reply(s.inventory, r.sample_index as usize),
                    format!("video query {}", r.sample_index),
                ))
            }
            (Some(prompts::RANK_SYSTEM), _) => (numbered(s.ranked), "rank"),
            (Some(prompts::SELECT_SYSTEM), _) => (s.inventory.join(", "), "select best list"),
            (Some(prompts::CROSS_REFERENCE_SYSTEM), _) => match s.critical {
                Some(items) => (numbered(items), "cross reference"),
                None => ("NONE".to_string(), "cross reference"),
            },
            (Some(prompts::ANOMALY_SYSTEM), _) => {
                if s.anomalies.is_empty() {
                    ("NONE".to_string(), "anomalies")
                } else {
                    let items: Vec<String> = s
                        .anomalies
                        .iter()
                        .map(|(l, d)| format!("{l}: {d}"))
                        .collect();
                    let items: Vec<&str> = items.iter().map(String::as_str).collect();
                    (numbered(&items), "anomalies")
                }
            }
            _ => return Err(GatewayError::InvalidRequest("unexpected prompt".into())),
        };
        Ok((text.0, text.1.to_string()))
    }
}

impl Backend for Author {
    fn name(&self) -> &str {
        "demo-author"
    }

    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let (text, note) = self.reply(request)?;
        self.record(
            request,
            FixtureResponse::Text(text.clone()),
            format!("{}: {note}", self.scenario.id),
        );
        Ok(text)
    }

    fn embed(&self, request: &EmbedRequest) -> Result<Vec<f64>, GatewayError> {
        Ok(hashed_embedding(0, MOCK_EMBEDDING_DIMENSION, &request.text))
    }

    fn image_text_similarity(
        &self,
        request: &ImageTextSimRequest,
    ) -> Result<Vec<f64>, GatewayError> {
        let (object, row) = self
            .snippets
            .get(&request.image.digest_hex())
            .ok_or_else(|| GatewayError::InvalidRequest("unknown snippet".into()))?;
        let scores: Vec<f64> = request
            .labels
            .iter()
            .map(|label| {
                let u = unit(&[row.as_bytes(), label.as_bytes()]);
                let s = if label.to_lowercase().contains(object) {
                    0.78 + 0.2 * u
                } else {
                    0.05 + 0.35 * u
                };
                (s * 1000.0).round() / 1000.0
            })
            .collect();
        self.record(
            request,
            FixtureResponse::Scores(scores.clone()),
            format!("snippet {row}"),
        );
        Ok(scores)
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), DemoError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| DemoError::Write {
            path: parent.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    std::fs::write(path, contents).map_err(|e| DemoError::Write {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Configuration written to `config.toml`, with paths relative to `root`.
pub fn demo_config() -> PipelineConfig {
    PipelineConfig {
        manifest: "manifest.json".into(),
        boxes: "boxes.ndjson".into(),
        ground_truth: Some("ground_truth.csv".into()),
        cache_dir: Some("cache".into()),
        out_dir: "runs".into(),
        fixtures: Some("fixtures".into()),
        mode: Mode::Mock,
        n_frames: N_FRAMES,
        ..PipelineConfig::default()
    }
}

/// Writes frames, manifest, boxes, ground truth, mock fixtures and a
/// config file under `root`. Output is identical on every call.
pub fn generate(root: &Path) -> Result<DemoDataset, DemoError> {
    let manifest_path = root.join("manifest.json");
    let boxes_path = root.join("boxes.ndjson");
    let gt_path = root.join("ground_truth.csv");
    let fixtures_dir = root.join("fixtures");
    let mut manifest = Vec::new();
    let mut box_lines = String::new();
    let mut gt = csv::Writer::from_writer(Vec::new());
    gt.write_record(["video_id", "hazard_label", "hazard_description"])
        .expect("in-memory csv");
    let mut authors = Vec::new();

    for (video_no, s) in SCENARIOS.iter().enumerate() {
        let scene = VideoScene {
            video_id: s.id.to_string(),
            frame_count: FRAME_COUNT,
            fps: 30.0,
            frame_source: root.join("frames").join(s.id),
        };
        manifest.push(json!({
            "video_id": s.id,
            "frame_count": FRAME_COUNT,
            "fps": 30,
            "frame_source": format!("frames/{}", s.id),
        }));
        gt.write_record([s.id, s.gt.0, s.gt.1])
            .expect("in-memory csv");
        let plan = plan_sampling(&scene, N_FRAMES).expect("demo plan is valid");
        let mut author = Author {
            scenario: s,
            frames: HashMap::new(),
            snippets: HashMap::new(),
            recorded: Mutex::new(BTreeMap::new()),
        };
        for (position, &frame_index) in plan.indices.iter().enumerate() {
            let placed: Vec<(&BoxedObject, BoundingBox)> = s
                .objects
                .iter()
                .enumerate()
                .filter(|(_, o)| o.frames.contains(&position))
                .map(|(slot, o)| (o, object_box(s, slot, o, frame_index, position)))
                .collect();
            let img = draw_frame(s, video_no, frame_index, &placed);
            let mut boxes: Vec<(&'static str, BoundingBox)> =
                placed.iter().map(|(o, b)| (o.name, b.clone())).collect();
            // Annotations the size filter removes: a small one and one
            // exactly at the area bound.
            if position == 0 {
                boxes.push((
                    "small",
                    BoundingBox {
                        track_id: "90".into(),
                        x1: 560,
                        y1: 10,
                        x2: 620,
                        y2: 60,
                        ..boxes_base(s, frame_index)
                    },
                ));
            }
            if position == 1 {
                boxes.push((
                    "edge",
                    BoundingBox {
                        track_id: "91".into(),
                        x1: 5,
                        y1: 150,
                        x2: 180,
                        y2: 350,
                        ..boxes_base(s, frame_index)
                    },
                ));
            }
            for (name, b) in &boxes {
                box_lines.push_str(&serde_json::to_string(b).expect("box serializes"));
                box_lines.push('\n');
                let snippet = extract_snippet(&img, b).expect("demo boxes lie inside the frame");
                author.snippets.insert(
                    ImagePayload::new(snippet.pixels).digest_hex(),
                    (name, b.snippet_id()),
                );
            }
            author
                .frames
                .insert(ImagePayload::new(img.clone()).digest_hex(), position);
            let path = scene.frame_source.join(format!("{frame_index:05}.png"));
            let mut png = Vec::new();
            img.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
                .expect("png encoding to memory");
            write(&path, png)?;
        }
        authors.push(author);
    }
    write(
        &manifest_path,
        format!(
            "{}\n",
            serde_json::to_string_pretty(&manifest).expect("json")
        ),
    )?;
    write(&boxes_path, box_lines)?;
    write(&gt_path, gt.into_inner().expect("in-memory csv"))?;

    let config = demo_config();
    let config_path = root.join("config.toml");
    write(
        &config_path,
        format!(
            "# Demo dataset: five synthetic clips served by mock fixtures.\n{}",
            config.to_toml()
        ),
    )?;

    // Author fixtures by running the pipeline against each scripted backend,
    // once per mode that consults the backend differently.
    std::fs::create_dir_all(&fixtures_dir).map_err(|e| DemoError::Write {
        path: fixtures_dir.clone(),
        message: e.to_string(),
    })?;
    let scratch = tempfile::tempdir().map_err(|e| DemoError::Write {
        path: std::env::temp_dir(),
        message: e.to_string(),
    })?;
    let mut resolved = config.clone();
    resolved.resolve_paths(root);
    resolved.cache_dir = None;
    resolved.out_dir = scratch.path().to_path_buf();
    let mut video_ids = Vec::new();
    for author in authors {
        let id = author.scenario.id.to_string();
        let author = Arc::new(author);
        let gateway = Gateway::new(author.clone(), None, GatewayOptions::default());
        for mode in [Mode::Mock, Mode::OfflineFallback] {
            let cfg = PipelineConfig {
                mode,
                ..resolved.clone()
            };
            let options = RunOptions {
                run_id: Some(format!("{id}-{mode}")),
                videos: Some(vec![id.clone()]),
            };
            run_pipeline(&cfg, &gateway, &options)?;
        }
        let mut file = FixtureFile::default();
        let recorded = std::mem::take(&mut *author.recorded.lock().expect("recorder lock"));
        for (key, (response, note)) in recorded {
            file.fixtures.push(crate::gateway::Fixture {
                key: Some(key),
                request: None,
                note: Some(note),
                response,
            });
        }
        let path = fixtures_dir.join(format!("{id}.json"));
        file.save(&path).map_err(|e| DemoError::Write {
            path: path.clone(),
            message: e.to_string(),
        })?;
        video_ids.push(id);
    }

    Ok(DemoDataset {
        root: root.to_path_buf(),
        config: config_path,
        manifest: manifest_path,
        boxes: boxes_path,
        ground_truth: gt_path,
        fixtures: fixtures_dir,
        video_ids,
    })
}

fn boxes_base(s: &Scenario, frame_index: usize) -> BoundingBox {
    BoundingBox {
        video_id: s.id.to_string(),
        frame_index,
        track_id: String::new(),
        x1: 0,
        y1: 0,
        x2: 1,
        y2: 1,
    }
}
