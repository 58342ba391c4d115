#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tower::ServiceExt;

pub const PHASES: [&str; 7] = [
    "Preparation",
    "CalotTriangleDissection",
    "ClippingCutting",
    "GallbladderDissection",
    "GallbladderPackaging",
    "CleaningCoagulation",
    "GallbladderRetraction",
];

pub const TOOLS: [&str; 7] = [
    "Grasper",
    "Bipolar",
    "Hook",
    "Scissors",
    "Clipper",
    "Irrigator",
    "SpecimenBag",
];

/// Writes `videos` synthetic surgeries in the Cholec80 file layout: phase rows
/// at 25 fps and tool rows every 25 frames.
pub fn write_cholec80_fixture(root: &Path, videos: u32, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase_dir = root.join("phase_annotations");
    let tool_dir = root.join("tool_annotations");
    fs::create_dir_all(&phase_dir).unwrap();
    fs::create_dir_all(&tool_dir).unwrap();
    for v in 1..=videos {
        let mut seq: Vec<usize> = (0..7).collect();
        if rng.random_bool(0.15) {
            seq.remove(0);
        }
        if rng.random_bool(0.2) {
            seq.push(5);
        }
        if rng.random_bool(0.1) {
            seq.insert(3, 1);
        }
        let mut seconds = Vec::new();
        for &p in &seq {
            for _ in 0..rng.random_range(2..8) {
                seconds.push(p);
            }
        }
        let mut phase = String::from("Frame\tPhase\n");
        let mut tool = format!("Frame\t{}\n", TOOLS.join("\t"));
        for (sec, &p) in seconds.iter().enumerate() {
            for k in 0..25 {
                let _ = writeln!(phase, "{}\t{}", sec * 25 + k, PHASES[p]);
            }
            let mut row = format!("{}", sec * 25);
            for (i, _) in TOOLS.iter().enumerate() {
                let likely = (i + 1) % 7 == p || i == 0;
                let on = rng.random_bool(if likely { 0.6 } else { 0.08 });
                let _ = write!(row, "\t{}", u8::from(on));
            }
            tool.push_str(&row);
            tool.push('\n');
        }
        fs::write(phase_dir.join(format!("video{v:02}-phase.txt")), phase).unwrap();
        fs::write(tool_dir.join(format!("video{v:02}-tool.txt")), tool).unwrap();
    }
}

pub async fn call(app: &Router, method: Method, uri: &str, token: Option<&str>, body: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("x-session-token", t);
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_owned()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}
