#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

/// A detection log of `cameras × frames_per_camera` frames. Each camera
/// follows three slowly drifting animals plus occasional clutter, with a
/// long pause every few frames so the time window matters.
pub fn detection_log(seed: u64, cameras: usize, frames_per_camera: usize) -> Value {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    for cam in 0..cameras {
        let mut tracks: Vec<[f64; 4]> = (0..3)
            .map(|_| {
                let w = rng.gen_range(0.1..0.3);
                let h = rng.gen_range(0.1..0.3);
                [rng.gen_range(0.0..1.0 - w), rng.gen_range(0.0..1.0 - h), w, h]
            })
            .collect();
        let mut t = 1_600_000_000i64 + 86_400 * cam as i64;
        for f in 0..frames_per_camera {
            t += if f % 7 == 6 { rng.gen_range(121..400) } else { rng.gen_range(1..60) };
            let mut dets = Vec::new();
            for b in tracks.iter_mut() {
                let step = rng.gen_range(0.0..0.08);
                b[0] = (b[0] + rng.gen_range(-step..=step)).clamp(0.0, 1.0 - b[2]);
                b[1] = (b[1] + rng.gen_range(-step..=step)).clamp(0.0, 1.0 - b[3]);
                if rng.gen_bool(0.85) {
                    dets.push(json!({"conf": rng.gen_range(0.2..1.0), "bbox": *b}));
                }
            }
            if rng.gen_bool(0.3) {
                let w = rng.gen_range(0.02..0.2);
                let h = rng.gen_range(0.02..0.2);
                let bbox = [rng.gen_range(0.0..1.0 - w), rng.gen_range(0.0..1.0 - h), w, h];
                dets.push(json!({"conf": rng.gen_range(0.0..1.0), "bbox": bbox}));
            }
            images.push(json!({
                "file": format!("cam{cam:02}/img{f:04}.jpg"),
                "camera_id": format!("cam{cam:02}"),
                "timestamp": t,
                "detections": dets,
            }));
        }
    }
    json!({ "images": images })
}

pub fn write_log(path: &Path, log: &Value) {
    std::fs::write(path, serde_json::to_vec_pretty(log).unwrap()).unwrap();
}

pub fn trapforge(args: &[&str]) -> Output {
    trapforge_env(args, &[])
}

pub fn trapforge_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_trapforge"));
    cmd.args(args).env_remove("TRAPFORGE_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn trapforge")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
