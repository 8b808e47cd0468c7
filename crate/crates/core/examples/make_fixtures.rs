//! Regenerates the model fixtures under `fixtures/`.
//!
//! ```text
//! cargo run -p qubopress-core --example make_fixtures -- fixtures
//! ```
//!
//! Raw-weight fixtures are LeNet-5's two convolutions and a two-layer toy
//! model; the larger architectures ship as group statistics only.

use std::path::Path;

use qubopress::descriptor::write_f32_blob;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

/// Filters with a spread of scales so that pruning choices differ.
fn synthetic_weights(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Vec<f32> {
    let per_filter = shape[1] * shape[2] * shape[3];
    let mut out = Vec::with_capacity(shape[0] * per_filter);
    for _ in 0..shape[0] {
        let scale: f32 = rng.random_range(0.02..0.5);
        out.extend((0..per_filter).map(|_| scale * rng.random_range(-1.0f32..1.0)));
    }
    out
}

fn raw_model(dir: &Path, name: &str, shapes: &[[usize; 4]], seed: u64) {
    let dir = dir.join(name);
    std::fs::create_dir_all(&dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for (id, &shape) in shapes.iter().enumerate() {
        let file = format!("layer{id}.bin");
        write_f32_blob(&dir.join(&file), &synthetic_weights(&mut rng, shape)).unwrap();
        layers.push(json!({ "id": id, "shape": shape, "weights": file }));
    }
    write_json(
        &dir.join("manifest.json"),
        &json!({ "b_max": 8, "layers": layers }),
    );
}

/// Filter-granularity statistics for `(out, in, k)` convolutions.
fn stats_model(dir: &Path, name: &str, convs: &[(usize, usize, usize)], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers: Vec<Value> = convs
        .iter()
        .enumerate()
        .map(|(id, &(out, inp, k))| {
            let count = (inp * k * k) as u64;
            let groups: Vec<Value> = (0..out)
                .map(|_| {
                    let max_abs: f64 = rng.random_range(0.05..1.0);
                    let mean = max_abs * rng.random_range(0.1..0.5);
                    json!({ "count": count, "l1_norm": mean * count as f64, "max_abs": max_abs })
                })
                .collect();
            json!({ "id": id, "groups": groups })
        })
        .collect();
    write_json(
        &dir.join(format!("{name}.json")),
        &json!({ "b_max": 8, "granularity": "filter", "layers": layers }),
    );
}

fn write_json(path: &Path, value: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap() + "\n").unwrap();
}

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    let dir = Path::new(&dir);
    std::fs::create_dir_all(dir).unwrap();

    raw_model(dir, "lenet5", &[[6, 1, 5, 5], [16, 6, 5, 5]], 5);
    raw_model(dir, "tiny", &[[4, 2, 3, 3], [6, 4, 3, 3]], 11);

    stats_model(
        dir,
        "gtsr_cnn",
        &[(32, 3, 3), (64, 32, 3), (128, 64, 3)],
        21,
    );
    let resnet9 = [
        (64, 3, 3),
        (128, 64, 3),
        (128, 128, 3),
        (128, 128, 3),
        (256, 128, 3),
        (512, 256, 3),
        (512, 512, 3),
        (512, 512, 3),
    ];
    stats_model(dir, "resnet9", &resnet9, 9);
    let mut vgg16 = vec![(64, 3, 3), (64, 64, 3), (128, 64, 3), (128, 128, 3)];
    vgg16.extend([(256, 128, 3), (256, 256, 3), (256, 256, 3)]);
    vgg16.extend([(512, 256, 3)]);
    vgg16.extend([(512, 512, 3); 5]);
    stats_model(dir, "vgg16", &vgg16, 16);
}
