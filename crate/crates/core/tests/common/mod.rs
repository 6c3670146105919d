#![allow(dead_code)]

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treecount_core::simulate::validity_check;
use treecount_core::{CountingConfig, CountingRange, ImageGeometry, NoiseSpec, SceneSpec, TreeSpec};

pub const WIDTH: u32 = 1920;
pub const HEIGHT: u32 = 1080;
pub const FPS: f64 = 30.0;

/// Draws one candidate scene; may fall outside the validity regime.
pub fn candidate(rng: &mut ChaCha8Rng) -> Option<(SceneSpec, CountingConfig)> {
    let focal_px = rng.random_range(800.0..1400.0);
    let depth = rng.random_range(3.0..8.0);
    let trunk = rng.random_range(0.4..1.0);
    let speed = rng.random_range(2.0..8.0);
    let scale = focal_px / depth;
    let box_w = scale * trunk;
    let step_px = scale * speed / FPS;
    let hi = (box_w / 3.0).min(6.0 * step_px);
    if step_px > hi {
        return None;
    }
    let band_px = rng.random_range(step_px..=hi);
    let range = CountingRange::new(rng.random_range(0.35..0.65), band_px / WIDTH as f64).ok()?;

    let count = rng.random_range(5..=50);
    let mut pos = rng.random_range(1.0..20.0);
    let mut trees = Vec::with_capacity(count);
    for _ in 0..count {
        trees.push(TreeSpec {
            position_m: pos,
            trunk_width_m: trunk,
            trunk_height_m: rng.random_range(1.5..4.0),
        });
        pos += rng.random_range(2.0..15.0);
    }
    let last = trees.last().unwrap().position_m;
    let scene = SceneSpec {
        trees,
        camera_speed_mps: speed,
        lateral_depth_m: depth,
        focal_px,
        geometry: ImageGeometry::new(WIDTH, HEIGHT, FPS).unwrap(),
        duration_s: last / speed + 2.0,
        noise: NoiseSpec::default(),
        start: treecount_core::GeoPoint { lat: rng.random_range(-60.0..60.0), lon: rng.random_range(-179.0..179.0) },
        start_time: 1_640_995_200.0,
    };
    let config = CountingConfig { range, ..CountingConfig::default() };
    Some((scene, config))
}

/// `n` scenes inside the validity regime, deterministic in `seed`.
pub fn valid_scenes(seed: u64, n: usize) -> Vec<(SceneSpec, CountingConfig)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut tries = 0;
    while out.len() < n {
        tries += 1;
        assert!(tries < 200 * n, "sampler rejected too many scenes");
        if let Some((scene, config)) = candidate(&mut rng) {
            if validity_check(&scene, &config).is_valid() {
                out.push((scene, config));
            }
        }
    }
    out
}
