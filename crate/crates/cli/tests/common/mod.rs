#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use treecount_core::simulate::evenly_spaced;
use treecount_core::{GeoPoint, ImageGeometry, NoiseSpec, SceneSpec};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_treecount"))
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Slow camera, 0.8 m trunks at 5 m depth and a 2% band: inside the
/// exact-counting regime for the default IoU threshold and window.
pub fn row_scene(trees: usize, first_m: f64, spacing_m: f64) -> SceneSpec {
    let speed = 5.0;
    SceneSpec {
        trees: evenly_spaced(trees, first_m, spacing_m, 0.8, 2.5),
        camera_speed_mps: speed,
        lateral_depth_m: 5.0,
        focal_px: 1000.0,
        geometry: ImageGeometry::new(1920, 1080, 30.0).unwrap(),
        duration_s: (first_m + spacing_m * trees as f64) / speed,
        noise: NoiseSpec::default(),
        start: GeoPoint { lat: 17.385, lon: 78.4867 },
        start_time: 1_640_995_200.0,
    }
}

pub const BAND_CONFIG: &str = "[counting]\nband_width = 0.02\n";

/// Writes `scene.toml` and `config.toml` into `dir`.
pub fn write_inputs(dir: &Path, scene: &SceneSpec) -> (PathBuf, PathBuf) {
    let scene_path = dir.join("scene.toml");
    let config_path = dir.join("config.toml");
    std::fs::write(&scene_path, scene.to_toml()).unwrap();
    std::fs::write(&config_path, BAND_CONFIG).unwrap();
    (scene_path, config_path)
}
