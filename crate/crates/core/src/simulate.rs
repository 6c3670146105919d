//! Synthetic roadside scenes with known ground truth.
//!
//! A pinhole camera moves along a straight road at constant speed, looking
//! sideways at a row of tree trunks at a fixed lateral distance. Every frame
//! projects each trunk to a pixel box; the output is a detection stream and a
//! GPX track in the regular ingest formats. Ground truth is the first frame
//! at which each trunk's box centre lies in the counting band, found by
//! scanning every frame. Noise is applied after ground truth is fixed.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counting::{in_counting_range, iou, CountReport, CountingConfig, CountingRange, TreeEvent};
use crate::geo::{interpolate, GeoPoint, METERS_PER_DEG_LAT};
use crate::ingest::{parse_gpx, BBox, DetectionStream, FrameDetections, GpxError, ImageGeometry, TrackLog};

/// Confidence attached to every true trunk detection.
pub const TRUE_DETECTION_CONFIDENCE: f64 = 0.9;

/// 2022-01-01T00:00:00Z
pub const DEFAULT_START_TIME: f64 = 1_640_995_200.0;

#[derive(Debug, Error, PartialEq)]
pub enum SimulateError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("synthetic track rejected: {0}")]
    Track(#[from] GpxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    /// Distance along the road from the camera's start position.
    pub position_m: f64,
    pub trunk_width_m: f64,
    pub trunk_height_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Half-width of the uniform horizontal jitter added to each box.
    pub center_jitter_px: f64,
    pub dropout_prob: f64,
    /// Expected number of spurious boxes per frame.
    pub false_positive_rate: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            center_jitter_px: 0.0,
            dropout_prob: 0.0,
            false_positive_rate: 0.0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn is_clean(&self) -> bool {
        self.center_jitter_px == 0.0 && self.dropout_prob == 0.0 && self.false_positive_rate == 0.0
    }
}

fn default_start() -> GeoPoint {
    GeoPoint {
        lat: 17.385,
        lon: 78.4867,
    }
}

fn default_start_time() -> f64 {
    DEFAULT_START_TIME
}

/// Scene description. The camera starts at `start` at `start_time` (Unix
/// seconds) and drives due north.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub trees: Vec<TreeSpec>,
    pub camera_speed_mps: f64,
    pub lateral_depth_m: f64,
    pub focal_px: f64,
    pub geometry: ImageGeometry,
    pub duration_s: f64,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default = "default_start")]
    pub start: GeoPoint,
    #[serde(default = "default_start_time")]
    pub start_time: f64,
}

/// `count` identical trunks starting at `first_m`, `spacing_m` apart.
pub fn evenly_spaced(count: usize, first_m: f64, spacing_m: f64, trunk_width_m: f64, trunk_height_m: f64) -> Vec<TreeSpec> {
    (0..count)
        .map(|i| TreeSpec {
            position_m: first_m + i as f64 * spacing_m,
            trunk_width_m,
            trunk_height_m,
        })
        .collect()
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self, SimulateError> {
        let scene: SceneSpec = toml::from_str(text).map_err(|e| SimulateError::InvalidScene(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    /// Road distance over which a trunk can still be visible beyond the
    /// camera's final position.
    pub fn margin_m(&self) -> f64 {
        self.geometry.width() / 2.0 * self.lateral_depth_m / self.focal_px
    }

    pub fn validate(&self) -> Result<(), SimulateError> {
        let bad = |m: String| Err(SimulateError::InvalidScene(m));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.camera_speed_mps) || self.camera_speed_mps >= 1000.0 {
            return bad(format!("camera speed {} m/s", self.camera_speed_mps));
        }
        if !positive(self.lateral_depth_m) {
            return bad(format!("lateral depth {} m", self.lateral_depth_m));
        }
        if !positive(self.focal_px) {
            return bad(format!("focal length {} px", self.focal_px));
        }
        if !positive(self.duration_s) {
            return bad(format!("duration {} s", self.duration_s));
        }
        if ImageGeometry::new(self.geometry.width_px, self.geometry.height_px, self.geometry.fps).is_err() {
            return bad(format!("image geometry {:?}", self.geometry));
        }
        if GeoPoint::new(self.start.lat, self.start.lon).is_err() || !self.start_time.is_finite() {
            return bad("start position or time".into());
        }
        let end_lat = self.start.lat + self.camera_speed_mps * self.duration_s / METERS_PER_DEG_LAT;
        if end_lat > 90.0 {
            return bad("route runs past the pole".into());
        }
        let n = &self.noise;
        if !(n.center_jitter_px.is_finite() && n.center_jitter_px >= 0.0) {
            return bad(format!("jitter {}", n.center_jitter_px));
        }
        if !(0.0..1.0).contains(&n.dropout_prob) {
            return bad(format!("dropout probability {}", n.dropout_prob));
        }
        if !(n.false_positive_rate.is_finite() && n.false_positive_rate >= 0.0) {
            return bad(format!("false positive rate {}", n.false_positive_rate));
        }
        let limit = self.camera_speed_mps * self.duration_s + self.margin_m();
        for (i, t) in self.trees.iter().enumerate() {
            if !positive(t.trunk_width_m) || !positive(t.trunk_height_m) {
                return bad(format!("tree {i}: trunk size {}x{}", t.trunk_width_m, t.trunk_height_m));
            }
            if !(t.position_m >= 0.0 && t.position_m <= limit) {
                return bad(format!("tree {i}: position {} m outside [0, {limit}]", t.position_m));
            }
        }
        Ok(())
    }

    pub fn frame_count(&self) -> u64 {
        (self.duration_s * self.geometry.fps + 1e-9).floor() as u64 + 1
    }

    pub fn camera_position_m(&self, frame_index: u64) -> f64 {
        self.camera_speed_mps * frame_index as f64 / self.geometry.fps
    }

    /// Horizontal image motion of every trunk between consecutive frames.
    pub fn displacement_px(&self) -> f64 {
        self.focal_px * (self.camera_speed_mps / self.geometry.fps) / self.lateral_depth_m
    }

    fn project_raw(&self, tree: &TreeSpec, frame_index: u64) -> BBox {
        let s = self.camera_position_m(frame_index);
        let scale = self.focal_px / self.lateral_depth_m;
        let w = scale * tree.trunk_width_m;
        let h = scale * tree.trunk_height_m;
        let cx = self.geometry.width() / 2.0 + scale * (tree.position_m - s);
        let cy = self.geometry.height() / 2.0;
        BBox::new(cx - w / 2.0, cy - h / 2.0, w, h, TRUE_DETECTION_CONFIDENCE)
    }
}

/// Noiseless box of `tree` at `frame_index`, clamped to the image; `None`
/// when the trunk is out of view.
pub fn project_tree(scene: &SceneSpec, tree: &TreeSpec, frame_index: u64) -> Option<BBox> {
    scene.project_raw(tree, frame_index).clamped(&scene.geometry)
}

/// First frame at which a tree's box centre lies in the counting band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthCrossing {
    pub tree_index: usize,
    pub frame_index: u64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub stream: DetectionStream,
    pub track: TrackLog,
    pub gpx: String,
    /// Sorted by frame, then tree index.
    pub ground_truth: Vec<GroundTruthCrossing>,
    /// Injected spurious boxes whose centre fell inside the band.
    pub false_positives_in_band: usize,
}

impl SimOutput {
    /// Ground truth in the count-report format, geo-tagged like the counter
    /// does it (frame 0 at the first trackpoint).
    pub fn truth_report(&self) -> CountReport {
        let geometry = self.stream.geometry.expect("simulated streams carry a header");
        let t0 = self.track.start_time();
        let events: Vec<TreeEvent> = self
            .ground_truth
            .iter()
            .map(|g| {
                let t = t0 + g.frame_index as f64 / geometry.fps;
                TreeEvent {
                    frame_index: g.frame_index,
                    bbox: g.bbox,
                    position: interpolate(&self.track, t),
                    t,
                }
            })
            .collect();
        let mut seen = 0usize;
        let per_frame_cumulative = self
            .stream
            .frames
            .iter()
            .map(|f| {
                while seen < events.len() && events[seen].frame_index <= f.frame_index {
                    seen += 1;
                }
                (f.frame_index, seen as u64)
            })
            .collect();
        CountReport {
            total_count: events.len() as u64,
            events,
            per_frame_cumulative,
        }
    }
}

/// In-band noiseless boxes of every tree, by exhaustive frame scan.
fn in_band_boxes(scene: &SceneSpec, range: &CountingRange) -> Vec<Vec<(u64, BBox)>> {
    let mut per_tree = vec![Vec::new(); scene.trees.len()];
    for k in 0..scene.frame_count() {
        for (i, tree) in scene.trees.iter().enumerate() {
            if let Some(b) = project_tree(scene, tree, k) {
                if in_counting_range(&b, range, &scene.geometry) {
                    per_tree[i].push((k, b));
                }
            }
        }
    }
    per_tree
}

pub fn generate(scene: &SceneSpec, range: &CountingRange) -> Result<SimOutput, SimulateError> {
    scene.validate()?;
    range
        .validate()
        .map_err(|e| SimulateError::InvalidScene(e.to_string()))?;

    let mut ground_truth: Vec<GroundTruthCrossing> = in_band_boxes(scene, range)
        .into_iter()
        .enumerate()
        .filter_map(|(tree_index, boxes)| {
            boxes.first().map(|&(frame_index, bbox)| GroundTruthCrossing {
                tree_index,
                frame_index,
                bbox,
            })
        })
        .collect();
    ground_truth.sort_by_key(|g| (g.frame_index, g.tree_index));

    let geometry = scene.geometry;
    let noise = scene.noise;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut false_positives_in_band = 0;
    let mut frames = Vec::with_capacity(scene.frame_count() as usize);
    for k in 0..scene.frame_count() {
        let mut boxes = Vec::new();
        for tree in &scene.trees {
            let Some(mut b) = project_tree(scene, tree, k) else {
                continue;
            };
            if noise.dropout_prob > 0.0 && rng.random_bool(noise.dropout_prob) {
                continue;
            }
            if noise.center_jitter_px > 0.0 {
                let j = noise.center_jitter_px;
                let dx = rng.random_range(-j..=j);
                match BBox::new(b.x + dx, b.y, b.w, b.h, b.confidence).clamped(&geometry) {
                    Some(moved) => b = moved,
                    None => continue,
                }
            }
            boxes.push(b);
        }
        if noise.false_positive_rate > 0.0 {
            let whole = noise.false_positive_rate.floor();
            let extra = noise.false_positive_rate - whole;
            let n = whole as usize + usize::from(extra > 0.0 && rng.random_bool(extra));
            for _ in 0..n {
                let w = rng.random_range(20.0..200.0f64).min(geometry.width() / 2.0);
                let h = rng.random_range(40.0..400.0f64).min(geometry.height() / 2.0);
                let x = rng.random_range(0.0..geometry.width() - w);
                let y = rng.random_range(0.0..geometry.height() - h);
                let conf = rng.random_range(0.3..1.0);
                let b = BBox::new(x, y, w, h, conf);
                if in_counting_range(&b, range, &geometry) {
                    false_positives_in_band += 1;
                }
                boxes.push(b);
            }
        }
        frames.push(FrameDetections { frame_index: k, boxes });
    }

    let gpx = write_track_gpx(scene);
    let track = parse_gpx(&gpx)?;
    Ok(SimOutput {
        stream: DetectionStream {
            geometry: Some(geometry),
            frames,
        },
        track,
        gpx,
        ground_truth,
        false_positives_in_band,
    })
}

fn format_time(t: f64) -> String {
    let millis = (t * 1000.0).round() as i64;
    let dt = chrono::DateTime::from_timestamp(millis.div_euclid(1000), (millis.rem_euclid(1000) * 1_000_000) as u32)
        .expect("timestamp in range");
    dt.to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Straight northbound track with one fix per second plus a final fix at
/// the end of the scene.
fn write_track_gpx(scene: &SceneSpec) -> String {
    let mut offsets: Vec<f64> = (0..=scene.duration_s.floor() as u64).map(|s| s as f64).collect();
    if scene.duration_s - scene.duration_s.floor() > 1e-3 {
        offsets.push(scene.duration_s);
    }
    let mut out = String::from(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <gpx version=\"1.1\" creator=\"treecount-simulate\" xmlns=\"http://www.topografix.com/GPX/1/1\">\n\
         \x20 <trk>\n    <name>synthetic</name>\n    <trkseg>\n",
    );
    for dt in offsets {
        let lat = scene.start.lat + scene.camera_speed_mps * dt / METERS_PER_DEG_LAT;
        out.push_str(&format!(
            "      <trkpt lat=\"{lat}\" lon=\"{}\"><time>{}</time></trkpt>\n",
            scene.start.lon,
            format_time(scene.start_time + dt)
        ));
    }
    out.push_str("    </trkseg>\n  </trk>\n</gpx>\n");
    out
}

/// Outcome of checking a scene against the conditions under which the
/// counter reproduces ground truth exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidityReport {
    pub displacement_px: f64,
    pub band_width_px: f64,
    /// Trunks move at most one band width per frame.
    pub displacement_ok: bool,
    /// While a trunk is in the band its boxes overlap its first in-band box
    /// (and the previous frame's box) at or above the IoU threshold, and it
    /// leaves the band before the registry entry expires.
    pub self_iou_ok: bool,
    /// No trunk's in-band box matches another trunk's registered box while
    /// that entry is alive.
    pub separation_ok: bool,
    /// True detections pass the confidence filter.
    pub confidence_ok: bool,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.displacement_ok && self.self_iou_ok && self.separation_ok && self.confidence_ok
    }
}

pub fn validity_check(scene: &SceneSpec, config: &CountingConfig) -> ValidityReport {
    let displacement_px = scene.displacement_px();
    let band_width_px = config.range.width_px(&scene.geometry);
    let window = u64::from(config.next_frames_to_consider);
    let th = config.iou_threshold;
    let boxes = in_band_boxes(scene, &config.range);

    let self_iou_ok = boxes.iter().all(|tb| {
        let Some(&(k0, first)) = tb.first() else {
            return true;
        };
        tb.iter().all(|&(k, b)| k - k0 < window && iou(&first, &b) >= th)
            && tb.windows(2).all(|w| iou(&w[0].1, &w[1].1) >= th)
    });

    let separation_ok = boxes.iter().enumerate().all(|(a, ta)| {
        let Some(&(ka, first)) = ta.first() else {
            return true;
        };
        boxes.iter().enumerate().filter(|&(b, _)| b != a).all(|(_, tb)| {
            tb.iter()
                .filter(|&&(k, _)| k >= ka && k - ka < window)
                .all(|(_, b)| iou(&first, b) < th)
        })
    });

    ValidityReport {
        displacement_px,
        band_width_px,
        displacement_ok: displacement_px <= band_width_px,
        self_iou_ok,
        separation_ok,
        confidence_ok: TRUE_DETECTION_CONFIDENCE >= config.min_confidence,
    }
}
