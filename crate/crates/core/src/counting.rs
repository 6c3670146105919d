//! Counting-range crossing with IoU-based double-count suppression.
//!
//! A tree is counted when the centre of one of its boxes falls inside a
//! full-height vertical band of the image. Every counted box is kept in a
//! registry for a fixed number of frames; a new in-band box whose IoU with
//! any registered box reaches the threshold is treated as already counted.
//! Entries age by the frame-index delta between records, so skipped frames
//! still count against the window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{interpolate, FrameClock, GeoPoint};
use crate::ingest::{BBox, FrameDetections, ImageGeometry, TrackLog};

#[derive(Debug, Error, PartialEq)]
pub enum CountingError {
    #[error("frame {frame} does not follow frame {previous}")]
    NonMonotoneFrame { frame: u64, previous: u64 },
    #[error("invalid counting configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed count report: {0}")]
    MalformedReport(String),
}

/// Vertical band spanning the full image height, positioned by fractions of
/// the image width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountingRange {
    pub center_fraction: f64,
    pub width_fraction: f64,
}

impl CountingRange {
    pub fn new(center_fraction: f64, width_fraction: f64) -> Result<Self, CountingError> {
        let range = Self {
            center_fraction,
            width_fraction,
        };
        range.validate()?;
        Ok(range)
    }

    pub fn validate(&self) -> Result<(), CountingError> {
        let (c, w) = (self.center_fraction, self.width_fraction);
        let inside = |v: f64| v > 0.0 && v < 1.0;
        if !inside(c) || !inside(w) {
            return Err(CountingError::InvalidConfig(format!(
                "band center {c} and width {w} must both lie in (0, 1)"
            )));
        }
        if c - w / 2.0 < 0.0 || c + w / 2.0 > 1.0 {
            return Err(CountingError::InvalidConfig(format!(
                "band [{}, {}] extends past the image",
                c - w / 2.0,
                c + w / 2.0
            )));
        }
        Ok(())
    }

    /// Closed pixel interval `[left, right]` covered by the band.
    pub fn bounds_px(&self, geometry: &ImageGeometry) -> (f64, f64) {
        let width = geometry.width();
        (
            width * (self.center_fraction - self.width_fraction / 2.0),
            width * (self.center_fraction + self.width_fraction / 2.0),
        )
    }

    pub fn width_px(&self, geometry: &ImageGeometry) -> f64 {
        let (lo, hi) = self.bounds_px(geometry);
        hi - lo
    }
}

impl Default for CountingRange {
    fn default() -> Self {
        Self {
            center_fraction: 0.5,
            width_fraction: 0.10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountingConfig {
    pub range: CountingRange,
    pub iou_threshold: f64,
    pub next_frames_to_consider: u32,
    /// Boxes below this confidence are dropped before counting.
    pub min_confidence: f64,
}

impl Default for CountingConfig {
    fn default() -> Self {
        Self {
            range: CountingRange::default(),
            iou_threshold: 0.5,
            next_frames_to_consider: 7,
            min_confidence: 0.25,
        }
    }
}

impl CountingConfig {
    pub fn validate(&self) -> Result<(), CountingError> {
        self.range.validate()?;
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(CountingError::InvalidConfig(format!(
                "iou threshold {} outside (0, 1]",
                self.iou_threshold
            )));
        }
        if self.next_frames_to_consider == 0 {
            return Err(CountingError::InvalidConfig(
                "next_frames_to_consider must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(CountingError::InvalidConfig(format!(
                "confidence threshold {} outside [0, 1]",
                self.min_confidence
            )));
        }
        Ok(())
    }
}

/// Intersection over union of two boxes; 0 when they do not overlap.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let iy = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

pub fn in_counting_range(b: &BBox, range: &CountingRange, geometry: &ImageGeometry) -> bool {
    let (lo, hi) = range.bounds_px(geometry);
    let (cx, _) = b.center();
    lo <= cx && cx <= hi
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountedEntry {
    pub bbox: BBox,
    pub frames_remaining: u64,
}

/// A box that was counted, before it is tied to a GPS position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountedBox {
    pub frame_index: u64,
    pub bbox: BBox,
}

/// Sequential counting state for one video.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountingState {
    /// Recently counted boxes in insertion order.
    pub registry: Vec<CountedEntry>,
    pub tree_counter: u64,
    pub last_frame_index: Option<u64>,
}

impl CountingState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Advances the state by one frame and returns the boxes counted in it.
    pub fn step(
        &mut self,
        frame: &FrameDetections,
        config: &CountingConfig,
        geometry: &ImageGeometry,
    ) -> Result<Vec<CountedBox>, CountingError> {
        let elapsed = match self.last_frame_index {
            Some(previous) if frame.frame_index <= previous => {
                return Err(CountingError::NonMonotoneFrame {
                    frame: frame.frame_index,
                    previous,
                });
            }
            Some(previous) => frame.frame_index - previous,
            None => 1,
        };
        self.last_frame_index = Some(frame.frame_index);

        for entry in &mut self.registry {
            entry.frames_remaining = entry.frames_remaining.saturating_sub(elapsed);
        }
        self.registry.retain(|e| e.frames_remaining > 0);

        let mut counted = Vec::new();
        let candidates = frame
            .boxes
            .iter()
            .filter(|b| b.confidence >= config.min_confidence)
            .filter(|b| in_counting_range(b, &config.range, geometry));
        for bbox in candidates {
            let seen = self
                .registry
                .iter()
                .any(|e| iou(bbox, &e.bbox) >= config.iou_threshold);
            if seen {
                continue;
            }
            self.registry.push(CountedEntry {
                bbox: *bbox,
                frames_remaining: u64::from(config.next_frames_to_consider),
            });
            self.tree_counter += 1;
            counted.push(CountedBox {
                frame_index: frame.frame_index,
                bbox: *bbox,
            });
        }
        Ok(counted)
    }
}

/// A counted tree with the vehicle position at the frame it was counted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeEvent {
    pub frame_index: u64,
    pub bbox: BBox,
    pub position: GeoPoint,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CountReport {
    pub total_count: u64,
    pub events: Vec<TreeEvent>,
    /// `(frame_index, running count)` after every input frame.
    pub per_frame_cumulative: Vec<(u64, u64)>,
}

/// Counts trees over a whole stream and geo-tags every counted tree.
pub fn run(
    frames: &[FrameDetections],
    track: &TrackLog,
    config: &CountingConfig,
    geometry: &ImageGeometry,
    offset_s: f64,
) -> Result<CountReport, CountingError> {
    config.validate()?;
    let clock = FrameClock::new(track, geometry, offset_s);
    let mut state = CountingState::new();
    let mut report = CountReport::default();
    for frame in frames {
        for counted in state.step(frame, config, geometry)? {
            let t = clock.time_of(counted.frame_index);
            report.events.push(TreeEvent {
                frame_index: counted.frame_index,
                bbox: counted.bbox,
                position: interpolate(track, t),
                t,
            });
        }
        report
            .per_frame_cumulative
            .push((frame.frame_index, state.tree_counter));
    }
    report.total_count = state.tree_counter;
    Ok(report)
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportFile {
    total: u64,
    events: Vec<EventRecord>,
    cumulative: Vec<[u64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRecord {
    frame: u64,
    t: f64,
    lat: f64,
    lon: f64,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    conf: f64,
}

impl CountReport {
    /// JSON report: `{"total", "events": [{frame, t, lat, lon, box, conf}], "cumulative": [[frame, count]]}`.
    pub fn to_json(&self) -> String {
        let file = ReportFile {
            total: self.total_count,
            events: self
                .events
                .iter()
                .map(|e| EventRecord {
                    frame: e.frame_index,
                    t: e.t,
                    lat: e.position.lat,
                    lon: e.position.lon,
                    bbox: [e.bbox.x, e.bbox.y, e.bbox.w, e.bbox.h],
                    conf: e.bbox.confidence,
                })
                .collect(),
            cumulative: self.per_frame_cumulative.iter().map(|&(f, c)| [f, c]).collect(),
        };
        let mut out = serde_json::to_string_pretty(&file).expect("report serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, CountingError> {
        let file: ReportFile =
            serde_json::from_str(text).map_err(|e| CountingError::MalformedReport(e.to_string()))?;
        if file.total != file.events.len() as u64 {
            return Err(CountingError::MalformedReport(format!(
                "total {} but {} events",
                file.total,
                file.events.len()
            )));
        }
        if file.cumulative.windows(2).any(|w| w[1][1] < w[0][1] || w[1][0] <= w[0][0]) {
            return Err(CountingError::MalformedReport(
                "cumulative series is not monotone".into(),
            ));
        }
        let events = file
            .events
            .into_iter()
            .map(|e| {
                let position = GeoPoint::new(e.lat, e.lon)
                    .map_err(|err| CountingError::MalformedReport(err.to_string()))?;
                let [x, y, w, h] = e.bbox;
                Ok(TreeEvent {
                    frame_index: e.frame,
                    bbox: BBox::new(x, y, w, h, e.conf),
                    position,
                    t: e.t,
                })
            })
            .collect::<Result<Vec<_>, CountingError>>()?;
        Ok(CountReport {
            total_count: file.total,
            events,
            per_frame_cumulative: file.cumulative.into_iter().map(|[f, c]| (f, c)).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::TrackPoint;

    fn geometry() -> ImageGeometry {
        ImageGeometry::new(1920, 1080, 30.0).unwrap()
    }

    fn frame(i: u64, boxes: &[BBox]) -> FrameDetections {
        FrameDetections {
            frame_index: i,
            boxes: boxes.to_vec(),
        }
    }

    fn centered(cx: f64) -> BBox {
        BBox::new(cx - 50.0, 300.0, 100.0, 400.0, 0.9)
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        let far = BBox::new(20.0, 20.0, 10.0, 10.0, 1.0);
        assert_eq!(iou(&a, &far), 0.0);
        let touching = BBox::new(10.0, 0.0, 10.0, 10.0, 1.0);
        assert_eq!(iou(&a, &touching), 0.0);
        let half = BBox::new(5.0, 0.0, 10.0, 10.0, 1.0);
        assert!((iou(&a, &half) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn band_membership() {
        let g = geometry();
        let range = CountingRange::new(0.5, 0.1).unwrap();
        assert!(in_counting_range(&centered(960.0), &range, &g));
        assert!(!in_counting_range(&centered(1870.0), &range, &g));
        // band is [864, 1056], closed at both ends
        assert!(in_counting_range(&centered(864.0), &range, &g));
        assert!(in_counting_range(&centered(1056.0), &range, &g));
        assert!(!in_counting_range(&centered(863.999), &range, &g));
    }

    #[test]
    fn range_validation() {
        assert!(CountingRange::new(0.5, 0.1).is_ok());
        assert!(CountingRange::new(0.02, 0.1).is_err());
        assert!(CountingRange::new(0.5, 0.0).is_err());
        assert!(CountingRange::new(1.0, 0.1).is_err());
        let mut cfg = CountingConfig::default();
        cfg.iou_threshold = 0.0;
        assert!(cfg.validate().is_err());
        cfg.iou_threshold = 1.0;
        cfg.next_frames_to_consider = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_frame_only_moves_clock() {
        let mut s = CountingState::new();
        let out = s.step(&frame(4, &[]), &CountingConfig::default(), &geometry()).unwrap();
        assert!(out.is_empty());
        assert_eq!(s, CountingState { registry: vec![], tree_counter: 0, last_frame_index: Some(4) });
    }

    #[test]
    fn first_box_counts_and_repeat_is_suppressed() {
        let cfg = CountingConfig::default();
        let g = geometry();
        let mut s = CountingState::new();
        let b = centered(960.0);
        assert_eq!(s.step(&frame(0, &[b]), &cfg, &g).unwrap().len(), 1);
        assert_eq!(s.tree_counter, 1);
        assert_eq!(s.registry.len(), 1);
        assert!(s.step(&frame(1, &[b]), &cfg, &g).unwrap().is_empty());
        assert_eq!(s.tree_counter, 1);
    }

    #[test]
    fn eviction_then_recount() {
        let cfg = CountingConfig::default();
        let g = geometry();
        let b = centered(960.0);
        let mut s = CountingState::new();
        s.step(&frame(0, &[b]), &cfg, &g).unwrap();
        // still registered at frame 6 (one frame left), evicted at frame 7
        let mut probe = s.clone();
        assert!(probe.step(&frame(6, &[b]), &cfg, &g).unwrap().is_empty());
        assert_eq!(s.step(&frame(7, &[b]), &cfg, &g).unwrap().len(), 1);
        assert_eq!(s.tree_counter, 2);
    }

    #[test]
    fn gaps_age_the_registry() {
        let cfg = CountingConfig::default();
        let g = geometry();
        let mut s = CountingState::new();
        s.step(&frame(10, &[centered(960.0)]), &cfg, &g).unwrap();
        s.step(&frame(13, &[]), &cfg, &g).unwrap();
        assert_eq!(s.registry[0].frames_remaining, 4);
        s.step(&frame(100, &[]), &cfg, &g).unwrap();
        assert!(s.registry.is_empty());
    }

    #[test]
    fn low_confidence_and_out_of_band_boxes_ignored() {
        let cfg = CountingConfig::default();
        let g = geometry();
        let mut s = CountingState::new();
        let mut weak = centered(960.0);
        weak.confidence = 0.2;
        let out = s.step(&frame(0, &[weak, centered(200.0)]), &cfg, &g).unwrap();
        assert!(out.is_empty());
        assert!(s.registry.is_empty());
    }

    #[test]
    fn same_frame_duplicates_count_once() {
        let cfg = CountingConfig::default();
        let g = geometry();
        let mut s = CountingState::new();
        let b = centered(960.0);
        let out = s.step(&frame(0, &[b, b, centered(1000.0)]), &cfg, &g).unwrap();
        // 1000-centred box overlaps 60/140 < 0.5 with the first
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn out_of_order_frame_is_an_error() {
        let cfg = CountingConfig::default();
        let g = geometry();
        let mut s = CountingState::new();
        s.step(&frame(3, &[]), &cfg, &g).unwrap();
        assert_eq!(
            s.step(&frame(3, &[]), &cfg, &g),
            Err(CountingError::NonMonotoneFrame { frame: 3, previous: 3 })
        );
    }

    #[test]
    fn crossing_over_five_frames_counts_once() {
        // 20 px per frame inside the band; against the first counted box the
        // worst shift is 80 px, IoU 220/380 = 0.58
        let cfg = CountingConfig::default();
        let g = geometry();
        let track = TrackLog::new(vec![
            TrackPoint { lat: 0.0, lon: 0.0, t: 0.0 },
            TrackPoint { lat: 0.0, lon: 0.0001, t: 1.0 },
        ])
        .unwrap();
        let frames: Vec<_> = (0..5)
            .map(|k| frame(k, &[BBox::new(1000.0 - 20.0 * k as f64 - 150.0, 200.0, 300.0, 500.0, 0.8)]))
            .collect();
        let report = run(&frames, &track, &cfg, &g, 0.0).unwrap();
        assert_eq!(report.total_count, 1);
        assert_eq!(report.per_frame_cumulative, vec![(0, 1), (1, 1), (2, 1), (3, 1), (4, 1)]);
    }

    #[test]
    fn run_geotags_events() {
        let cfg = CountingConfig::default();
        let g = geometry();
        let track = TrackLog::new(vec![
            TrackPoint { lat: 0.0, lon: 0.0, t: 100.0 },
            TrackPoint { lat: 0.0, lon: 0.002, t: 110.0 },
        ])
        .unwrap();
        let frames = vec![frame(150, &[centered(960.0)])];
        let report = run(&frames, &track, &cfg, &g, 0.0).unwrap();
        assert_eq!(report.total_count, 1);
        let e = report.events[0];
        assert_eq!(e.t, 105.0);
        assert!((e.position.lon - 0.001).abs() < 1e-15);

        assert_eq!(run(&[], &track, &cfg, &g, 0.0).unwrap().total_count, 0);
    }

    #[test]
    fn report_json_round_trip() {
        let report = CountReport {
            total_count: 1,
            events: vec![TreeEvent {
                frame_index: 12,
                bbox: BBox::new(1.5, 2.0, 30.25, 40.0, 0.75),
                position: GeoPoint { lat: 17.385, lon: 78.4867 },
                t: 1_640_995_200.4,
            }],
            per_frame_cumulative: vec![(0, 0), (12, 1)],
        };
        let text = report.to_json();
        assert_eq!(CountReport::from_json(&text).unwrap(), report);
        assert!(text.contains("\"total\": 1"));
        assert!(CountReport::from_json("{\"total\":2,\"events\":[],\"cumulative\":[]}").is_err());
    }
}
