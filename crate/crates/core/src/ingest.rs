//! Detection stream and GPX track parsing.
//!
//! Detection stream format (UTF-8, one JSON object per line):
//!
//! ```text
//! {"type":"header","width":1920,"height":1080,"fps":30.0}
//! {"type":"frame","frame":0,"boxes":[[x,y,w,h,conf],...]}
//! ```
//!
//! Boxes are corner form in pixels. Frame indices must strictly increase;
//! gaps are allowed and mean "no detections in the skipped frames".

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine, GeoPoint};

/// Default upper bound on the distance between consecutive trackpoints.
pub const DEFAULT_MAX_POINT_SPACING_M: f64 = 1000.0;

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: frame {frame} does not follow frame {previous}")]
    NonMonotoneFrame { line: usize, frame: u64, previous: u64 },
    #[error("line {line}: {reason}")]
    GeometryViolation { line: usize, reason: String },
    #[error("line {line}: confidence {confidence} outside [0, 1]")]
    InvalidConfidence { line: usize, confidence: f64 },
    #[error("line {line}: frame record before header")]
    MissingHeader { line: usize },
    #[error("invalid image geometry: {0}")]
    InvalidGeometry(String),
    #[error("read error: {0}")]
    Io(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum GpxError {
    #[error("malformed GPX: {0}")]
    MalformedGpx(String),
    #[error("trackpoint {point} has no time element")]
    MissingTimestamps { point: usize },
    #[error("trackpoint {point}: unparseable time {value:?}")]
    BadTimestamp { point: usize, value: String },
    #[error("trackpoint {point}: invalid coordinate")]
    BadCoordinate { point: usize },
    #[error("time does not increase at t = {t}")]
    NonMonotoneTime { t: f64 },
    #[error("track needs at least 2 points, found {0}")]
    TooFewPoints(usize),
    #[error("trackpoint {point} is {meters:.1} m from its predecessor")]
    TrackGap { point: usize, meters: f64 },
}

/// Pixel geometry and frame rate of the source video.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGeometry {
    pub width_px: u32,
    pub height_px: u32,
    pub fps: f64,
}

impl ImageGeometry {
    pub fn new(width_px: u32, height_px: u32, fps: f64) -> Result<Self, IngestError> {
        if width_px == 0 || height_px == 0 {
            return Err(IngestError::InvalidGeometry(format!(
                "image size {width_px}x{height_px}"
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(IngestError::InvalidGeometry(format!("fps {fps}")));
        }
        Ok(Self {
            width_px,
            height_px,
            fps,
        })
    }

    pub fn width(&self) -> f64 {
        f64::from(self.width_px)
    }

    pub fn height(&self) -> f64 {
        f64::from(self.height_px)
    }
}

impl Default for ImageGeometry {
    fn default() -> Self {
        Self {
            width_px: 1920,
            height_px: 1080,
            fps: 30.0,
        }
    }
}

/// Axis-aligned detection box in pixels, stored as top-left corner plus size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64, confidence: f64) -> Self {
        Self {
            x,
            y,
            w,
            h,
            confidence,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    /// Trims the box to the image. Sides already inside are left untouched so
    /// that clamping an in-bounds box is the identity. Returns `None` when
    /// nothing of the box remains.
    pub fn clamped(&self, geometry: &ImageGeometry) -> Option<BBox> {
        let mut b = *self;
        if b.x < 0.0 {
            b.w += b.x;
            b.x = 0.0;
        }
        if b.y < 0.0 {
            b.h += b.y;
            b.y = 0.0;
        }
        if b.right() > geometry.width() {
            b.w = geometry.width() - b.x;
            // x + (W - x) can round above W
            while b.right() > geometry.width() {
                b.w = b.w.next_down();
            }
        }
        if b.bottom() > geometry.height() {
            b.h = geometry.height() - b.y;
            while b.bottom() > geometry.height() {
                b.h = b.h.next_down();
            }
        }
        (b.w > 0.0 && b.h > 0.0).then_some(b)
    }
}

/// All boxes reported for one video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame_index: u64,
    pub boxes: Vec<BBox>,
}

/// A parsed detection file. `geometry` is `None` only for an empty stream.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionStream {
    pub geometry: Option<ImageGeometry>,
    pub frames: Vec<FrameDetections>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Record {
    Header { width: u32, height: u32, fps: f64 },
    Frame { frame: u64, boxes: Vec<[f64; 5]> },
}

/// Parses a detection stream from any buffered reader. Blank lines are skipped.
pub fn parse_detections<R: BufRead>(reader: R) -> Result<DetectionStream, IngestError> {
    let mut stream = DetectionStream::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| IngestError::Io(e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(trimmed).map_err(|e| IngestError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        match record {
            Record::Header { width, height, fps } => {
                if stream.geometry.is_some() {
                    return Err(IngestError::MalformedRecord {
                        line: line_no,
                        reason: "duplicate header".into(),
                    });
                }
                let geometry = ImageGeometry::new(width, height, fps).map_err(|e| {
                    IngestError::MalformedRecord {
                        line: line_no,
                        reason: e.to_string(),
                    }
                })?;
                stream.geometry = Some(geometry);
            }
            Record::Frame { frame, boxes } => {
                let geometry = stream
                    .geometry
                    .ok_or(IngestError::MissingHeader { line: line_no })?;
                if let Some(prev) = stream.frames.last() {
                    if frame <= prev.frame_index {
                        return Err(IngestError::NonMonotoneFrame {
                            line: line_no,
                            frame,
                            previous: prev.frame_index,
                        });
                    }
                }
                let boxes = boxes
                    .iter()
                    .map(|raw| parse_box(raw, &geometry, line_no))
                    .collect::<Result<Vec<_>, _>>()?;
                stream.frames.push(FrameDetections {
                    frame_index: frame,
                    boxes,
                });
            }
        }
    }
    Ok(stream)
}

/// Convenience wrapper over [`parse_detections`] for in-memory text.
pub fn parse_detections_str(text: &str) -> Result<DetectionStream, IngestError> {
    parse_detections(text.as_bytes())
}

fn parse_box(raw: &[f64; 5], geometry: &ImageGeometry, line: usize) -> Result<BBox, IngestError> {
    let [x, y, w, h, confidence] = *raw;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(IngestError::InvalidConfidence { line, confidence });
    }
    if !(w > 0.0 && h > 0.0) {
        return Err(IngestError::GeometryViolation {
            line,
            reason: format!("box size {w}x{h} is not positive"),
        });
    }
    BBox::new(x, y, w, h, confidence)
        .clamped(geometry)
        .ok_or_else(|| IngestError::GeometryViolation {
            line,
            reason: format!("box ({x}, {y}, {w}, {h}) lies outside the image"),
        })
}

/// Serializes a stream in the same line format [`parse_detections`] reads.
pub fn write_detections(stream: &DetectionStream) -> String {
    let mut out = String::new();
    let Some(geometry) = stream.geometry else {
        return out;
    };
    let header = Record::Header {
        width: geometry.width_px,
        height: geometry.height_px,
        fps: geometry.fps,
    };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for frame in &stream.frames {
        let record = Record::Frame {
            frame: frame.frame_index,
            boxes: frame
                .boxes
                .iter()
                .map(|b| [b.x, b.y, b.w, b.h, b.confidence])
                .collect(),
        };
        out.push_str(&serde_json::to_string(&record).expect("frame serializes"));
        out.push('\n');
    }
    out
}

/// One timestamped GPS fix. `t` is seconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub lat: f64,
    pub lon: f64,
    pub t: f64,
}

impl TrackPoint {
    pub fn position(&self) -> GeoPoint {
        GeoPoint {
            lat: self.lat,
            lon: self.lon,
        }
    }
}

/// A validated GPS track: at least two points, strictly increasing time,
/// bounded spacing between consecutive fixes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackLog {
    points: Vec<TrackPoint>,
}

impl TrackLog {
    pub fn new(points: Vec<TrackPoint>) -> Result<Self, GpxError> {
        Self::with_max_spacing(points, DEFAULT_MAX_POINT_SPACING_M)
    }

    pub fn with_max_spacing(points: Vec<TrackPoint>, max_spacing_m: f64) -> Result<Self, GpxError> {
        if points.len() < 2 {
            return Err(GpxError::TooFewPoints(points.len()));
        }
        for (i, p) in points.iter().enumerate() {
            if GeoPoint::new(p.lat, p.lon).is_err() || !p.t.is_finite() {
                return Err(GpxError::BadCoordinate { point: i });
            }
        }
        for (i, pair) in points.windows(2).enumerate() {
            if pair[1].t <= pair[0].t {
                return Err(GpxError::NonMonotoneTime { t: pair[1].t });
            }
            let gap = haversine(pair[0].position(), pair[1].position());
            if gap >= max_spacing_m {
                return Err(GpxError::TrackGap {
                    point: i + 1,
                    meters: gap,
                });
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[TrackPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start_time(&self) -> f64 {
        self.points[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.points[self.points.len() - 1].t
    }

    /// Great-circle length of the polyline in metres.
    pub fn length_m(&self) -> f64 {
        self.points
            .windows(2)
            .map(|p| haversine(p[0].position(), p[1].position()))
            .sum()
    }
}

/// Parses `trk > trkseg > trkpt` elements of a GPX document. Segments are
/// concatenated in document order; everything else in the file is ignored.
pub fn parse_gpx(text: &str) -> Result<TrackLog, GpxError> {
    parse_gpx_with(text, DEFAULT_MAX_POINT_SPACING_M)
}

pub fn parse_gpx_with(text: &str, max_spacing_m: f64) -> Result<TrackLog, GpxError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| GpxError::MalformedGpx(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "gpx" {
        return Err(GpxError::MalformedGpx(format!(
            "root element is <{}>, expected <gpx>",
            root.tag_name().name()
        )));
    }

    let mut points = Vec::new();
    let trkpts = root
        .children()
        .filter(|n| n.tag_name().name() == "trk")
        .flat_map(|trk| trk.children().filter(|n| n.tag_name().name() == "trkseg"))
        .flat_map(|seg| seg.children().filter(|n| n.tag_name().name() == "trkpt"));

    for (i, pt) in trkpts.enumerate() {
        let coord = |name: &str| -> Result<f64, GpxError> {
            pt.attribute(name)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or(GpxError::BadCoordinate { point: i })
        };
        let lat = coord("lat")?;
        let lon = coord("lon")?;
        let time_text = pt
            .children()
            .find(|n| n.tag_name().name() == "time")
            .and_then(|n| n.text())
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or(GpxError::MissingTimestamps { point: i })?;
        let t = parse_timestamp(time_text).ok_or_else(|| GpxError::BadTimestamp {
            point: i,
            value: time_text.to_string(),
        })?;
        points.push(TrackPoint { lat, lon, t });
    }

    TrackLog::with_max_spacing(points, max_spacing_m)
}

/// ISO-8601 / RFC 3339 timestamp to fractional seconds since the epoch.
pub fn parse_timestamp(text: &str) -> Option<f64> {
    let dt = chrono::DateTime::parse_from_rfc3339(text).ok()?;
    Some(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9)
}
