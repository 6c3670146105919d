//! Geodesy helpers: great-circle distance, time-to-position interpolation,
//! a local equirectangular frame and route segmentation by arc length.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ImageGeometry, TrackLog};

/// Mean Earth radius in metres.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Metres spanned by one degree of latitude on the mean-radius sphere.
pub const METERS_PER_DEG_LAT: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

/// Radius around a [`LocalFrame`] origin inside which the planar
/// approximation is accepted.
pub const MAX_PROJECTION_RANGE_M: f64 = 50_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate ({lat}, {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("point is {distance_m:.0} m from the projection origin (limit {MAX_PROJECTION_RANGE_M} m)")]
    OutOfProjectionRange { distance_m: f64 },
    #[error("track is {length_m} m long; at least 1 m is required")]
    DegenerateTrack { length_m: f64 },
    #[error("segment length must be positive, got {0}")]
    InvalidSegmentLength(f64),
    #[error("no points to build a local frame from")]
    EmptyPointSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if lat.is_finite() && lon.is_finite() && (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon) {
            Ok(Self { lat, lon })
        } else {
            Err(GeoError::InvalidCoordinate { lat, lon })
        }
    }

    fn lerp(self, other: GeoPoint, f: f64) -> GeoPoint {
        GeoPoint {
            lat: self.lat + (other.lat - self.lat) * f,
            lon: self.lon + (other.lon - self.lon) * f,
        }
    }
}

/// Great-circle distance in metres on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let s = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * s.sqrt().min(1.0).asin()
}

/// Position on the track at time `t`, linearly interpolated in lat/lon.
/// Times outside the track clamp to its first or last point.
pub fn interpolate(track: &TrackLog, t: f64) -> GeoPoint {
    let pts = track.points();
    let i = pts.partition_point(|p| p.t <= t);
    if i == 0 {
        return pts[0].position();
    }
    if i == pts.len() {
        return pts[pts.len() - 1].position();
    }
    let (a, b) = (pts[i - 1], pts[i]);
    let f = (t - a.t) / (b.t - a.t);
    a.position().lerp(b.position(), f)
}

/// Maps video frame indices onto track time.
///
/// Frame 0 is taken to coincide with the first trackpoint plus `offset_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameClock {
    pub start_t: f64,
    pub fps: f64,
    pub offset_s: f64,
}

impl FrameClock {
    pub fn new(track: &TrackLog, geometry: &ImageGeometry, offset_s: f64) -> Self {
        Self {
            start_t: track.start_time(),
            fps: geometry.fps,
            offset_s,
        }
    }

    pub fn time_of(&self, frame_index: u64) -> f64 {
        self.start_t + self.offset_s + frame_index as f64 / self.fps
    }
}

/// Equirectangular projection about a fixed origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub origin: GeoPoint,
    pub meters_per_deg_lat: f64,
    pub meters_per_deg_lon: f64,
}

impl LocalFrame {
    pub fn new(origin: GeoPoint) -> Self {
        Self {
            origin,
            meters_per_deg_lat: METERS_PER_DEG_LAT,
            meters_per_deg_lon: METERS_PER_DEG_LAT * origin.lat.to_radians().cos(),
        }
    }

    /// Frame centred on the arithmetic mean of the points' coordinates.
    pub fn about_centroid(points: &[GeoPoint]) -> Result<Self, GeoError> {
        if points.is_empty() {
            return Err(GeoError::EmptyPointSet);
        }
        let n = points.len() as f64;
        let lat = points.iter().map(|p| p.lat).sum::<f64>() / n;
        let lon = points.iter().map(|p| p.lon).sum::<f64>() / n;
        Ok(Self::new(GeoPoint { lat, lon }))
    }

    /// Planar (east, north) offset of `p` from the origin in metres.
    pub fn to_local(&self, p: GeoPoint) -> Result<(f64, f64), GeoError> {
        let distance_m = haversine(self.origin, p);
        if distance_m > MAX_PROJECTION_RANGE_M {
            return Err(GeoError::OutOfProjectionRange { distance_m });
        }
        Ok((
            (p.lon - self.origin.lon) * self.meters_per_deg_lon,
            (p.lat - self.origin.lat) * self.meters_per_deg_lat,
        ))
    }

    pub fn to_geo(&self, x_m: f64, y_m: f64) -> GeoPoint {
        GeoPoint {
            lat: self.origin.lat + y_m / self.meters_per_deg_lat,
            lon: self.origin.lon + x_m / self.meters_per_deg_lon,
        }
    }
}

/// A piece of the route covering a contiguous arc-length interval.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteSegment {
    pub index: usize,
    pub polyline: Vec<GeoPoint>,
    pub length_m: f64,
    pub t_start: f64,
    pub t_end: f64,
}

/// Splits the track into pieces of `target_len_m` of arc length each; the
/// last piece holds the remainder. Boundaries are interpolated positions on
/// the track, so they may fall between trackpoints.
///
/// A remainder shorter than a millionth of the target is merged into the
/// previous piece instead of becoming a sliver segment.
pub fn segment_route(track: &TrackLog, target_len_m: f64) -> Result<Vec<RouteSegment>, GeoError> {
    if !(target_len_m.is_finite() && target_len_m > 0.0) {
        return Err(GeoError::InvalidSegmentLength(target_len_m));
    }
    let pts = track.points();
    let mut cum = Vec::with_capacity(pts.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for w in pts.windows(2) {
        acc += haversine(w[0].position(), w[1].position());
        cum.push(acc);
    }
    let total = acc;
    if !(total >= 1.0) {
        return Err(GeoError::DegenerateTrack { length_m: total });
    }

    let sliver = target_len_m * 1e-6;
    let mut cuts = vec![0.0];
    let mut k = 1.0;
    while k * target_len_m < total - sliver {
        cuts.push(k * target_len_m);
        k += 1.0;
    }
    cuts.push(total);

    // Position and time at arc length `d`; first index j with cum[j] >= d.
    let locate = |d: f64| -> (GeoPoint, f64, usize) {
        let j = cum.partition_point(|&c| c < d).min(pts.len() - 1);
        if j == 0 || cum[j] == d {
            return (pts[j].position(), pts[j].t, j);
        }
        let f = (d - cum[j - 1]) / (cum[j] - cum[j - 1]);
        let (a, b) = (pts[j - 1], pts[j]);
        (a.position().lerp(b.position(), f), a.t + (b.t - a.t) * f, j)
    };

    let mut segments = Vec::with_capacity(cuts.len() - 1);
    for (index, w) in cuts.windows(2).enumerate() {
        let (d0, d1) = (w[0], w[1]);
        let (p0, t0, _) = locate(d0);
        let (p1, t1, _) = if index == cuts.len() - 2 {
            let last = pts[pts.len() - 1];
            (last.position(), last.t, pts.len() - 1)
        } else {
            locate(d1)
        };
        let mut polyline = vec![p0];
        polyline.extend(
            pts.iter()
                .zip(&cum)
                .filter(|(_, &c)| c > d0 && c < d1)
                .map(|(p, _)| p.position()),
        );
        polyline.push(p1);
        segments.push(RouteSegment {
            index,
            polyline,
            length_m: d1 - d0,
            t_start: t0,
            t_end: t1,
        });
    }
    Ok(segments)
}
