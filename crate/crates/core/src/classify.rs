//! Tree count density index: per-kilometre rates, five density categories
//! and the colour-coded category map.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counting::TreeEvent;
use crate::geo::RouteSegment;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("segment length {0} m is not positive")]
    DegenerateSegment(f64),
    #[error("event at frame {frame} (t = {t}) falls outside every segment")]
    UnassignedEvent { frame: u64, t: f64 },
}

/// Density categories in increasing order of trees per kilometre.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DensityCategory {
    VeryLow,
    Low,
    Moderate,
    Good,
    VeryGood,
}

impl DensityCategory {
    pub const ALL: [DensityCategory; 5] = [
        DensityCategory::VeryLow,
        DensityCategory::Low,
        DensityCategory::Moderate,
        DensityCategory::Good,
        DensityCategory::VeryGood,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DensityCategory::VeryLow => "VeryLow",
            DensityCategory::Low => "Low",
            DensityCategory::Moderate => "Moderate",
            DensityCategory::Good => "Good",
            DensityCategory::VeryGood => "VeryGood",
        }
    }

    pub fn color_name(self) -> &'static str {
        match self {
            DensityCategory::VeryLow => "black",
            DensityCategory::Low => "red",
            DensityCategory::Moderate => "blue",
            DensityCategory::Good => "green",
            DensityCategory::VeryGood => "dark green",
        }
    }

    pub fn color_hex(self) -> &'static str {
        match self {
            DensityCategory::VeryLow => "#000000",
            DensityCategory::Low => "#ff0000",
            DensityCategory::Moderate => "#0000ff",
            DensityCategory::Good => "#008000",
            DensityCategory::VeryGood => "#006400",
        }
    }

    /// 0 for `VeryLow` up to 4 for `VeryGood`.
    pub fn rank(self) -> u8 {
        self as u8
    }

    /// Accepts the canonical labels plus the "High"/"Very High" spelling
    /// used for the two top categories in published result tables.
    pub fn from_label(label: &str) -> Option<Self> {
        let key: String = label
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "verylow" => Some(DensityCategory::VeryLow),
            "low" => Some(DensityCategory::Low),
            "moderate" => Some(DensityCategory::Moderate),
            "good" | "high" => Some(DensityCategory::Good),
            "verygood" | "veryhigh" => Some(DensityCategory::VeryGood),
            _ => None,
        }
    }
}

impl fmt::Display for DensityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Trees per kilometre for `count` trees over `length_m` metres.
pub fn per_km_rate(count: u64, length_m: f64) -> Result<f64, ClassifyError> {
    if !(length_m > 0.0) {
        return Err(ClassifyError::DegenerateSegment(length_m));
    }
    Ok(count as f64 * 1000.0 / length_m)
}

/// Half-open bins: [0,20) [20,30) [30,40) [40,50) [50,inf).
pub fn categorize(per_km: f64) -> DensityCategory {
    if per_km < 20.0 {
        DensityCategory::VeryLow
    } else if per_km < 30.0 {
        DensityCategory::Low
    } else if per_km < 40.0 {
        DensityCategory::Moderate
    } else if per_km < 50.0 {
        DensityCategory::Good
    } else {
        DensityCategory::VeryGood
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedSegment {
    pub segment: RouteSegment,
    pub count: u64,
    pub per_km: f64,
    pub category: DensityCategory,
}

/// Assigns each event to the first segment whose time span contains it (a
/// timestamp on a shared boundary goes to the earlier segment) and rates
/// every segment.
pub fn classify_segments(
    events: &[TreeEvent],
    segments: &[RouteSegment],
) -> Result<Vec<ClassifiedSegment>, ClassifyError> {
    let mut counts = vec![0u64; segments.len()];
    for e in events {
        let slot = segments
            .iter()
            .position(|s| s.t_start <= e.t && e.t <= s.t_end)
            .ok_or(ClassifyError::UnassignedEvent {
                frame: e.frame_index,
                t: e.t,
            })?;
        counts[slot] += 1;
    }
    segments
        .iter()
        .zip(counts)
        .map(|(segment, count)| {
            let per_km = per_km_rate(count, segment.length_m)?;
            Ok(ClassifiedSegment {
                segment: segment.clone(),
                count,
                per_km,
                category: categorize(per_km),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct FeatureCollection<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    features: Vec<Feature<'a>>,
}

#[derive(Serialize)]
struct Feature<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    geometry: LineString,
    properties: SegmentProperties<'a>,
}

#[derive(Serialize)]
struct LineString {
    #[serde(rename = "type")]
    kind: &'static str,
    coordinates: Vec<[f64; 2]>,
}

#[derive(Serialize)]
struct SegmentProperties<'a> {
    segment: usize,
    length_m: f64,
    count: u64,
    per_km: f64,
    category: &'a str,
    color: &'a str,
}

/// Category map as a GeoJSON FeatureCollection, one LineString per segment
/// with `[lon, lat]` coordinates.
pub fn to_category_geojson(classified: &[ClassifiedSegment]) -> String {
    let collection = FeatureCollection {
        kind: "FeatureCollection",
        features: classified
            .iter()
            .map(|c| Feature {
                kind: "Feature",
                geometry: LineString {
                    kind: "LineString",
                    coordinates: c.segment.polyline.iter().map(|p| [p.lon, p.lat]).collect(),
                },
                properties: SegmentProperties {
                    segment: c.segment.index,
                    length_m: c.segment.length_m,
                    count: c.count,
                    per_km: c.per_km,
                    category: c.category.label(),
                    color: c.category.color_hex(),
                },
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&collection).expect("geojson serializes");
    out.push('\n');
    out
}

/// One row of the per-segment summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRow {
    pub segment: usize,
    pub length_m: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub count: u64,
    pub per_km: f64,
    pub category: DensityCategory,
    pub color: String,
}

impl From<&ClassifiedSegment> for SegmentRow {
    fn from(c: &ClassifiedSegment) -> Self {
        SegmentRow {
            segment: c.segment.index,
            length_m: c.segment.length_m,
            t_start: c.segment.t_start,
            t_end: c.segment.t_end,
            count: c.count,
            per_km: c.per_km,
            category: c.category,
            color: c.category.color_hex().to_string(),
        }
    }
}

/// Summary table as JSON lines, one row per segment.
pub fn to_summary_table(classified: &[ClassifiedSegment]) -> String {
    classified
        .iter()
        .map(|c| serde_json::to_string(&SegmentRow::from(c)).expect("row serializes") + "\n")
        .collect()
}

pub fn parse_summary_table(text: &str) -> Result<Vec<SegmentRow>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use crate::ingest::BBox;

    fn seg(index: usize, t0: f64, t1: f64, length_m: f64) -> RouteSegment {
        RouteSegment {
            index,
            polyline: vec![
                GeoPoint { lat: 17.0, lon: 78.0 + index as f64 * 0.01 },
                GeoPoint { lat: 17.001, lon: 78.0 + index as f64 * 0.01 },
            ],
            length_m,
            t_start: t0,
            t_end: t1,
        }
    }

    fn event_at(t: f64) -> TreeEvent {
        TreeEvent {
            frame_index: (t * 30.0) as u64,
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0, 1.0),
            position: GeoPoint { lat: 17.0, lon: 78.0 },
            t,
        }
    }

    #[test]
    fn rate_examples() {
        assert_eq!(per_km_rate(0, 123.0).unwrap(), 0.0);
        assert!((per_km_rate(125, 630.0).unwrap() - 198.412_698).abs() < 1e-5);
        assert!((per_km_rate(29, 750.0).unwrap() - 38.666_667).abs() < 1e-5);
        assert_eq!(per_km_rate(3, 0.0), Err(ClassifyError::DegenerateSegment(0.0)));
    }

    #[test]
    fn category_examples() {
        assert_eq!(categorize(per_km_rate(11, 600.0).unwrap()), DensityCategory::VeryLow);
        assert_eq!(categorize(per_km_rate(21, 890.0).unwrap()), DensityCategory::Low);
        assert_eq!(categorize(per_km_rate(29, 750.0).unwrap()), DensityCategory::Moderate);
    }

    #[test]
    fn bin_boundaries_go_up() {
        assert_eq!(categorize(0.0), DensityCategory::VeryLow);
        assert_eq!(categorize(19.999), DensityCategory::VeryLow);
        assert_eq!(categorize(20.0), DensityCategory::Low);
        assert_eq!(categorize(30.0), DensityCategory::Moderate);
        assert_eq!(categorize(40.0), DensityCategory::Good);
        assert_eq!(categorize(50.0), DensityCategory::VeryGood);
        assert_eq!(categorize(1e6), DensityCategory::VeryGood);
    }

    #[test]
    fn labels_and_colors() {
        assert_eq!(DensityCategory::VeryLow.color_hex(), "#000000");
        assert_eq!(DensityCategory::VeryGood.color_hex(), "#006400");
        assert_eq!(DensityCategory::from_label("Very High"), Some(DensityCategory::VeryGood));
        assert_eq!(DensityCategory::from_label("High"), Some(DensityCategory::Good));
        assert_eq!(DensityCategory::from_label("Very Low"), Some(DensityCategory::VeryLow));
        assert_eq!(DensityCategory::from_label("lots"), None);
        for c in DensityCategory::ALL {
            assert_eq!(DensityCategory::from_label(c.label()), Some(c));
        }
    }

    #[test]
    fn no_events_means_very_low() {
        let out = classify_segments(&[], &[seg(0, 0.0, 10.0, 1000.0), seg(1, 10.0, 20.0, 500.0)]).unwrap();
        assert!(out.iter().all(|c| c.count == 0 && c.category == DensityCategory::VeryLow));
    }

    #[test]
    fn boundary_event_goes_to_earlier_segment() {
        let segs = [seg(0, 0.0, 10.0, 1000.0), seg(1, 10.0, 20.0, 1000.0)];
        let out = classify_segments(&[event_at(10.0), event_at(3.0)], &segs).unwrap();
        assert_eq!(out[0].count, 2);
        assert_eq!(out[1].count, 0);
        assert_eq!(
            classify_segments(&[event_at(25.0)], &segs),
            Err(ClassifyError::UnassignedEvent { frame: 750, t: 25.0 })
        );
    }

    #[test]
    fn uniform_sixty_over_two_km() {
        let segs = [seg(0, 0.0, 100.0, 1000.0), seg(1, 100.0, 200.0, 1000.0)];
        let events: Vec<_> = (0..60).map(|i| event_at(1.0 + i as f64 * (198.0 / 59.0))).collect();
        let out = classify_segments(&events, &segs).unwrap();
        assert_eq!((out[0].count, out[1].count), (30, 30));
        assert!(out.iter().all(|c| c.category == DensityCategory::Moderate));
    }

    #[test]
    fn geojson_structure() {
        let out = classify_segments(&[], &[seg(0, 0.0, 1.0, 800.0)]).unwrap();
        let text = to_category_geojson(&out);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["type"], "FeatureCollection");
        let f = &v["features"][0];
        assert_eq!(f["geometry"]["type"], "LineString");
        assert_eq!(f["geometry"]["coordinates"][0][0], 78.0);
        assert_eq!(f["geometry"]["coordinates"][0][1], 17.0);
        assert_eq!(f["properties"]["color"], "#000000");
        assert_eq!(f["properties"]["category"], "VeryLow");

        let empty: serde_json::Value = serde_json::from_str(&to_category_geojson(&[])).unwrap();
        assert_eq!(empty["features"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn summary_table_round_trip() {
        let out = classify_segments(&[event_at(0.5)], &[seg(0, 0.0, 1.0, 800.0), seg(1, 1.0, 2.0, 20.0)]).unwrap();
        let rows = parse_summary_table(&to_summary_table(&out)).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], SegmentRow::from(&out[0]));
        assert_eq!(rows[0].per_km, 1.25);
    }
}
