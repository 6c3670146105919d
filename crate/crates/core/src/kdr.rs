//! Compact-support kernel density estimation over a raster grid and the
//! kernel density ranking derived from it.
//!
//! Densities use the Epanechnikov-type kernel `3/(pi h^2) * sum(1 - (d/h)^2)`
//! over points strictly closer than `h`. No `1/n` factor is applied: the
//! ranking only depends on the order of densities, so the overall scale has
//! no effect on the density map.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoError, GeoPoint, LocalFrame};

pub const NODATA_VALUE: f64 = -9999.0;

#[derive(Debug, Error, PartialEq)]
pub enum KdrError {
    #[error("no points to estimate a density from")]
    EmptyPointSet,
    #[error("invalid density configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("malformed ASCII raster: {0}")]
    MalformedRaster(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdrConfig {
    pub bandwidth_m: f64,
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub padding_m: f64,
}

impl Default for KdrConfig {
    fn default() -> Self {
        Self {
            bandwidth_m: 50.0,
            grid_cols: 256,
            grid_rows: 256,
            padding_m: 50.0,
        }
    }
}

impl KdrConfig {
    pub fn validate(&self) -> Result<(), KdrError> {
        if !(self.bandwidth_m.is_finite() && self.bandwidth_m > 0.0) {
            return Err(KdrError::InvalidConfig(format!("bandwidth {} m", self.bandwidth_m)));
        }
        if self.grid_cols < 2 || self.grid_rows < 2 {
            return Err(KdrError::InvalidConfig(format!(
                "grid {}x{} is smaller than 2x2",
                self.grid_cols, self.grid_rows
            )));
        }
        if !(self.padding_m.is_finite() && self.padding_m >= 0.0) {
            return Err(KdrError::InvalidConfig(format!("padding {} m", self.padding_m)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridKind {
    Kde,
    Kdr,
}

/// Square-celled raster in a local metric frame.
///
/// Row 0 is the northernmost row; `origin_m` is the centre of the
/// north-west cell. `values` is row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub frame: LocalFrame,
    pub origin_m: (f64, f64),
    pub cell_size_m: f64,
    pub cols: usize,
    pub rows: usize,
    pub bandwidth_m: f64,
    pub values: Vec<f64>,
    pub kind: GridKind,
}

impl DensityGrid {
    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin_m.0 + col as f64 * self.cell_size_m,
            self.origin_m.1 - row as f64 * self.cell_size_m,
        )
    }

    pub fn value(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// Cell containing the local point, if it lies on the grid.
    pub fn cell_of(&self, x_m: f64, y_m: f64) -> Option<(usize, usize)> {
        let half = self.cell_size_m / 2.0;
        let col = ((x_m - (self.origin_m.0 - half)) / self.cell_size_m).floor();
        let row = (((self.origin_m.1 + half) - y_m) / self.cell_size_m).floor();
        if col < 0.0 || row < 0.0 || col >= self.cols as f64 || row >= self.rows as f64 {
            return None;
        }
        Some((col as usize, row as usize))
    }

    /// Lower-left corner of the raster in local metres.
    pub fn lower_left_m(&self) -> (f64, f64) {
        let half = self.cell_size_m / 2.0;
        (
            self.origin_m.0 - half,
            self.origin_m.1 - (self.rows - 1) as f64 * self.cell_size_m - half,
        )
    }
}

/// Kernel density at `q`; points and query are in local metres.
pub fn kde_at(points_local: &[(f64, f64)], q: (f64, f64), h: f64) -> f64 {
    let mut acc = 0.0;
    for &(x, y) in points_local {
        let dx = x - q.0;
        let dy = y - q.1;
        let d = (dx * dx + dy * dy).sqrt();
        if d < h {
            let r = d / h;
            acc += 1.0 - r * r;
        }
    }
    acc * (3.0 / (PI * h * h))
}

fn project_all(frame: &LocalFrame, points: &[GeoPoint]) -> Result<Vec<(f64, f64)>, KdrError> {
    points
        .iter()
        .map(|p| frame.to_local(*p).map_err(KdrError::from))
        .collect()
}

/// Evaluates the density at every cell centre of a grid covering the points'
/// bounding box plus `padding_m` on each side.
pub fn kde_grid(points: &[GeoPoint], config: &KdrConfig) -> Result<DensityGrid, KdrError> {
    config.validate()?;
    if points.is_empty() {
        return Err(KdrError::EmptyPointSet);
    }
    let frame = LocalFrame::about_centroid(points)?;
    let local = project_all(&frame, points)?;

    let (mut min_x, mut max_x, mut min_y, mut max_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &local {
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    let mut span_x = max_x - min_x + 2.0 * config.padding_m;
    let mut span_y = max_y - min_y + 2.0 * config.padding_m;
    if span_x <= 0.0 && span_y <= 0.0 {
        span_x = 2.0 * config.bandwidth_m;
        span_y = 2.0 * config.bandwidth_m;
    }
    let cols = config.grid_cols;
    let rows = config.grid_rows;
    let cell = (span_x / cols as f64).max(span_y / rows as f64);
    let center = ((min_x + max_x) / 2.0, (min_y + max_y) / 2.0);
    let origin_m = (
        center.0 - cols as f64 * cell / 2.0 + cell / 2.0,
        center.1 + rows as f64 * cell / 2.0 - cell / 2.0,
    );

    let mut grid = DensityGrid {
        frame,
        origin_m,
        cell_size_m: cell,
        cols,
        rows,
        bandwidth_m: config.bandwidth_m,
        values: Vec::new(),
        kind: GridKind::Kde,
    };
    let h = config.bandwidth_m;
    grid.values = (0..cols * rows)
        .into_par_iter()
        .map(|i| kde_at(&local, grid.cell_center(i % cols, i / cols), h))
        .collect();
    Ok(grid)
}

/// Density at each data point itself, in input order.
pub fn point_densities(points: &[GeoPoint], kde: &DensityGrid) -> Result<Vec<f64>, KdrError> {
    let local = project_all(&kde.frame, points)?;
    Ok(local
        .iter()
        .map(|&q| kde_at(&local, q, kde.bandwidth_m))
        .collect())
}

/// For each query density, the fraction of reference densities `<=` it.
pub fn rank_densities(reference: &[f64], queries: &[f64]) -> Vec<f64> {
    let mut sorted = reference.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    queries
        .iter()
        .map(|&v| sorted.partition_point(|&p| p <= v) as f64 / n)
        .collect()
}

/// Ranks every cell of `kde` against the densities at the data points.
pub fn kdr_grid(points: &[GeoPoint], kde: &DensityGrid) -> Result<DensityGrid, KdrError> {
    if points.is_empty() {
        return Err(KdrError::EmptyPointSet);
    }
    let reference = point_densities(points, kde)?;
    Ok(DensityGrid {
        values: rank_densities(&reference, &kde.values),
        kind: GridKind::Kdr,
        ..kde.clone()
    })
}

/// ESRI ASCII grid. The corner is given in degrees; `cellsize` is the cell
/// edge converted with the latitude scale.
pub fn export_raster(grid: &DensityGrid) -> String {
    let (llx, lly) = grid.lower_left_m();
    let corner = grid.frame.to_geo(llx, lly);
    let mut out = String::new();
    out.push_str(&format!("ncols {}\n", grid.cols));
    out.push_str(&format!("nrows {}\n", grid.rows));
    out.push_str(&format!("xllcorner {}\n", corner.lon));
    out.push_str(&format!("yllcorner {}\n", corner.lat));
    out.push_str(&format!("cellsize {}\n", grid.cell_size_m / grid.frame.meters_per_deg_lat));
    out.push_str(&format!("NODATA_value {}\n", NODATA_VALUE));
    for row in grid.values.chunks(grid.cols) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Parsed ESRI ASCII grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AsciiRaster {
    pub ncols: usize,
    pub nrows: usize,
    pub xllcorner: f64,
    pub yllcorner: f64,
    pub cellsize: f64,
    pub nodata: f64,
    pub values: Vec<f64>,
}

/// Reads the layout written by [`export_raster`]: six header lines in fixed
/// order followed by `nrows` rows of `ncols` values.
pub fn parse_raster(text: &str) -> Result<AsciiRaster, KdrError> {
    let bad = |m: String| KdrError::MalformedRaster(m);
    let mut lines = text.lines();
    let mut header = |key: &str| -> Result<String, KdrError> {
        let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(v), None) if k == key => Ok(v.to_string()),
            _ => Err(bad(format!("expected `{key} <value>`, found {line:?}"))),
        }
    };
    let num = |s: String| s.parse::<f64>().map_err(|e| bad(format!("{s}: {e}")));
    let int = |s: String| s.parse::<usize>().map_err(|e| bad(format!("{s}: {e}")));
    let ncols = int(header("ncols")?)?;
    let nrows = int(header("nrows")?)?;
    let xllcorner = num(header("xllcorner")?)?;
    let yllcorner = num(header("yllcorner")?)?;
    let cellsize = num(header("cellsize")?)?;
    let nodata = num(header("NODATA_value")?)?;
    if !(cellsize > 0.0) {
        return Err(bad(format!("cellsize {cellsize}")));
    }

    let mut values = Vec::with_capacity(ncols * nrows);
    let mut data_rows = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let row = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| bad(format!("{v}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != ncols {
            return Err(bad(format!("row {data_rows} has {} values, expected {ncols}", row.len())));
        }
        values.extend(row);
        data_rows += 1;
    }
    if data_rows != nrows {
        return Err(bad(format!("{data_rows} data rows, expected {nrows}")));
    }
    Ok(AsciiRaster {
        ncols,
        nrows,
        xllcorner,
        yllcorner,
        cellsize,
        nodata,
        values,
    })
}

#[derive(Serialize)]
struct PointCollection {
    #[serde(rename = "type")]
    kind: &'static str,
    features: Vec<PointFeature>,
}

#[derive(Serialize)]
struct PointFeature {
    #[serde(rename = "type")]
    kind: &'static str,
    geometry: PointGeometry,
    properties: PointProperties,
}

#[derive(Serialize)]
struct PointGeometry {
    #[serde(rename = "type")]
    kind: &'static str,
    coordinates: [f64; 2],
}

#[derive(Serialize)]
struct PointProperties {
    density: f64,
    rank: f64,
}

/// GeoJSON dump of every data point with its density and its rank among
/// the data points.
pub fn to_point_geojson(points: &[GeoPoint], kde: &DensityGrid) -> Result<String, KdrError> {
    let densities = point_densities(points, kde)?;
    let ranks = rank_densities(&densities, &densities);
    let collection = PointCollection {
        kind: "FeatureCollection",
        features: points
            .iter()
            .zip(densities.iter().zip(&ranks))
            .map(|(p, (&density, &rank))| PointFeature {
                kind: "Feature",
                geometry: PointGeometry {
                    kind: "Point",
                    coordinates: [p.lon, p.lat],
                },
                properties: PointProperties { density, rank },
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&collection).expect("geojson serializes");
    out.push('\n');
    Ok(out)
}
