//! Counting evaluation: mean absolute error of per-route counts and the
//! density-category accuracy (share of routes whose predicted category
//! matches the ground-truth category).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{categorize, per_km_rate, DensityCategory};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no routes to evaluate")]
    EmptyEvalSet,
    #[error("route {route}: length must be positive, got {km} km")]
    InvalidLength { route: String, km: f64 },
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
}

/// Ground-truth and predicted counts for one route. Serialized as
/// `{"route":"id","km":0.75,"gt":29,"pred":27}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteEval {
    #[serde(rename = "route")]
    pub route_id: String,
    #[serde(rename = "km")]
    pub length_km: f64,
    #[serde(rename = "gt")]
    pub gt_count: u64,
    #[serde(rename = "pred")]
    pub pred_count: u64,
}

impl RouteEval {
    pub fn new(route_id: impl Into<String>, length_km: f64, gt_count: u64, pred_count: u64) -> Self {
        Self {
            route_id: route_id.into(),
            length_km,
            gt_count,
            pred_count,
        }
    }

    fn validate(&self) -> Result<(), MetricsError> {
        if !(self.length_km.is_finite() && self.length_km > 0.0) {
            return Err(MetricsError::InvalidLength {
                route: self.route_id.clone(),
                km: self.length_km,
            });
        }
        Ok(())
    }

    pub fn abs_error(&self) -> u64 {
        self.gt_count.abs_diff(self.pred_count)
    }

    fn category_of(&self, count: u64) -> Result<DensityCategory, MetricsError> {
        self.validate()?;
        let rate = per_km_rate(count, self.length_km * 1000.0).map_err(|_| MetricsError::InvalidLength {
            route: self.route_id.clone(),
            km: self.length_km,
        })?;
        Ok(categorize(rate))
    }

    pub fn gt_category(&self) -> Result<DensityCategory, MetricsError> {
        self.category_of(self.gt_count)
    }

    pub fn pred_category(&self) -> Result<DensityCategory, MetricsError> {
        self.category_of(self.pred_count)
    }

    pub fn category_match(&self) -> Result<bool, MetricsError> {
        Ok(self.gt_category()? == self.pred_category()?)
    }
}

fn check(evals: &[RouteEval]) -> Result<(), MetricsError> {
    if evals.is_empty() {
        return Err(MetricsError::EmptyEvalSet);
    }
    evals.iter().try_for_each(RouteEval::validate)
}

pub fn mae(evals: &[RouteEval]) -> Result<f64, MetricsError> {
    check(evals)?;
    let total: u64 = evals.iter().map(RouteEval::abs_error).sum();
    Ok(total as f64 / evals.len() as f64)
}

/// Fraction of routes whose predicted category equals the ground-truth one.
pub fn tcdca(evals: &[RouteEval]) -> Result<f64, MetricsError> {
    check(evals)?;
    let mut correct = 0usize;
    for e in evals {
        if e.category_match()? {
            correct += 1;
        }
    }
    Ok(correct as f64 / evals.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRow {
    pub route: String,
    pub km: f64,
    pub gt: u64,
    pub pred: u64,
    pub abs_error: u64,
    pub gt_per_km: f64,
    pub pred_per_km: f64,
    pub gt_category: DensityCategory,
    pub pred_category: DensityCategory,
    pub category_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub routes: Vec<RouteRow>,
    pub mae: f64,
    pub tcdca: f64,
}

pub fn evaluate(evals: &[RouteEval]) -> Result<EvalReport, MetricsError> {
    let mae = mae(evals)?;
    let tcdca = tcdca(evals)?;
    let routes = evals
        .iter()
        .map(|e| {
            let m = e.length_km * 1000.0;
            let (gt_category, pred_category) = (e.gt_category()?, e.pred_category()?);
            Ok(RouteRow {
                route: e.route_id.clone(),
                km: e.length_km,
                gt: e.gt_count,
                pred: e.pred_count,
                abs_error: e.abs_error(),
                gt_per_km: e.gt_count as f64 * 1000.0 / m,
                pred_per_km: e.pred_count as f64 * 1000.0 / m,
                gt_category,
                pred_category,
                category_match: gt_category == pred_category,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(EvalReport { routes, mae, tcdca })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }
}

/// Reads one [`RouteEval`] per non-blank line.
pub fn parse_evals(text: &str) -> Result<Vec<RouteEval>, MetricsError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<RouteEval>(l).map_err(|e| MetricsError::MalformedRecord {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn write_evals(evals: &[RouteEval]) -> String {
    evals
        .iter()
        .map(|e| serde_json::to_string(e).expect("eval serializes") + "\n")
        .collect()
}
