//! Instance files.
//!
//! ```json
//! {
//!   "name": "two_point",
//!   "metric": { "type": "matrix", "data": [[0, 1], [1, 0]] },
//!   "labels": ["a", "b"],
//!   "measure": { "weights": [0.5, 0.5] }
//! }
//! ```
//!
//! `type` is one of `matrix` (distances), `points` (Euclidean coordinates) or
//! `covariance`. `labels` and `measure` are optional.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianModel;
use crate::measure::ProbabilityMeasure;
use crate::metric::FiniteMetricSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Matrix,
    Points,
    Covariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    #[serde(rename = "type")]
    pub kind: MetricKind,
    pub data: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub name: String,
    pub metric: MetricSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureSpec>,
}

/// Parse failure with the location reported by the JSON reader.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {} column {}: {}", self.line, self.column, self.message)
    }
}

impl Instance {
    pub fn parse(text: &str) -> std::result::Result<Self, ParseError> {
        serde_json::from_str(text).map_err(|e| ParseError { line: e.line(), column: e.column(), message: e.to_string() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn space(&self) -> Result<FiniteMetricSpace> {
        let data = &self.metric.data;
        let space = match self.metric.kind {
            MetricKind::Matrix => FiniteMetricSpace::from_distance_matrix(data),
            MetricKind::Points => FiniteMetricSpace::from_points(data),
            MetricKind::Covariance => FiniteMetricSpace::from_covariance(data),
        }
        .map_err(|e| field_error("metric.data", e))?;
        match &self.labels {
            Some(l) => space.with_labels(l.clone()).map_err(|e| field_error("labels", e)),
            None => Ok(space),
        }
    }

    /// The Gaussian model behind the instance: the Gram matrix for points, the
    /// covariance itself, or the anchored covariance of an embeddable metric.
    pub fn model(&self) -> Result<GaussianModel> {
        let data = &self.metric.data;
        match self.metric.kind {
            MetricKind::Matrix => GaussianModel::from_space(&self.space()?),
            MetricKind::Points => GaussianModel::from_points(data),
            MetricKind::Covariance => GaussianModel::new(data.clone()),
        }
        .map_err(|e| field_error("metric.data", e))
    }

    /// The attached measure, or `None` when absent.
    pub fn measure(&self, n: usize) -> Result<Option<ProbabilityMeasure>> {
        let Some(m) = &self.measure else { return Ok(None) };
        if m.weights.len() != n {
            return Err(Error::InvalidMeasure(format!(
                "measure.weights has {} entries, the metric has {n} points",
                m.weights.len()
            )));
        }
        ProbabilityMeasure::new(m.weights.clone()).map(Some).map_err(|e| field_error("measure.weights", e))
    }
}

fn field_error(field: &str, e: Error) -> Error {
    match e {
        Error::Factorization { .. } | Error::Numeric(_) => e,
        Error::InvalidMeasure(m) => Error::InvalidMeasure(format!("{field}: {m}")),
        other => Error::InvalidParameter(format!("{field}: {other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let text = r#"{"name":"t","metric":{"type":"points","data":[[0],[1],[3]]},"measure":{"weights":[0.2,0.3,0.5]}}"#;
        let inst = Instance::parse(text).unwrap();
        assert_eq!(Instance::parse(&inst.to_json()).unwrap(), inst);
        let s = inst.space().unwrap();
        assert_eq!(s.diam(), 3.0);
        assert_eq!(inst.measure(3).unwrap().unwrap().weights()[2], 0.5);
        assert!(inst.measure(4).is_err());
        assert!((inst.model().unwrap().space().dist(0, 2) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn parse_errors_carry_location() {
        let e = Instance::parse("{\n  \"name\": 3\n}").unwrap_err();
        assert_eq!(e.line, 2);
        let e = Instance::parse(r#"{"name":"x","metric":{"type":"tree","data":[]}}"#).unwrap_err();
        assert!(e.message.contains("tree"));
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let inst = Instance::parse(r#"{"name":"x","metric":{"type":"matrix","data":[[0,1],[2,0]]}}"#).unwrap();
        let msg = inst.space().unwrap_err().to_string();
        assert!(msg.contains("metric.data"), "{msg}");
    }
}
