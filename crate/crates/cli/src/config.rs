//! Experiment configuration files and parameter grids.

use serde::Deserialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const DEFAULT_MAX_POINTS: usize = 10_000;
pub const MAX_AXES: usize = 3;

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    /// `ℏ = 1`, `ω_x = 1`.
    #[default]
    Natural,
    Si,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: String,
    pub values: Vec<Value>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
    pub prefix: Option<String>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scheme: Option<String>,
    #[serde(default)]
    pub units: Units,
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
    pub max_points: Option<usize>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// A parsed config together with the text it came from.
#[derive(Clone, Debug)]
pub struct Config {
    pub text: String,
    pub hash: String,
    pub file: ConfigFile,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let file: ConfigFile = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        let hash = Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self { text: text.to_string(), hash, file })
    }
}

/// One point of the grid: its lexicographic index, the swept values in
/// axis order, and the merged parameter object.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub values: Vec<Value>,
    pub params: Map<String, Value>,
}

/// Expands the sweep; the first axis varies slowest. Without a sweep the
/// grid is the single point `params`.
pub fn expand_grid(params: &Map<String, Value>, axes: &[SweepAxis], max_points: usize) -> Result<Vec<GridPoint>, CliError> {
    if axes.len() > MAX_AXES {
        return Err(CliError::Config(format!("sweep has {} axes; at most {MAX_AXES} are allowed", axes.len())));
    }
    let mut total = 1usize;
    for (i, a) in axes.iter().enumerate() {
        if a.values.is_empty() {
            return Err(CliError::Config(format!("sweep axis {:?} has no values", a.param)));
        }
        if axes[..i].iter().any(|b| b.param == a.param) {
            return Err(CliError::Config(format!("sweep axis {:?} listed twice", a.param)));
        }
        if let Some(v) = a.values.iter().find(|v| !v.is_number()) {
            return Err(CliError::Config(format!("sweep axis {:?}: value {v} is not a number", a.param)));
        }
        total = total.saturating_mul(a.values.len());
    }
    if total > max_points {
        return Err(CliError::Config(format!("sweep has {total} points, above the cap of {max_points}")));
    }
    let mut points = Vec::with_capacity(total);
    for index in 0..total {
        let mut rem = index;
        let mut values = vec![Value::Null; axes.len()];
        for (k, a) in axes.iter().enumerate().rev() {
            values[k] = a.values[rem % a.values.len()].clone();
            rem /= a.values.len();
        }
        let mut merged = params.clone();
        for (a, v) in axes.iter().zip(&values) {
            merged.insert(a.param.clone(), v.clone());
        }
        points.push(GridPoint { index, values, params: merged });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn axis(p: &str, v: Value) -> SweepAxis {
        SweepAxis { param: p.into(), values: v.as_array().unwrap().clone() }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::parse(r#"{"params": {}, "bogus": 1}"#).is_err());
        assert!(Config::parse(r#"{"units": "furlongs"}"#).is_err());
        let c = Config::parse(r#"{"units": "si", "seed": 4}"#).unwrap();
        assert_eq!(c.file.units, Units::Si);
        assert_eq!(c.hash.len(), 64);
    }

    #[test]
    fn grid_is_lexicographic() {
        let axes = [axis("a", json!([1, 2])), axis("b", json!([10, 20, 30]))];
        let g = expand_grid(&Map::new(), &axes, 100).unwrap();
        let got: Vec<(i64, i64)> = g.iter().map(|p| (p.values[0].as_i64().unwrap(), p.values[1].as_i64().unwrap())).collect();
        assert_eq!(got, vec![(1, 10), (1, 20), (1, 30), (2, 10), (2, 20), (2, 30)]);
        assert_eq!(g[4].params["b"], json!(20));
    }

    #[test]
    fn grid_limits() {
        let many = axis("a", Value::Array((0..101).map(Value::from).collect()));
        assert!(expand_grid(&Map::new(), &[many.clone(), many], 10_000).is_err());
        let four: Vec<SweepAxis> = ["a", "b", "c", "d"].iter().map(|p| axis(p, json!([1]))).collect();
        assert!(expand_grid(&Map::new(), &four, 10).is_err());
        assert!(expand_grid(&Map::new(), &[axis("a", json!([1])), axis("a", json!([2]))], 10).is_err());
        assert_eq!(expand_grid(&Map::new(), &[], 10).unwrap().len(), 1);
    }
}
