use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric values, the configuration that produced them and digests of the
/// inputs. Keys are kept sorted so the JSON is stable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub config: BTreeMap<String, serde_json::Value>,
    pub digests: BTreeMap<String, String>,
}

/// Metrics named `*_diff` are signed differences of unit-interval metrics.
pub fn metric_range(name: &str) -> (f64, f64) {
    if name.ends_with("_diff") {
        (-1.0, 1.0)
    } else {
        (0.0, 1.0)
    }
}

impl EvalReport {
    pub fn insert_metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn insert_config(&mut self, name: impl Into<String>, value: impl Serialize) -> Result<()> {
        self.config.insert(name.into(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, &v) in &self.metrics {
            let (lo, hi) = metric_range(name);
            if !v.is_finite() || v < lo || v > hi {
                return Err(Error::NonFinite(format!("metric {name} = {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let mut r = EvalReport::default();
        r.insert_metric("map", 0.8125);
        r.insert_metric("map_combined_minus_temporal_diff", -0.01);
        r.insert_config("knn", serde_json::json!({"k": 200, "effective_k": 49})).unwrap();
        r.digests.insert("embeddings".into(), "sha256:00".into());
        let text = r.to_json().unwrap();
        let back = EvalReport::from_json(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn out_of_range_rejected() {
        let mut r = EvalReport::default();
        r.insert_metric("map", 1.5);
        assert!(r.validate().is_err());
        r.insert_metric("map", f64::NAN);
        assert!(r.to_json().is_err());
    }
}
