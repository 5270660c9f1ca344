//! Report documents emitted by the evaluation commands, their JSON schemas
//! and a small structural validator.

use serde::{Deserialize, Serialize};

use crate::augment::AugmentSpec;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

/// Schema of the single-evaluation report document.
pub const EVAL_REPORT_SCHEMA: &str = r#"{
  "type": "object",
  "required": ["metrics", "checkpoint", "dataset", "split", "nms_iou_thresh", "augment"],
  "properties": {
    "metrics": {
      "type": "object",
      "required": ["precision", "recall", "map50", "map50_95", "per_class_ap50", "counts", "conf_thresh"],
      "properties": {
        "precision": {"type": "number"},
        "recall": {"type": "number"},
        "map50": {"type": "number"},
        "map50_95": {"type": "number"},
        "per_class_ap50": {"type": "array"},
        "conf_thresh": {"type": "number"},
        "counts": {
          "type": "object",
          "required": ["tp", "fp", "fn_count", "n_images", "n_detections", "n_ground_truths"],
          "properties": {
            "tp": {"type": "integer"},
            "fp": {"type": "integer"},
            "fn_count": {"type": "integer"},
            "n_images": {"type": "integer"},
            "n_detections": {"type": "integer"},
            "n_ground_truths": {"type": "integer"}
          }
        }
      }
    },
    "augment": {"type": ["object", "null"]},
    "checkpoint": {"type": "string"},
    "dataset": {"type": "string"},
    "split": {"type": "string"},
    "nms_iou_thresh": {"type": "number"}
  }
}"#;

/// Schema of the augmentation-grid comparison document.
pub const COMPARE_REPORT_SCHEMA: &str = r#"{
  "type": "object",
  "required": ["rows", "n_runs", "seed", "seed_policy"],
  "properties": {
    "n_runs": {"type": "integer"},
    "seed": {"type": "integer"},
    "seed_policy": {"type": "string"},
    "rows": {
      "type": "array",
      "items": {
        "type": "object",
        "required": ["rotation", "shear", "crop", "model",
                     "precision_mean", "precision_std", "recall_mean", "recall_std",
                     "map50_mean", "map50_std", "map50_95_mean", "map50_95_std"],
        "properties": {
          "rotation": {"type": "boolean"},
          "shear": {"type": "boolean"},
          "crop": {"type": "boolean"},
          "model": {"type": "string"},
          "precision_mean": {"type": "number"},
          "precision_std": {"type": "number"},
          "recall_mean": {"type": "number"},
          "recall_std": {"type": "number"},
          "map50_mean": {"type": "number"},
          "map50_std": {"type": "number"},
          "map50_95_mean": {"type": "number"},
          "map50_95_std": {"type": "number"}
        }
      }
    }
  }
}"#;

/// Validate a JSON value against the subset of JSON Schema used above:
/// `type` (string or list), `required`, `properties`, `items`.
pub fn validate_against_schema(schema: &serde_json::Value, value: &serde_json::Value) -> Result<()> {
    fn type_matches(ty: &str, v: &serde_json::Value) -> bool {
        match ty {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "number" => v.is_number(),
            "integer" => v.is_i64() || v.is_u64(),
            "boolean" => v.is_boolean(),
            "null" => v.is_null(),
            _ => false,
        }
    }
    fn walk(schema: &serde_json::Value, value: &serde_json::Value, path: &str) -> Result<()> {
        if let Some(ty) = schema.get("type") {
            let ok = match ty {
                serde_json::Value::String(t) => type_matches(t, value),
                serde_json::Value::Array(ts) => ts
                    .iter()
                    .filter_map(|t| t.as_str())
                    .any(|t| type_matches(t, value)),
                _ => return Err(Error::Config(format!("bad schema type at {path}"))),
            };
            if !ok {
                return Err(Error::Config(format!(
                    "schema violation at '{path}': expected {ty}, got {value}"
                )));
            }
        }
        if let Some(required) = schema.get("required").and_then(|r| r.as_array()) {
            if let Some(obj) = value.as_object() {
                for key in required.iter().filter_map(|k| k.as_str()) {
                    if !obj.contains_key(key) {
                        return Err(Error::Config(format!(
                            "schema violation at '{path}': missing required key '{key}'"
                        )));
                    }
                }
            }
        }
        if let Some(props) = schema.get("properties").and_then(|p| p.as_object()) {
            if let Some(obj) = value.as_object() {
                for (key, sub) in props {
                    if let Some(v) = obj.get(key) {
                        walk(sub, v, &format!("{path}/{key}"))?;
                    }
                }
            }
        }
        if let Some(items) = schema.get("items") {
            if let Some(arr) = value.as_array() {
                for (i, v) in arr.iter().enumerate() {
                    walk(items, v, &format!("{path}[{i}]"))?;
                }
            }
        }
        Ok(())
    }
    walk(schema, value, "")
}

/// Output of one `eval` invocation; the augmentation block is echoed
/// verbatim when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: MetricsReport,
    pub augment: Option<AugmentSpec>,
    pub checkpoint: String,
    pub dataset: String,
    pub split: String,
    pub nms_iou_thresh: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<serde_json::Value> {
        let v = serde_json::to_value(self)?;
        validate_against_schema(&serde_json::from_str(EVAL_REPORT_SCHEMA)?, &v)?;
        Ok(v)
    }
}

/// One line of the augmentation-grid comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub rotation: bool,
    pub shear: bool,
    pub crop: bool,
    pub model: String,
    pub precision_mean: f64,
    pub precision_std: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub map50_mean: f64,
    pub map50_std: f64,
    pub map50_95_mean: f64,
    pub map50_95_std: f64,
}

/// Grid comparison: 8 augmentation combinations x 2 models, mean and
/// sample standard deviation over `n_runs` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub n_runs: usize,
    pub seed: u64,
    pub seed_policy: String,
}

impl CompareReport {
    pub fn to_json(&self) -> Result<serde_json::Value> {
        let v = serde_json::to_value(self)?;
        validate_against_schema(&serde_json::from_str(COMPARE_REPORT_SCHEMA)?, &v)?;
        Ok(v)
    }

    /// Aligned text table in percent, mean +/- one standard deviation.
    pub fn to_text_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:<9} {:<6} {:<5} {:<10} {:>16} {:>16} {:>16} {:>18}\n",
            "Rotation", "Shear", "Crop", "Model", "Precision", "Recall", "mAP@0.5", "mAP@0.5:0.95"
        ));
        let mark = |b: bool| if b { "x" } else { "" };
        let cell = |mean: f64, std: f64| format!("{:.2} +/- {:.2}", mean * 100.0, std * 100.0);
        for r in &self.rows {
            s.push_str(&format!(
                "{:<9} {:<6} {:<5} {:<10} {:>16} {:>16} {:>16} {:>18}\n",
                mark(r.rotation),
                mark(r.shear),
                mark(r.crop),
                r.model,
                cell(r.precision_mean, r.precision_std),
                cell(r.recall_mean, r.recall_std),
                cell(r.map50_mean, r.map50_std),
                cell(r.map50_95_mean, r.map50_95_std),
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Counts;

    fn sample_metrics() -> MetricsReport {
        MetricsReport {
            precision: 0.9,
            recall: 0.8,
            map50: 0.7,
            map50_95: 0.5,
            per_class_ap50: vec![(0, 0.7)],
            counts: Counts {
                tp: 8,
                fp: 1,
                fn_count: 2,
                n_images: 4,
                n_detections: 9,
                n_ground_truths: 10,
            },
            conf_thresh: 0.25,
        }
    }

    #[test]
    fn eval_report_validates() {
        let r = EvalReport {
            metrics: sample_metrics(),
            augment: None,
            checkpoint: "best.ckpt".into(),
            dataset: "/data".into(),
            split: "test".into(),
            nms_iou_thresh: 0.45,
        };
        r.to_json().unwrap();
    }

    #[test]
    fn eval_report_with_augment_echoes_spec() {
        let spec = crate::augment::AugmentSpec::from_flags(true, false, true, 9);
        let r = EvalReport {
            metrics: sample_metrics(),
            augment: Some(spec.clone()),
            checkpoint: "c".into(),
            dataset: "d".into(),
            split: "test".into(),
            nms_iou_thresh: 0.45,
        };
        let v = r.to_json().unwrap();
        let echoed: crate::augment::AugmentSpec =
            serde_json::from_value(v["augment"].clone()).unwrap();
        assert_eq!(echoed, spec);
    }

    #[test]
    fn schema_rejects_missing_field() {
        let schema: serde_json::Value = serde_json::from_str(EVAL_REPORT_SCHEMA).unwrap();
        let bad = serde_json::json!({"metrics": {}, "checkpoint": "c"});
        assert!(validate_against_schema(&schema, &bad).is_err());
    }

    #[test]
    fn schema_rejects_wrong_type() {
        let schema: serde_json::Value = serde_json::from_str(COMPARE_REPORT_SCHEMA).unwrap();
        let bad = serde_json::json!({
            "rows": [], "n_runs": "three", "seed": 7, "seed_policy": "x"
        });
        assert!(validate_against_schema(&schema, &bad).is_err());
    }

    #[test]
    fn compare_table_renders_all_rows() {
        let mut rows = Vec::new();
        for flags in crate::augment::grid_rows() {
            for model in ["baseline", "stn"] {
                rows.push(CompareRow {
                    rotation: flags[0],
                    shear: flags[1],
                    crop: flags[2],
                    model: model.into(),
                    precision_mean: 0.9,
                    precision_std: 0.01,
                    recall_mean: 0.8,
                    recall_std: 0.02,
                    map50_mean: 0.7,
                    map50_std: 0.0,
                    map50_95_mean: 0.6,
                    map50_95_std: 0.0,
                });
            }
        }
        let report = CompareReport {
            rows,
            n_runs: 3,
            seed: 7,
            seed_policy: "augment seed varies per run".into(),
        };
        report.to_json().unwrap();
        let table = report.to_text_table();
        assert_eq!(table.lines().count(), 17); // header + 16 rows
        assert!(table.contains("90.00 +/- 1.00"));
    }
}
