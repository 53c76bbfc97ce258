//! Run report (`report.json`) and the flat metric table (`metrics.csv`).

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::config::ExperimentConfig;

pub const SSDI: &str = "SSDI";
pub const RND: &str = "SSDI+RND-GAN";
pub const TSP: &str = "SSDI+TSP-GAN";
pub const SPS: &str = "SSDI+SPS-GAN";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub arms: Vec<ArmReport>,
    /// Hashes of the artifacts every arm should have consumed.
    pub shared: ArtifactHashes,
    pub timings: Vec<StageTiming>,
    pub cache_hits: Vec<String>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHashes {
    pub train: String,
    pub test: String,
    pub pool: String,
    pub init: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub accuracy: f64,
    /// `None` for classes absent from the test set.
    pub per_class: Vec<Option<f64>>,
    /// Kind-specific extras such as subset accuracies.
    pub metrics: BTreeMap<String, f64>,
    pub selection: Option<SelectionSummary>,
    /// Hashes of what this arm actually received.
    pub inputs: ArtifactHashes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub policy: String,
    pub events: usize,
    pub selected: usize,
    pub selected_noise: usize,
    pub selected_per_class: Vec<usize>,
}

impl Report {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `arm,metric,value` rows. Timings are left out so equal configs give
    /// byte-identical tables.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("arm,metric,value\n");
        for arm in &self.arms {
            let mut row = |metric: &str, value: String| {
                let _ = writeln!(out, "{},{metric},{value}", csv_field(&arm.name));
            };
            row("accuracy", arm.accuracy.to_string());
            for (k, acc) in arm.per_class.iter().enumerate() {
                if let Some(a) = acc {
                    row(&format!("class_{k}_accuracy"), a.to_string());
                }
            }
            for (k, v) in &arm.metrics {
                row(k, v.to_string());
            }
            if let Some(s) = &arm.selection {
                row("selected", s.selected.to_string());
                row("selected_noise", s.selected_noise.to_string());
                for (k, n) in s.selected_per_class.iter().enumerate() {
                    row(&format!("class_{k}_selected"), n.to_string());
                }
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentKind;

    fn arm(name: &str) -> ArmReport {
        ArmReport {
            name: name.into(),
            accuracy: 0.75,
            per_class: vec![Some(1.0), None, Some(0.5)],
            metrics: [("augmented_accuracy".to_string(), 0.25)].into(),
            selection: Some(SelectionSummary {
                policy: "random".into(),
                events: 1,
                selected: 3,
                selected_noise: 1,
                selected_per_class: vec![2, 1, 0],
            }),
            inputs: ArtifactHashes::default(),
        }
    }

    #[test]
    fn csv_layout() {
        let r = Report {
            config: ExperimentConfig::quick(ExperimentKind::Insufficiency, 0),
            arms: vec![arm("a,b")],
            shared: ArtifactHashes::default(),
            timings: vec![StageTiming {
                stage: "x".into(),
                seconds: 1.5,
            }],
            cache_hits: vec![],
            notes: vec![],
        };
        let csv = r.metrics_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "arm,metric,value");
        assert_eq!(lines[1], "\"a,b\",accuracy,0.75");
        assert!(lines.contains(&"\"a,b\",class_2_accuracy,0.5"));
        assert!(!csv.contains("class_1_accuracy"));
        assert!(lines.contains(&"\"a,b\",selected_noise,1"));
        assert!(!csv.contains("1.5"));
        let back: Report = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
