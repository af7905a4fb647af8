use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, HarnessError};
use crate::federation::Arm;
use crate::semisup::AnnotationRecord;

/// Quantities derived from a metrics CSV and an annotation audit log alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactSummary {
    /// Ensemble validation accuracy after each round, round 1 first.
    pub val_curve: Vec<f64>,
    pub bytes_up: usize,
    pub bytes_down: usize,
    pub annotated: usize,
    /// Annotated examples whose soft-label argmax differs from the hidden
    /// true label.
    pub annotation_errors: usize,
    /// `annotation_errors / annotated`; `None` when nothing was annotated.
    pub annotation_error_rate: Option<f64>,
}

/// Parses the metrics CSV and audit log written by a run.
pub fn summarize_artifacts(metrics_csv: &str, audit_jsonl: &str) -> Result<ArtifactSummary, HarnessError> {
    let bad = |m: String| HarnessError::Artifact(format!("metrics CSV: {m}"));
    let mut lines = metrics_csv.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty".into()))?.split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| bad(format!("missing column {name}")))
    };
    let (c_round, c_val, c_up, c_down) = (col("round")?, col("val_acc")?, col("bytes_up")?, col("bytes_down")?);
    let mut summary = ArtifactSummary {
        val_curve: Vec::new(),
        bytes_up: 0,
        bytes_down: 0,
        annotated: 0,
        annotation_errors: 0,
        annotation_error_rate: None,
    };
    let mut last_round = 0usize;
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(bad(format!(
                "row {} has {} cells, header has {}",
                i + 2,
                cells.len(),
                header.len()
            )));
        }
        let num = |c: usize| -> Result<f64, HarnessError> {
            cells[c]
                .parse::<f64>()
                .map_err(|e| bad(format!("row {}, column {}: {e}", i + 2, header[c])))
        };
        let int = |c: usize| -> Result<usize, HarnessError> {
            cells[c]
                .parse::<usize>()
                .map_err(|e| bad(format!("row {}, column {}: {e}", i + 2, header[c])))
        };
        let round = int(c_round)?;
        if round != last_round {
            if round != last_round + 1 {
                return Err(bad(format!("row {}: round {round} follows {last_round}", i + 2)));
            }
            summary.val_curve.push(num(c_val)?);
            last_round = round;
        }
        summary.bytes_up += int(c_up)?;
        summary.bytes_down += int(c_down)?;
    }
    for (i, line) in audit_jsonl.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: AnnotationRecord =
            serde_json::from_str(line).map_err(|e| HarnessError::Artifact(format!("audit log line {}: {e}", i + 1)))?;
        let truth = rec
            .hidden_label
            .ok_or_else(|| HarnessError::Artifact(format!("audit log line {}: no hidden label", i + 1)))?;
        summary.annotated += 1;
        if crate::prompting::predict(&rec.distribution) != truth {
            summary.annotation_errors += 1;
        }
    }
    if summary.annotated > 0 {
        summary.annotation_error_rate = Some(summary.annotation_errors as f64 / summary.annotated as f64);
    }
    Ok(summary)
}

/// Outcome of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub arm: Arm,
    pub clients: usize,
    pub labeled_fraction: f64,
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub rounds: usize,
    /// Ensemble accuracy of the final global model on the test set, weighted
    /// by the last round's validation pattern accuracies.
    pub test_accuracy: f64,
    /// Ensemble validation accuracy of the pretrained model before round 1.
    pub initial_val_accuracy: f64,
    pub final_val_accuracy: f64,
    #[serde(flatten)]
    pub artifacts: ArtifactSummary,
    /// Tensor bytes of one upload (equal to one broadcast).
    pub payload_bytes: usize,
    /// `payload_bytes` over the bytes of a full-parameter payload.
    pub payload_to_fp_ratio: f64,
    pub trainable_params: usize,
    pub total_params: usize,
    pub trainable_ratio: f64,
    /// Adapter parameters over all parameters, whatever the arm.
    pub lp_to_fp_ratio: f64,
}

impl Report {
    pub fn comm_total(&self) -> usize {
        self.artifacts.bytes_up + self.artifacts.bytes_down
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

pub fn read_report(path: &Path) -> Result<Report, HarnessError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| HarnessError::Artifact(format!("{}: {e}", path.display())))
}

/// Reports side by side. Deltas are relative to the first report.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub reports: Vec<Report>,
}

impl Comparison {
    pub fn test_deltas(&self) -> Vec<f64> {
        let first = self.reports[0].test_accuracy;
        self.reports.iter().map(|r| r.test_accuracy - first).collect()
    }

    pub fn val_deltas(&self) -> Vec<f64> {
        let first = self.reports[0].final_val_accuracy;
        self.reports.iter().map(|r| r.final_val_accuracy - first).collect()
    }

    /// Markdown table, one row per report.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| run | arm | K | labeled | test acc | Δ test | final val acc | Δ val | bytes total | payload/client/round | payload / FP payload |\n\
             |---|---|---|---|---|---|---|---|---|---|---|\n",
        );
        for ((r, dt), dv) in self.reports.iter().zip(self.test_deltas()).zip(self.val_deltas()) {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.0}% | {:.4} | {:+.4} | {:.4} | {:+.4} | {} | {} | {:.4} |",
                r.name,
                r.arm,
                r.clients,
                r.labeled_fraction * 100.0,
                r.test_accuracy,
                dt,
                r.final_val_accuracy,
                dv,
                r.comm_total(),
                r.payload_bytes,
                r.payload_to_fp_ratio
            );
        }
        out
    }
}

/// Lines reports up for comparison; they must share a dataset fingerprint.
pub fn compare(reports: Vec<Report>) -> Result<Comparison, HarnessError> {
    let first = reports
        .first()
        .ok_or_else(|| HarnessError::Config("no reports to compare".into()))?;
    if let Some(r) = reports
        .iter()
        .find(|r| r.dataset_fingerprint != first.dataset_fingerprint)
    {
        return Err(HarnessError::FingerprintMismatch {
            first: first.dataset_fingerprint.clone(),
            other: r.dataset_fingerprint.clone(),
            name: r.name.clone(),
        });
    }
    Ok(Comparison { reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::PatternWeight;
    use crate::semisup::ExampleId;

    const CSV: &str = "round,client,train_loss,val_acc,a_p1,bytes_up,bytes_down,labeled_count,unlabeled_count\n\
        1,0,0.7,0.5,0.5,100,100,10,20\n\
        1,1,0.6,0.5,0.5,100,100,10,20\n\
        2,0,0.3,0.75,0.7,100,100,15,15\n\
        2,1,0.2,0.75,0.7,100,100,15,15\n";

    fn record(dist: Vec<f64>, truth: usize) -> String {
        serde_json::to_string(&AnnotationRecord {
            round: 2,
            client: 0,
            example: ExampleId(1),
            distribution: dist,
            weights: vec![PatternWeight {
                pattern: "p1".into(),
                accuracy: 0.7,
            }],
            hidden_label: Some(truth),
        })
        .unwrap()
    }

    #[test]
    fn summary_from_artifacts() {
        let audit = [
            record(vec![0.8, 0.2], 0),
            record(vec![0.4, 0.6], 0),
            record(vec![0.1, 0.9], 1),
        ]
        .join("\n");
        let s = summarize_artifacts(CSV, &audit).unwrap();
        assert_eq!(s.val_curve, vec![0.5, 0.75]);
        assert_eq!((s.bytes_up, s.bytes_down), (400, 400));
        assert_eq!((s.annotated, s.annotation_errors), (3, 1));
        assert_eq!(s.annotation_error_rate, Some(1.0 / 3.0));
        assert_eq!(summarize_artifacts(CSV, "").unwrap().annotation_error_rate, None);
    }

    #[test]
    fn malformed_artifacts_are_errors() {
        assert!(summarize_artifacts("", "").is_err());
        assert!(summarize_artifacts("round,client\n1,0\n", "").is_err());
        let skipped = CSV.replace("2,0,0.3", "3,0,0.3").replace("2,1,0.2", "3,1,0.2");
        assert!(summarize_artifacts(&skipped, "").is_err());
        let mut no_truth: serde_json::Value = serde_json::from_str(&record(vec![1.0, 0.0], 0)).unwrap();
        no_truth.as_object_mut().unwrap().remove("hidden_label");
        assert!(summarize_artifacts(CSV, &no_truth.to_string()).is_err());
    }

    fn report(name: &str, arm: Arm, test: f64, fp: &str) -> Report {
        Report {
            name: name.into(),
            arm,
            clients: 2,
            labeled_fraction: 0.05,
            seed: 7,
            dataset_fingerprint: fp.into(),
            rounds: 2,
            test_accuracy: test,
            initial_val_accuracy: 0.5,
            final_val_accuracy: test - 0.01,
            artifacts: summarize_artifacts(CSV, "").unwrap(),
            payload_bytes: 100,
            payload_to_fp_ratio: if arm.mode() == crate::model::TrainMode::Lp {
                0.01
            } else {
                1.0
            },
            trainable_params: 10,
            total_params: 1000,
            trainable_ratio: 0.01,
            lp_to_fp_ratio: 0.01,
        }
    }

    #[test]
    fn comparison_table() {
        let reports: Vec<Report> = Arm::ALL
            .iter()
            .enumerate()
            .map(|(i, &a)| report(a.name(), a, 0.9 - 0.01 * i as f64, "abc"))
            .collect();
        let c = compare(reports).unwrap();
        let md = c.to_markdown();
        assert_eq!(md.lines().count(), 2 + 4);
        assert!(md.contains("| lp-fl | lp-fl | 2 | 5% | 0.9000 | +0.0000 |"));
        let deltas = c.test_deltas();
        assert!((deltas[3] + 0.03).abs() < 1e-12);
        assert!(c
            .reports
            .iter()
            .filter(|r| r.arm.mode() == crate::model::TrainMode::Lp)
            .all(|r| r.payload_to_fp_ratio < 1.0));
    }

    #[test]
    fn mismatched_fingerprints_are_rejected() {
        let err = compare(vec![report("a", Arm::LpFl, 0.9, "x"), report("b", Arm::FpFl, 0.9, "y")]);
        assert!(matches!(err, Err(HarnessError::FingerprintMismatch { .. })));
        assert!(compare(Vec::new()).is_err());
    }

    #[test]
    fn report_json_round_trips() {
        let r = report("a", Arm::LpFl, 0.9, "x");
        let back: Report = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
