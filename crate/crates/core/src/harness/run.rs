use std::fs;
use std::path::{Path, PathBuf};

use super::prepare::{prepare, Prepared};
use super::report::{summarize_artifacts, Report};
use super::spec::{validate_config, ExperimentSpec};
use super::{read_text, write_file, HarnessError};
use crate::data::HiddenLabels;
use crate::federation::{comm_cost, metrics_csv, Simulation};
use crate::model::save_checkpoint;
use crate::semisup::AnnotationRecord;

pub const SPEC_FILE: &str = "spec.toml";
pub const SPLIT_FILE: &str = "split.json";
pub const BASE_FILE: &str = "base.lpfl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const MODEL_FILE: &str = "model.lpfl";
pub const REPORT_FILE: &str = "report.json";
pub const ROUNDS_DIR: &str = "rounds";

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    /// Upper bound on clients trained at the same time. Results do not
    /// depend on it.
    pub parallel_clients: usize,
    /// Continue from the latest round checkpoint in the output directory.
    pub resume: bool,
    /// Stop after this many completed rounds, leaving the run resumable.
    pub stop_after_round: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            parallel_clients: 1,
            resume: false,
            stop_after_round: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    /// Present once every round has run.
    pub report: Option<Report>,
    pub rounds_completed: usize,
    pub output: PathBuf,
}

fn round_dir(output: &Path, round: usize) -> PathBuf {
    output.join(ROUNDS_DIR).join(format!("round-{round}"))
}

/// Highest round with a complete checkpoint, if any.
fn latest_checkpoint(output: &Path) -> Result<Option<usize>, HarnessError> {
    let dir = output.join(ROUNDS_DIR);
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut best = None;
    for entry in fs::read_dir(&dir).map_err(|e| HarnessError::io(&dir, e))? {
        let entry = entry.map_err(|e| HarnessError::io(&dir, e))?;
        let name = entry.file_name();
        if let Some(g) = name
            .to_str()
            .and_then(|n| n.strip_prefix("round-"))
            .and_then(|g| g.parse::<usize>().ok())
        {
            best = best.max(Some(g));
        }
    }
    Ok(best)
}

/// Audit log lines with the hidden true label of each annotated example.
fn audit_jsonl(audit: &[AnnotationRecord], hidden: &HiddenLabels) -> String {
    let mut out = String::new();
    for rec in audit {
        let rec = AnnotationRecord {
            hidden_label: hidden.get(rec.example),
            ..rec.clone()
        };
        out.push_str(&serde_json::to_string(&rec).expect("audit records serialize"));
        out.push('\n');
    }
    out
}

fn write_progress(output: &Path, sim: &Simulation, hidden: &HiddenLabels) -> Result<(), HarnessError> {
    write_file(
        &output.join(METRICS_FILE),
        metrics_csv(sim.history(), &sim.pattern_ids()),
    )?;
    write_file(&output.join(AUDIT_FILE), audit_jsonl(sim.audit(), hidden))
}

/// Saves the round checkpoint atomically: written aside, then renamed.
fn checkpoint(output: &Path, sim: &Simulation) -> Result<(), HarnessError> {
    let g = sim.server().round;
    let dir = round_dir(output, g);
    let tmp = output.join(ROUNDS_DIR).join(format!(".round-{g}.tmp"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    }
    sim.save_state(&tmp)?;
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    }
    fs::rename(&tmp, &dir).map_err(|e| HarnessError::io(&dir, e))
}

/// Runs `spec` end to end, or from its latest round checkpoint when
/// resuming. Writes the spec, split manifest, base checkpoint, metrics CSV,
/// audit log, a checkpoint per round, the final model and the report.
pub fn run(spec: &ExperimentSpec, opts: &RunOptions) -> Result<RunOutcome, HarnessError> {
    let violations = validate_config(spec);
    if !violations.is_empty() {
        return Err(HarnessError::Invalid(violations));
    }
    let out = spec.output.clone();
    fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
    let spec_text = spec.to_toml();
    let resume_from = if opts.resume {
        let previous = read_text(&out.join(SPEC_FILE))
            .map_err(|_| HarnessError::Resume(format!("no {SPEC_FILE} in {}", out.display())))?;
        if previous != spec_text {
            return Err(HarnessError::Resume(format!(
                "{} was written by a different spec",
                out.display()
            )));
        }
        latest_checkpoint(&out)?
    } else {
        let rounds = out.join(ROUNDS_DIR);
        if rounds.exists() {
            fs::remove_dir_all(&rounds).map_err(|e| HarnessError::io(&rounds, e))?;
        }
        for f in [METRICS_FILE, AUDIT_FILE, MODEL_FILE, REPORT_FILE] {
            let p = out.join(f);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| HarnessError::io(&p, e))?;
            }
        }
        None
    };
    write_file(&out.join(SPEC_FILE), &spec_text)?;
    fs::create_dir_all(out.join(ROUNDS_DIR)).map_err(|e| HarnessError::io(&out, e))?;

    let Prepared {
        split,
        task,
        base,
        fingerprint,
        ..
    } = prepare(spec)?;
    split.manifest.write(&out.join(SPLIT_FILE))?;
    save_checkpoint(&base, &out.join(BASE_FILE))?;

    let mut sim = Simulation::new(
        spec.federation.clone(),
        spec.annotation.clone(),
        task,
        base,
        split.clients,
        &split.validation,
        opts.parallel_clients,
    )?;
    let initial_val_accuracy = sim.server().val_accuracy;
    if let Some(g) = resume_from {
        log::info!("resuming after round {g}");
        sim.load_state(&round_dir(&out, g))?;
    }
    write_progress(&out, &sim, &split.hidden)?;
    while !sim.finished() {
        if opts.stop_after_round.is_some_and(|s| sim.server().round >= s) {
            return Ok(RunOutcome {
                report: None,
                rounds_completed: sim.server().round,
                output: out,
            });
        }
        sim.run_round()?;
        checkpoint(&out, &sim)?;
        write_progress(&out, &sim, &split.hidden)?;
    }

    let model = sim.global_model()?;
    save_checkpoint(&model, &out.join(MODEL_FILE))?;
    let test_accuracy = sim.test_accuracy(&split.test)?;
    let artifacts = summarize_artifacts(&read_text(&out.join(METRICS_FILE))?, &read_text(&out.join(AUDIT_FILE))?)?;
    let mode = spec.federation.arm.mode();
    let trainable = model.trainable_parameters(mode);
    let cost = comm_cost(&spec.federation, model.config())?;
    let report = Report {
        name: spec.name.clone(),
        arm: spec.federation.arm,
        clients: spec.federation.clients,
        labeled_fraction: spec.federation.labeled_fraction,
        seed: spec.seed,
        dataset_fingerprint: fingerprint,
        rounds: sim.server().round,
        test_accuracy,
        initial_val_accuracy,
        final_val_accuracy: *artifacts.val_curve.last().expect("at least one round"),
        artifacts,
        payload_bytes: cost.payload_bytes,
        payload_to_fp_ratio: cost.payload_bytes as f64 / cost.fp_payload_bytes as f64,
        trainable_params: trainable.count,
        total_params: trainable.total,
        trainable_ratio: trainable.count as f64 / trainable.total as f64,
        lp_to_fp_ratio: trainable.lp_to_fp_ratio,
    };
    write_file(&out.join(REPORT_FILE), report.to_json())?;
    log::info!(
        "{}: test accuracy {:.4}, final validation accuracy {:.4}",
        report.name,
        report.test_accuracy,
        report.final_val_accuracy
    );
    Ok(RunOutcome {
        rounds_completed: report.rounds,
        report: Some(report),
        output: out,
    })
}
