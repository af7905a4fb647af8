//! End-to-end runs of small experiments: artifacts, determinism, resume,
//! arm contracts and comparison.

use std::fs;
use std::path::Path;

use lpfl::federation::Arm;
use lpfl::harness::{
    compare, read_report, run, summarize_artifacts, validate_config, ExperimentSpec, HarnessError, Overrides, Report,
    RunOptions, AUDIT_FILE, BASE_FILE, METRICS_FILE, MODEL_FILE, REPORT_FILE, SPEC_FILE, SPLIT_FILE,
};
use lpfl::model::{is_adapter, load_checkpoint};
use tempfile::TempDir;

/// A small synthetic experiment that runs in a few seconds.
fn tiny_spec(out: &Path, cache: &Path) -> ExperimentSpec {
    let text = format!(
        r#"
        name = "tiny"
        seed = 11
        output = "{out}"

        [federation]
        clients = 2
        rounds = 3
        local_epochs = 1
        batch_size = 4
        arm = "lp-fl"
        labeled_fraction = 0.1
        [federation.optimizer]
        kind = "adam"
        lr = 1e-2

        [model]
        vocab_size = 200
        d_model = 16
        n_layers = 1
        n_heads = 2
        d_ff = 16
        max_len = 32
        lora_rank = 2

        [annotation]
        accuracy_gate = false

        [data]
        val_size = 40
        test_size = 40
        [data.synthetic]
        n = 240
        vocab_size = 100
        signal_words_per_label = 5

        [pretrain]
        background_docs = 200
        cache_dir = "{cache}"
        [pretrain.training]
        steps = 20
        batch_size = 4
        "#,
        out = out.display(),
        cache = cache.display(),
    );
    ExperimentSpec::from_toml(&text, Path::new("/")).unwrap()
}

fn read(dir: &Path, file: &str) -> String {
    fs::read_to_string(dir.join(file)).unwrap()
}

fn run_to_end(spec: &ExperimentSpec) -> Report {
    run(spec, &RunOptions::default()).unwrap().report.unwrap()
}

#[test]
fn run_writes_artifacts_consistent_with_the_report() {
    let (out, cache) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let spec = tiny_spec(out.path(), cache.path());
    assert!(validate_config(&spec).is_empty());
    let report = run_to_end(&spec);
    for f in [
        SPEC_FILE,
        SPLIT_FILE,
        BASE_FILE,
        METRICS_FILE,
        AUDIT_FILE,
        MODEL_FILE,
        REPORT_FILE,
    ] {
        assert!(out.path().join(f).is_file(), "{f} missing");
    }
    assert_eq!(read_report(&out.path().join(REPORT_FILE)).unwrap(), report);

    // Every derived number comes back from the CSV and audit log.
    let recomputed = summarize_artifacts(&read(out.path(), METRICS_FILE), &read(out.path(), AUDIT_FILE)).unwrap();
    assert_eq!(recomputed, report.artifacts);
    assert_eq!(report.artifacts.val_curve.len(), 3);
    assert_eq!(report.final_val_accuracy, report.artifacts.val_curve[2]);

    // Gate disabled: the whole pool is annotated within the window.
    let csv = read(out.path(), METRICS_FILE);
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3 * 2);
    for row in rows.iter().filter(|r| r.starts_with("3,")) {
        assert!(row.ends_with(",0"), "pool not exhausted: {row}");
    }
    let audit_lines = read(out.path(), AUDIT_FILE).lines().count();
    assert_eq!(report.artifacts.annotated, audit_lines);
    assert!(audit_lines > 0);

    // Communication and parameter arithmetic.
    let model = load_checkpoint(&out.path().join(MODEL_FILE)).unwrap();
    let cfg = model.config();
    assert_eq!(report.payload_bytes, cfg.adapter_param_count() * 8);
    assert_eq!(report.artifacts.bytes_up, 3 * 2 * report.payload_bytes);
    assert_eq!(report.artifacts.bytes_down, report.artifacts.bytes_up);
    assert_eq!(report.trainable_params, cfg.adapter_param_count());
    assert_eq!(report.total_params, cfg.total_param_count());
    assert_eq!(
        report.trainable_ratio,
        cfg.adapter_param_count() as f64 / cfg.total_param_count() as f64
    );
    assert!(report.payload_to_fp_ratio < 1.0);

    // The frozen base is bitwise unchanged in the final model.
    let base = load_checkpoint(&out.path().join(BASE_FILE)).unwrap();
    for (id, t) in base.params().iter().filter(|(id, _)| !is_adapter(id)) {
        assert_eq!(t.data(), model.params().get(id).unwrap().data(), "{id} changed");
    }
    assert_ne!(base.adapter_params(), model.adapter_params());
}

#[test]
fn identical_seeds_give_identical_artifacts() {
    let cache = TempDir::new().unwrap();
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let ra = run_to_end(&tiny_spec(a.path(), cache.path()));
    let rb = run_to_end(&tiny_spec(b.path(), cache.path()));
    assert_eq!(read(a.path(), METRICS_FILE), read(b.path(), METRICS_FILE));
    assert_eq!(read(a.path(), AUDIT_FILE), read(b.path(), AUDIT_FILE));
    assert_eq!(
        fs::read(a.path().join(MODEL_FILE)).unwrap(),
        fs::read(b.path().join(MODEL_FILE)).unwrap()
    );
    assert_eq!(ra.test_accuracy, rb.test_accuracy);

    let c = TempDir::new().unwrap();
    let mut other = tiny_spec(c.path(), cache.path());
    other.apply(&Overrides {
        seed: Some(12),
        ..Default::default()
    });
    run_to_end(&other);
    assert_ne!(read(a.path(), METRICS_FILE), read(c.path(), METRICS_FILE));
}

#[test]
fn parallel_clients_do_not_change_results() {
    let cache = TempDir::new().unwrap();
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let mut sa = tiny_spec(a.path(), cache.path());
    sa.federation.clients = 3;
    let mut sb = sa.clone();
    sb.output = b.path().to_path_buf();
    run(&sa, &RunOptions::default()).unwrap();
    run(
        &sb,
        &RunOptions {
            parallel_clients: 3,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(read(a.path(), METRICS_FILE), read(b.path(), METRICS_FILE));
    assert_eq!(read(a.path(), AUDIT_FILE), read(b.path(), AUDIT_FILE));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let cache = TempDir::new().unwrap();
    let (full, parts) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let whole = run_to_end(&tiny_spec(full.path(), cache.path()));

    let spec = tiny_spec(parts.path(), cache.path());
    let first = run(
        &spec,
        &RunOptions {
            stop_after_round: Some(1),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(first.rounds_completed, 1);
    assert!(first.report.is_none());
    assert_eq!(read(parts.path(), METRICS_FILE).lines().count(), 1 + 2);

    let resumed = run(
        &spec,
        &RunOptions {
            resume: true,
            ..Default::default()
        },
    )
    .unwrap();
    let report = resumed.report.unwrap();
    assert_eq!(read(full.path(), METRICS_FILE), read(parts.path(), METRICS_FILE));
    assert_eq!(read(full.path(), AUDIT_FILE), read(parts.path(), AUDIT_FILE));
    assert_eq!(report.test_accuracy, whole.test_accuracy);
    assert_eq!(report.artifacts, whole.artifacts);

    let mut changed = spec.clone();
    changed.federation.local_epochs = 2;
    let err = run(
        &changed,
        &RunOptions {
            resume: true,
            ..Default::default()
        },
    );
    assert!(matches!(err, Err(HarnessError::Resume(_))));
}

#[test]
fn lp_ct_equals_lp_fl_with_one_client() {
    let cache = TempDir::new().unwrap();
    let (fl, ct) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let mut s_fl = tiny_spec(fl.path(), cache.path());
    s_fl.federation.clients = 1;
    let mut s_ct = tiny_spec(ct.path(), cache.path());
    s_ct.apply(&Overrides {
        arm: Some(Arm::LpCt),
        ..Default::default()
    });
    let (r_fl, r_ct) = (run_to_end(&s_fl), run_to_end(&s_ct));
    assert_eq!(read(fl.path(), METRICS_FILE), read(ct.path(), METRICS_FILE));
    assert_eq!(r_fl.test_accuracy, r_ct.test_accuracy);
    assert_eq!(r_fl.artifacts, r_ct.artifacts);
}

#[test]
fn four_arms_compare_into_one_table() {
    let cache = TempDir::new().unwrap();
    let mut reports = Vec::new();
    let mut dirs = Vec::new();
    for arm in Arm::ALL {
        let dir = TempDir::new().unwrap();
        let mut spec = tiny_spec(dir.path(), cache.path());
        spec.apply(&Overrides {
            arm: Some(arm),
            ..Default::default()
        });
        spec.name = arm.name().into();
        let r = run_to_end(&spec);
        // The final round leaves every pool empty in every arm.
        let csv = read(dir.path(), METRICS_FILE);
        for row in csv.lines().filter(|r| r.starts_with("3,")) {
            assert!(row.ends_with(",0"), "{arm}: {row}");
        }
        if arm.mode() == lpfl::model::TrainMode::Fp {
            assert_eq!(r.payload_to_fp_ratio, 1.0);
            assert_eq!(r.trainable_ratio, 1.0);
            let base = load_checkpoint(&dir.path().join(BASE_FILE)).unwrap();
            let model = load_checkpoint(&dir.path().join(MODEL_FILE)).unwrap();
            assert_ne!(base.base_params(), model.base_params());
        }
        reports.push(r);
        dirs.push(dir);
    }
    let table = compare(reports.clone()).unwrap();
    let md = table.to_markdown();
    assert_eq!(md.lines().count(), 2 + 4, "{md}");
    for r in &reports {
        assert_eq!(r.payload_to_fp_ratio < 1.0, r.arm.mode() == lpfl::model::TrainMode::Lp);
    }
    // Deltas agree with the individual CSVs.
    let finals: Vec<f64> = dirs
        .iter()
        .map(|d| {
            let s = summarize_artifacts(&read(d.path(), METRICS_FILE), &read(d.path(), AUDIT_FILE)).unwrap();
            *s.val_curve.last().unwrap()
        })
        .collect();
    for (delta, f) in table.val_deltas().iter().zip(&finals) {
        assert_eq!(*delta, f - finals[0]);
    }

    let mut foreign = reports[0].clone();
    foreign.dataset_fingerprint = "other".into();
    assert!(matches!(
        compare(vec![reports[0].clone(), foreign]),
        Err(HarnessError::FingerprintMismatch { .. })
    ));
}

#[test]
fn invalid_specs_fail_before_training() {
    let (out, cache) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let target = out.path().join("run");
    let mut spec = tiny_spec(&target, cache.path());
    spec.model.lora_rank = 16;
    match run(&spec, &RunOptions::default()) {
        Err(HarnessError::Invalid(v)) => assert!(v.iter().all(|v| v.field == "model.lora_rank")),
        other => panic!("expected a validation failure, got {other:?}"),
    }
    assert!(!target.exists());
}

#[test]
fn shipped_config_is_valid() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml");
    let spec = ExperimentSpec::load(&path).unwrap();
    assert!(validate_config(&spec).is_empty(), "{:?}", validate_config(&spec));
    assert_eq!(spec.federation.arm, Arm::LpFl);
    assert_eq!(spec.seed, spec.federation.seed);
}
