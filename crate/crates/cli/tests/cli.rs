use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rcql::model::FitDocument;
use rcql::records_csv::{read_records, write_records, ReadMode};
use rcql_core::data::{PatientRecord, SourceKind, StageObservation};
use rcql_core::qlearning::fit_qlearning;
use rcql_core::simlab::{replication_seed, simulate, DgpConfig, TreatmentFree};
use serde_json::Value;

fn rcql(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcql")).args(args).env_remove("DTR_CALIB_LOG").output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// The JSON error object on stderr.
fn error_report(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON on stderr: {text}"));
    serde_json::from_str(line).unwrap()
}

fn assert_success(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_output_does_not_depend_on_parallelism() {
    let dir = tempfile::tempdir().unwrap();
    let mut tables = Vec::new();
    for threads in ["1", "3"] {
        let out_dir = dir.path().join(threads);
        let out = rcql(&[
            "simulate", "--preset", "table2", "--seed", "11", "--n", "150", "--sigma", "0.5,0.9", "--reps", "4",
            "--bootstrap", "5", "--parallelism", threads, "--out", path(&out_dir),
        ]);
        assert_success(&out);
        tables.push(fs::read(out_dir.join("table2.csv")).unwrap());
        let meta: Value = serde_json::from_slice(&fs::read(out_dir.join("table2.meta.json")).unwrap()).unwrap();
        assert_eq!(meta["config"]["seed"], 11);
    }
    assert_eq!(tables[0], tables[1]);
    let text = String::from_utf8(tables.remove(0)).unwrap();
    // four (σ₂, σ₁) cells times four estimators
    assert_eq!(text.lines().count(), 1 + 16);
}

#[test]
fn zero_replications_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rcql(&["simulate", "--preset", "table1", "--seed", "1", "--reps", "0", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_report(&out)["error"], "usage");
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rcql(&["simulate", "--preset", "table1", "--reps", "1", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_from_csv_matches_the_in_process_fit() {
    let dir = tempfile::tempdir().unwrap();
    let out = rcql(&[
        "simulate", "--preset", "table2", "--seed", "5", "--n", "400", "--sigma", "0.7", "--reps", "1",
        "--bootstrap", "0", "--export-data", "--out", path(dir.path()),
    ]);
    assert_success(&out);
    let data = dir.path().join("table2_cell1_data.csv");
    let fit_dir = dir.path().join("fit");
    let out = rcql(&[
        "fit", "--data", path(&data), "--source", "calibrated", "--bootstrap", "0", "--dump-calibration",
        "--out", path(&fit_dir),
    ]);
    assert_success(&out);

    let cfg = DgpConfig::two_stage(400, 0.7, 0.7, TreatmentFree::Linear, 5);
    let records = simulate(&cfg, replication_seed(5, 0)).unwrap();
    let expected = fit_qlearning(&records, &cfg.working_specs(), SourceKind::Calibrated).unwrap();
    let doc = FitDocument::load(&fit_dir.join("fit.json")).unwrap();
    let psi: Vec<f64> = [2, 1].iter().flat_map(|&j| doc.stage(j).unwrap().psi().unwrap()).collect();
    for (got, want) in psi.iter().zip(expected.blip_parameters()) {
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }
    assert!(fit_dir.join("calibration.json").exists());
    assert!(fit_dir.join("fit.meta.json").exists());
}

#[test]
fn fit_bootstrap_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let records = simulate(&DgpConfig::one_stage(200, 0.5, 0), 9).unwrap();
    let data = dir.path().join("one.csv");
    write_records(fs::File::create(&data).unwrap(), &records).unwrap();
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "2"].iter().enumerate() {
        let out_dir = dir.path().join(i.to_string());
        let out = rcql(&[
            "fit", "--data", path(&data), "--bootstrap", "20", "--seed", "4", "--parallelism", threads,
            "--out", path(&out_dir),
        ]);
        assert_success(&out);
        outputs.push(fs::read_to_string(out_dir.join("bootstrap.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert!(outputs[0].starts_with("coefficient,estimate,se,ci_lower,ci_upper\n"));
}

#[test]
fn malformed_row_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "id,z1_1,w1_r1,w1_r2,a1,y\n0,0.1,0.2,0.3,1,2.0\n1,0.1,oops,0.3,0,1.0\n").unwrap();
    let out = rcql(&["fit", "--data", path(&data), "--bootstrap", "0", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let report = error_report(&out);
    assert_eq!(report["error"], "parse");
    assert_eq!(report["line"], 3);
}

#[test]
fn true_source_without_truth_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("no_truth.csv");
    let mut text = String::from("id,z1_1,w1_r1,w1_r2,a1,y\n");
    for i in 0..30 {
        let v = i as f64 / 10.0;
        text.push_str(&format!("{i},{v},{},{},{},{}\n", v * 0.5, v * 0.7, i % 2, v));
    }
    fs::write(&data, text).unwrap();
    let out = rcql(&["fit", "--data", path(&data), "--source", "true", "--bootstrap", "0", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_report(&out)["code"], "missing_source");
}

fn fitted_model(dir: &Path) -> std::path::PathBuf {
    let records = simulate(&DgpConfig::two_stage(300, 0.5, 0.5, TreatmentFree::Linear, 0), 2).unwrap();
    let data = dir.join("train.csv");
    write_records(fs::File::create(&data).unwrap(), &records).unwrap();
    let out = rcql(&["fit", "--data", path(&data), "--bootstrap", "0", "--out", path(dir)]);
    assert_success(&out);
    dir.join("fit.json")
}

#[test]
fn recommend_handles_empty_input_and_partial_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let model = fitted_model(dir.path());

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "id,z1_1,w1_r1,w1_r2,a1\n").unwrap();
    let out_dir = dir.path().join("rec0");
    let out = rcql(&["recommend", "--model", path(&model), "--data", path(&empty), "--out", path(&out_dir)]);
    assert_success(&out);
    assert_eq!(fs::read_to_string(out_dir.join("recommendations.csv")).unwrap(), "id,a1,a2\n");

    let covs = dir.path().join("covs.csv");
    fs::write(&covs, "id,z1_1,w1_r1,w1_r2,a1,z2_1,w2_r1,w2_r2,a2,y\n7,0.1,3.0,3.2,1,,,,,\n8,0.1,-3.0,-3.2,0,0.2,2.0,2.5,,\n")
        .unwrap();
    let out_dir = dir.path().join("rec1");
    let out = rcql(&["recommend", "--model", path(&model), "--data", path(&covs), "--out", path(&out_dir)]);
    assert_success(&out);
    let text = fs::read_to_string(out_dir.join("recommendations.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "id,a1,a2");
    assert!(lines[1].starts_with("7,") && lines[1].ends_with(','), "{}", lines[1]);
    assert_eq!(lines[2].split(',').count(), 3);
}

#[test]
fn recommend_rejects_mismatched_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let model = fitted_model(dir.path());
    let covs = dir.path().join("wide.csv");
    fs::write(&covs, "id,z1_1,z1_2,w1_r1,w1_r2,a1\n1,0.1,0.2,0.3,0.4,1\n").unwrap();
    let out = rcql(&["recommend", "--model", path(&model), "--data", path(&covs), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_report(&out)["error"], "usage");
}

#[test]
fn stard_fixture_writes_the_comparison_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = rcql(&[
        "stard", "--synthetic-fixture", "--seed", "7", "--bootstrap", "20", "--out", path(dir.path()),
    ]);
    assert_success(&out);
    let table = fs::read_to_string(dir.path().join("table6.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next(),
        Some("variable,est_clinician,se,ci,est_patient,se,ci,est_corrected,se,ci")
    );
    assert!(lines.count() >= 4);

    // the written fixture can be fed back in and gives the same table
    let again = dir.path().join("again");
    let fixture = dir.path().join("stard_fixture.csv");
    let out = rcql(&[
        "stard", "--data", path(&fixture), "--seed", "7", "--bootstrap", "20", "--out", path(&again),
    ]);
    assert_success(&out);
    assert_eq!(fs::read_to_string(again.join("table6.csv")).unwrap(), table);
}

#[test]
fn stard_missing_final_score_names_the_patient() {
    let dir = tempfile::tempdir().unwrap();
    let out = rcql(&["stard", "--synthetic-fixture", "--seed", "1", "--bootstrap", "2", "--out", path(dir.path())]);
    assert_success(&out);
    let fixture = fs::read_to_string(dir.path().join("stard_fixture.csv")).unwrap();
    let header: Vec<&str> = fixture.lines().next().unwrap().split(',').collect();
    let (y2, r1) = (
        header.iter().position(|&h| h == "y2").unwrap(),
        header.iter().position(|&h| h == "r1").unwrap(),
    );
    // blank y2 on the first non-remitter
    let mut broken = Vec::new();
    let mut done = false;
    let mut target = String::new();
    for (i, line) in fixture.lines().enumerate() {
        let mut cells: Vec<String> = line.split(',').map(String::from).collect();
        if i > 0 && !done && cells[r1] == "0" {
            cells[y2].clear();
            target = cells[0].clone();
            done = true;
        }
        broken.push(cells.join(","));
    }
    assert!(done);
    let data = dir.path().join("broken.csv");
    fs::write(&data, broken.join("\n") + "\n").unwrap();
    let out = rcql(&["stard", "--data", path(&data), "--bootstrap", "2", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let report = error_report(&out);
    assert_eq!(report["code"], "missing_y2");
    assert!(report["message"].as_str().unwrap().contains(&format!("patient {target}")));
}

#[test]
fn flags_beat_config_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    fs::write(&config, r#"{"preset": "table1", "seed": 3, "n": [100], "sigma": [0.5], "reps": 0, "bootstrap": 0}"#)
        .unwrap();
    let out = rcql(&["simulate", "--config", path(&config), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let out = rcql(&["simulate", "--config", path(&config), "--reps", "2", "--out", path(dir.path())]);
    assert_success(&out);
    let meta: Value = serde_json::from_slice(&fs::read(dir.path().join("table1.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["reps"], 2);
    assert_eq!(meta["config"]["seed"], 3);

    fs::write(&config, r#"{"replications": 2}"#).unwrap();
    let out = rcql(&["simulate", "--config", path(&config), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

mod round_trip {
    use super::*;
    use proptest::prelude::*;

    fn stage() -> impl Strategy<Value = StageObservation> {
        (
            prop::collection::vec(-1e6f64..1e6, 0..3),
            1usize..3,
            1usize..4,
            any::<bool>(),
            any::<bool>(),
            any::<u64>(),
        )
            .prop_map(|(z, dx, reps, has_truth, a, bits)| {
                // replicate 0 is always present; the rest drop out by bit,
                // jointly across coordinates
                let present: Vec<bool> = (0..reps).map(|l| l == 0 || (bits >> l) & 1 == 1).collect();
                let w = (0..dx)
                    .map(|c| {
                        present
                            .iter()
                            .enumerate()
                            .map(|(l, &p)| p.then(|| bits.rotate_left((c * 7 + l) as u32) as f64 / 3.0e15 - 1.7))
                            .collect()
                    })
                    .collect();
                let x = has_truth.then(|| (0..dx).map(|c| c as f64 * 0.1 - 0.05).collect());
                StageObservation::new(z, w, x, a).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn records_survive_a_csv_round_trip(
            s1 in stage(),
            y in -1e3f64..1e3,
            n in 1usize..5,
        ) {
            let records: Vec<PatientRecord> = (0..n)
                .map(|i| PatientRecord::new(i as u64, vec![s1.clone()], y + i as f64, None, None).unwrap())
                .collect();
            let mut buf = Vec::new();
            write_records(&mut buf, &records).unwrap();
            let back = read_records(buf.as_slice(), "mem", ReadMode::Training).unwrap();
            prop_assert_eq!(back, records);
        }
    }
}
