use phlab::error::Error as PhError;
use phlab::experiment::{
    emit_report, parse_report, render_report, run_experiment, CellReport, Class, Diagnostic, ExperimentConfig, ReportFormat,
    Tolerances, Verdict,
};
use proptest::prelude::*;

const RIGID: &str = include_str!("../../../configs/rigid.json");

fn raw(family: &str, modes: &str, eps: &str, battery: &str) -> String {
    format!(
        r#"{{"matrix": [[2,1,0],[1,2,1],[0,1,1]], "family": "{family}", "modes": {modes},
            "epsilon_sweep": {eps}, "battery": {battery}, "seed": 3, "settings": {{"su_samples": 12}}}}"#
    )
}

fn config(family: &str, modes: &str, eps: &str, battery: &str) -> ExperimentConfig {
    raw(family, modes, eps, battery).parse().unwrap()
}

#[test]
fn conjugated_sweep_is_rigid_everywhere() {
    let cfg: ExperimentConfig = RIGID.parse().unwrap();
    let r = run_experiment(&cfg).unwrap();
    assert_eq!(r.cells.len(), 2);
    for cell in &r.cells {
        for v in &cell.verdicts {
            assert!(matches!(v.class, Class::Rigid | Class::Informational), "{:?} at {}: {:?}", v.diagnostic, cell.epsilon, v);
        }
        assert_eq!(cell.coherent, Some(true));
    }
    assert_eq!(r.coherence, Some(1.0));
}

#[test]
fn perturbed_fixture_reads_non_rigid() {
    let modes = r#"[{"k": [1,0,0], "amplitude": [1,0,0]}]"#;
    let r = run_experiment(&config("perturbed", modes, "[0.05]", r#"["spectrum", "accessibility"]"#)).unwrap();
    let cell = &r.cells[0];
    assert!(cell.dispersion.unwrap() > 1e-4);
    assert!(cell.max_su_defect.unwrap() > 1e-4);
    assert!(cell.verdicts.iter().all(|v| v.class == Class::NonRigid));
    assert_eq!(r.pair_agreement(Diagnostic::Spectrum, Diagnostic::Accessibility), Some(1.0));
}

#[test]
fn csv_has_one_row_per_cell_and_diagnostic() {
    let modes = r#"[{"k": [1,0,0], "amplitude": [1,0,0]}]"#;
    let cfg = config("perturbed", modes, "[0.0, 0.01, 0.03]", r#"["spectrum", "holder"]"#);
    let r = run_experiment(&cfg).unwrap();
    let csv = String::from_utf8(render_report(&r, ReportFormat::Csv).unwrap()).unwrap();
    let mut rows = csv::Reader::from_reader(csv.as_bytes());
    assert_eq!(rows.headers().unwrap().len(), 7);
    let records: Vec<_> = rows.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 3 * 2);
    assert!(records.iter().all(|rec| &rec[0] == "1.0"));
    assert_eq!(&records[1][2], "holder");
    assert_eq!(&records[1][5], "informational");
}

#[test]
fn written_report_parses_back() {
    let modes = r#"[{"k": [0,1,0], "amplitude": [1,0,0]}]"#;
    let r = run_experiment(&config("conjugated", modes, "[0.01]", r#"["spectrum", "cohomology"]"#)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    emit_report(&r, ReportFormat::Json, &path).unwrap();
    let back = parse_report(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, r);
    let err = emit_report(&r, ReportFormat::Json, &dir.path().join("missing/report.json")).unwrap_err();
    assert!(matches!(err, PhError::Io(_)), "{err:?}");
}

#[test]
fn invalid_sweep_is_rejected_before_running() {
    let modes = r#"[{"k": [1,0,0], "amplitude": [1,0,0]}]"#;
    let err = raw("perturbed", modes, "[0.01, 2.0]", r#"["spectrum"]"#).parse::<ExperimentConfig>().unwrap_err();
    match err {
        PhError::ConfigInvalid(msgs) => assert!(msgs.iter().any(|m| m.starts_with("epsilon_sweep[1]")), "{msgs:?}"),
        e => panic!("unexpected {e:?}"),
    }
    let mut cfg = config("perturbed", modes, "[0.01]", r#"["spectrum"]"#);
    cfg.epsilon_sweep.push(2.0);
    assert!(matches!(run_experiment(&cfg), Err(PhError::ConfigInvalid(_))));
}

proptest! {
    #[test]
    fn classification_follows_threshold(v in 0.0f64..1.0, thr in 1e-6f64..1.0) {
        let t = Tolerances { dispersion: thr, su_defect: thr, ..Tolerances::default() };
        let cell = CellReport::default();
        for d in [Diagnostic::Spectrum, Diagnostic::Accessibility] {
            let c = phlab::experiment::classify(d, Some(v), &t, &cell);
            prop_assert_eq!(c == Class::NonRigid, v > thr);
        }
        prop_assert_eq!(phlab::experiment::classify(Diagnostic::Holder, Some(v), &t, &cell), Class::Informational);
        prop_assert_eq!(phlab::experiment::classify(Diagnostic::Spectrum, None, &t, &cell), Class::Failed);
    }

    #[test]
    fn report_floats_survive_json(vals in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 1..6)) {
        let cfg: ExperimentConfig = RIGID.parse().unwrap();
        let mut r = run_experiment(&ExperimentConfig { battery: vec![], ..cfg }).unwrap();
        r.cells = vals
            .iter()
            .map(|&v| CellReport {
                epsilon: v,
                dispersion: Some(v),
                verdicts: vec![Verdict { diagnostic: Diagnostic::Spectrum, value: Some(v), threshold: Some(1e-4), class: Class::Rigid, error: None }],
                ..Default::default()
            })
            .collect();
        let json = String::from_utf8(render_report(&r, ReportFormat::Json).unwrap()).unwrap();
        prop_assert_eq!(parse_report(&json).unwrap(), r);
    }
}
