use mtam_core::gradcheck::{run_suites, Scope, TOLERANCE};
use mtam_core::tape::OpKind;

#[test]
fn every_suite_is_within_tolerance() {
    let rows = run_suites(Scope::All, None).unwrap();
    let mut worst = 0.0f64;
    for r in &rows {
        println!(
            "{:<24} {:<22} {:.3e}",
            r.suite, r.report.name, r.report.max_rel_error
        );
        worst = worst.max(r.report.max_rel_error);
    }
    assert!(rows.iter().all(|r| r.passed()), "worst {worst:e}");
}

#[test]
fn scopes_select_their_suites() {
    let rnn = run_suites(Scope::Rnn, None).unwrap();
    assert!(rnn.iter().all(|r| r.suite == "rnn"));
    assert!(rnn.iter().any(|r| r.report.name == "tgate.w_delta"));
    let att = run_suites(Scope::Attention, None).unwrap();
    assert!(att.iter().any(|r| r.report.name == "att.w_tau"));
    let model = run_suites(Scope::Model, None).unwrap();
    assert_eq!(
        model
            .iter()
            .map(|r| r.suite.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .len(),
        6
    );
}

#[test]
fn flipped_backward_rules_are_caught() {
    for kind in [
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::MatMul,
        OpKind::Softmax,
    ] {
        let rows = run_suites(Scope::All, Some(kind)).unwrap();
        let worst = rows
            .iter()
            .map(|r| r.report.max_rel_error)
            .fold(0.0, f64::max);
        assert!(worst > TOLERANCE, "{kind:?} went unnoticed");
    }
}
