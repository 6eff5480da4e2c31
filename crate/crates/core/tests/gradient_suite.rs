use regcgan::verify::{gradient_suite, suite_ops, Fault, SuiteOptions};

#[test]
fn full_suite_passes() {
    let report = gradient_suite(&SuiteOptions::default()).unwrap();
    assert!(report.passed(), "\n{}", report.table());
    assert!(report.ops.iter().all(|o| o.instances >= 20 && o.checked > 0));
    for op in [
        "conv2d",
        "conv2d_transpose",
        "batch_norm",
        "reg_g",
        "reg_d",
        "uda_d_objective",
    ] {
        assert!(suite_ops().contains(&op), "{op}");
    }
}

#[test]
fn injected_reg_g_sign_bug_is_caught_and_named() {
    let opts = SuiteOptions {
        instances: 3,
        fault: Some(Fault::RegGSignFlip),
        ..SuiteOptions::default()
    };
    let report = gradient_suite(&opts).unwrap();
    let failed: Vec<_> = report.failed().map(|o| o.name).collect();
    assert_eq!(failed, ["reg_g"]);
    assert!(report
        .table()
        .lines()
        .any(|l| l.starts_with("reg_g") && l.ends_with("FAIL")));
}
