use bayesmem::density::GaussianComponent;
use bayesmem::memory::{BandwidthRule, EstimatorConfig};
use bayesmem::protocol::{
    self, make_synthetic_dataset, sweep, EvalReport, ProtocolConfig, SweepAxis, SyntheticClass,
    SyntheticModel,
};

fn check_report_invariants(report: &EvalReport, all_classes: usize) {
    for (i, r) in report.rounds.iter().enumerate() {
        assert_eq!(r.round, i + 1);
        assert_eq!(r.classes.len(), r.n_classes);
        assert_eq!(r.recalls.len(), r.n_classes);
        assert!(r.recalls.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let mean = r.recalls.iter().sum::<f64>() / r.recalls.len() as f64;
        assert_eq!(mean, r.mcr);
    }
    for w in report.rounds.windows(2) {
        assert!(
            w[1].classes.len() >= w[0].classes.len(),
            "test pool must not shrink"
        );
        assert!(w[0].classes.iter().all(|c| w[1].classes.contains(c)));
    }
    assert_eq!(report.final_round().n_classes, all_classes);
}

#[test]
fn two_opposite_classes_are_separated() {
    let dim = 8;
    let class = |mean: f64| SyntheticClass {
        features: vec![vec![GaussianComponent::new(1.0, mean, 0.01)]; dim],
    };
    let model = SyntheticModel {
        classes: vec![class(2.0), class(-2.0)],
        train_per_class: 30,
        test_per_class: 50,
    };
    let (train, test) = make_synthetic_dataset(&model, 4).unwrap();
    let run = protocol::run(
        &train,
        &test,
        &ProtocolConfig::class_incremental(1, EstimatorConfig::gmm(2), 0),
    )
    .unwrap();
    assert!(run.report.final_mcr() >= 0.99);
    check_report_invariants(&run.report, 2);
}

#[test]
fn data_incremental_mcr_rises_for_most_seeds() {
    let mut rising = 0;
    let mut trace = Vec::new();
    for seed in 0..5 {
        let model = SyntheticModel::random_bimodal(8, 12, 0.2, 0.04, 0.07, 30, 40, seed);
        let (train, test) = make_synthetic_dataset(&model, seed).unwrap();
        let cfg = ProtocolConfig::data_incremental(3, 10, EstimatorConfig::gmm(2), seed);
        let report = protocol::run(&train, &test, &cfg).unwrap().report;
        check_report_invariants(&report, 8);
        let first = report.rounds[0].mcr;
        let last = report.final_mcr();
        trace.push((first, last));
        if last >= first {
            rising += 1;
        }
    }
    assert!(rising >= 3, "MCR rose for only {rising}/5 seeds: {trace:?}");
}

#[test]
fn refit_from_cache_and_incremental_agree_for_single_gaussians() {
    let model = SyntheticModel::well_separated(5, 6, 20, 10, 3);
    let (train, test) = make_synthetic_dataset(&model, 3).unwrap();
    let mut cfg = ProtocolConfig::data_incremental(4, 5, EstimatorConfig::gmm(1), 3);
    let incremental = protocol::run(&train, &test, &cfg).unwrap();
    cfg.refit_from_cache = true;
    let cached = protocol::run(&train, &test, &cfg).unwrap();
    for (a, b) in incremental.bank.classes().zip(cached.bank.classes()) {
        assert_eq!(a.count(), b.count());
        for (ma, mb) in a.models().iter().zip(b.models()) {
            let (ga, gb) = (ma.as_gmm().unwrap(), mb.as_gmm().unwrap());
            for (ca, cb) in ga.components().iter().zip(gb.components()) {
                assert!((ca.mean - cb.mean).abs() < 1e-9);
                assert!((ca.sigma - cb.sigma).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn feature_sweep_with_half_the_features_informative() {
    let mut model = SyntheticModel::random_bimodal(6, 16, 0.3, 0.03, 0.06, 30, 30, 9);
    model.share_features(8..16);
    let (train, test) = make_synthetic_dataset(&model, 9).unwrap();
    let base = ProtocolConfig::class_incremental(3, EstimatorConfig::gmm(2), 9);
    let reports = sweep(&train, &test, &base, &SweepAxis::FeatureCount(vec![16, 8])).unwrap();
    assert_eq!(reports.len(), 2);
    for r in &reports {
        check_report_invariants(r, 6);
    }
    // Which half survives subsampling is random, so only the shape is fixed.
    assert_eq!(reports[1].config.feature_subsample.unwrap().count, 8);
    assert_eq!(reports[1].footprint.total_parameters, 6 * 8 * 3 * 2);
}

#[test]
fn component_sweep_reports_one_entry_per_value() {
    let model = SyntheticModel::well_separated(4, 6, 20, 10, 2);
    let (train, test) = make_synthetic_dataset(&model, 2).unwrap();
    let base =
        ProtocolConfig::class_incremental(2, EstimatorConfig::kde(BandwidthRule::Silverman), 2);
    let reports = sweep(
        &train,
        &test,
        &base,
        &SweepAxis::GmmComponents(vec![1, 2, 3]),
    )
    .unwrap();
    assert_eq!(reports.len(), 3);
    let summary = protocol::summarize(&reports).unwrap();
    assert_eq!(summary.len(), 2);
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let model = SyntheticModel::random_bimodal(6, 10, 0.25, 0.05, 0.08, 25, 15, 5);
    let (train, test) = make_synthetic_dataset(&model, 5).unwrap();
    let cfg = ProtocolConfig::class_incremental(2, EstimatorConfig::gmm(2), 5);
    let run_with = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| protocol::run(&train, &test, &cfg).unwrap())
    };
    let one = run_with(1);
    let four = run_with(4);
    assert_eq!(one.bank.to_bytes(), four.bank.to_bytes());
    assert_eq!(
        one.report.without_timings().to_json(),
        four.report.without_timings().to_json()
    );
}

#[test]
fn same_config_gives_byte_identical_reports() {
    let model = SyntheticModel::well_separated(4, 6, 20, 10, 6);
    let (train, test) = make_synthetic_dataset(&model, 6).unwrap();
    let cfg = ProtocolConfig::few_shot(2, 5, EstimatorConfig::gmm(2), 6);
    let a = protocol::run(&train, &test, &cfg)
        .unwrap()
        .report
        .without_timings();
    let b = protocol::run(&train, &test, &cfg)
        .unwrap()
        .report
        .without_timings();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.to_csv(), b.to_csv());
}
