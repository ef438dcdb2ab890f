mod common;

use std::sync::OnceLock;

use common::*;
use kbarrier::cegis::{self, CegisConfig, CegisOutcome, CegisReport};
use kbarrier::config::CaseStudyConfig;
use kbarrier::learner;
use kbarrier::verifier::{self, check_point, Verdict};

fn highly_nonlinear() -> &'static (CaseStudyConfig, CegisReport) {
    static RUN: OnceLock<(CaseStudyConfig, CegisReport)> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = CaseStudyConfig::builtin("highly-nonlinear").unwrap();
        let report = cfg.synthesize(0).unwrap();
        (cfg, report)
    })
}

#[test]
fn augment_adds_neighbourhood_rows() {
    let cfg = CaseStudyConfig::builtin("highly-nonlinear").unwrap();
    let (_, model) = cfg.build_model().unwrap();
    let data = learner::sample_dataset(&cfg.spec, &model, &cfg.kbc, 10, 1).unwrap();
    let ccfg = CegisConfig {
        cex_points: 20,
        cex_radius: 0.1,
        ..CegisConfig::default()
    };
    let x = cfg.spec.state_space();
    let corner = vec![x.get(0).hi(), x.get(1).lo()];
    let out = cegis::augment(&data, &corner, &ccfg, &cfg.spec, &model, &cfg.kbc, 9).unwrap();
    assert_eq!(out.len(), data.len() + 21);
    assert_eq!(out.states[data.len()], corner);
    for i in data.len()..out.len() {
        let s = &out.states[i];
        assert!(x.contains(s), "{s:?} outside X");
        let d = ((s[0] - corner[0]).powi(2) + (s[1] - corner[1]).powi(2)).sqrt();
        assert!(d <= 0.1 + 1e-12);
        assert_eq!(out.one_step[i], model.step(s).unwrap());
        assert_eq!(out.k_step[i], model.k_step(s, cfg.kbc.k()).unwrap());
        assert_eq!(out.in_initial[i], cfg.spec.initial().contains(s));
        assert_eq!(out.in_unsafe[i], cfg.spec.unsafe_set().contains(s));
    }
}

#[test]
fn zero_iterations_terminate_without_training() {
    let mut cfg = CaseStudyConfig::builtin("highly-nonlinear").unwrap();
    cfg.cegis.max_iterations = 0;
    let (_, model) = cfg.build_model().unwrap();
    let data = learner::sample_dataset(&cfg.spec, &model, &cfg.kbc, 100, 0).unwrap();
    let net = cfg.initial_network(0).unwrap();
    let report = cegis::run(&cfg.spec, &model, &cfg.kbc, &net, data, &cfg.cegis, 0).unwrap();
    assert_eq!(report.outcome, CegisOutcome::Terminated);
    assert_eq!(report.iterations, 0);
    assert!(report.records.is_empty());
    assert_eq!(report.params, net);
    assert!(report.certificate.is_none());
}

#[test]
fn verified_certificate_re_verifies() {
    let (cfg, report) = highly_nonlinear();
    assert!(report.verified(), "{:?}", report.diagnostic);
    let (_, model) = cfg.build_model().unwrap();
    let cert = report.certificate.clone().unwrap();
    assert!(cert == report.params.to_expr());
    let task = cfg.verification_task(&model, cert, None, None).unwrap();
    assert_eq!(verifier::verify(&task).unwrap().verdict, Verdict::Valid);
    assert!(grid_clean(&task_grid_margins(&task, 401), 1e-9));
}

#[test]
fn run_shape_and_dataset_growth() {
    let (cfg, report) = highly_nonlinear();
    let n = report.records.len();
    assert_eq!(n, report.iterations);
    assert!(n >= 1 && n <= cfg.cegis.max_iterations);
    for (i, r) in report.records.iter().enumerate() {
        assert_eq!(r.iteration, i + 1);
        let lr = if i == 0 { cfg.cegis.lr_initial } else { cfg.cegis.lr_retrain };
        assert_eq!(r.learning_rate, lr);
        assert!(r.best_loss <= r.initial_loss);
        if i + 1 < n {
            assert!(r.counterexample.is_some());
            assert_eq!(report.records[i + 1].dataset_size, r.dataset_size + cfg.cegis.cex_points + 1);
        }
    }
    assert!(report.records[n - 1].verdict.is_valid());
    assert!(report.records[n - 1].counterexample.is_none());
}

#[test]
fn replay_is_bitwise_identical() {
    let (cfg, report) = highly_nonlinear();
    let again = cfg.synthesize(report.seed).unwrap();
    assert_eq!(&again, report);
    let text = serde_json::to_string(report).unwrap();
    let back: CegisReport = serde_json::from_str(&text).unwrap();
    assert_eq!(&back, report);
}

#[test]
fn recorded_counterexamples_violate_the_candidate_of_their_iteration() {
    let (cfg, report) = highly_nonlinear();
    let (_, model) = cfg.build_model().unwrap();
    let data = learner::sample_dataset(&cfg.spec, &model, &cfg.kbc, cfg.samples, report.seed).unwrap();
    let net = cfg.initial_network(report.seed).unwrap();
    for r in &report.records {
        let Some(cex) = &r.counterexample else { continue };
        // replaying a truncated run recovers the candidate of this iteration
        let ccfg = CegisConfig {
            max_iterations: r.iteration,
            ..cfg.cegis.clone()
        };
        let partial = cegis::run(&cfg.spec, &model, &cfg.kbc, &net, data.clone(), &ccfg, report.seed).unwrap();
        let task = cfg.verification_task(&model, partial.params.to_expr(), None, None).unwrap();
        match &r.verdict {
            Verdict::Counterexample { condition, margin, .. } => {
                let hits = check_point(&task, cex).unwrap();
                assert!(
                    hits.iter().any(|(c, m)| c == condition && *m == *margin && *m > 0.0),
                    "iteration {}: {hits:?}",
                    r.iteration
                );
            }
            Verdict::DeltaSat { .. } => {}
            other => panic!("counterexample recorded with verdict {other:?}"),
        }
    }
}
