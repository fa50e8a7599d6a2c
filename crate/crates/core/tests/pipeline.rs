use faultbench_core::attacks::{robust_accuracy, AttackConfig};
use faultbench_core::data::two_circles;
use faultbench_core::faults::{apply_faults, eps_ft, fault_sweep, sample_faults, FaultKind, SweepOptions};
use faultbench_core::metrics::{accuracy, MetricsReport};
use faultbench_core::nn::{decode_fbn1, encode_fbn1};
use faultbench_core::privacy::check_bound;
use faultbench_core::training::{train, DpConfig, Regime, TrainConfig};
use faultbench_core::StreamRng;

fn circles() -> (faultbench_core::data::Dataset, faultbench_core::data::Dataset) {
    let mut rng = StreamRng::new(0, "data");
    two_circles(600, 0.05, 0.5, &mut rng).unwrap().split(400, &mut rng).unwrap()
}

fn config(regime: Regime) -> TrainConfig {
    let mut c = TrainConfig::new(vec![64], regime);
    c.epochs = 60;
    c.batch_size = 32;
    c
}

#[test]
fn trained_model_survives_serialization_and_degrades_under_faults() {
    let (tr, te) = circles();
    let rec = train(&config(Regime::Tikhonov { lambda: 1e-4 }), &tr, &te).unwrap();
    let net = &rec.network;
    let clean = accuracy(net, &te).unwrap();
    assert!(clean > 0.75, "well separated circles should be learnable, got {clean}");
    assert_eq!(rec.last().test_acc, clean);

    let back = decode_fbn1(&encode_fbn1(net)).unwrap();
    assert_eq!(back.predict(te.inputs()).unwrap(), net.predict(te.inputs()).unwrap());

    let sweep = fault_sweep(net, &te, FaultKind::Parameter, &[0.0, 0.5, 1.0], SweepOptions::default()).unwrap();
    assert!(sweep.rows[0].accuracies.iter().all(|&a| a == clean));
    assert!((sweep.rows[0].mean - clean).abs() < 1e-12 && sweep.rows[0].sd < 1e-12);
    assert!(sweep.rows[1].mean < clean);
    // everything zeroed: one constant prediction, which the balanced test split scores at its class share
    let share = te.class_counts().iter().map(|&c| c as f64 / te.len() as f64).collect::<Vec<_>>();
    assert!(sweep.rows[2].accuracies.iter().all(|a| share.contains(a)));

    let mask = sample_faults(net, FaultKind::Node, 0.25, true, &mut StreamRng::new(1, "faults")).unwrap();
    let e = eps_ft(net, &apply_faults(net, &mask).unwrap(), &te).unwrap();
    assert!(e > 0.0 && e <= std::f64::consts::SQRT_2);
}

#[test]
fn attacks_only_lower_accuracy() {
    let (tr, te) = circles();
    let net = train(&config(Regime::Natural), &tr, &te).unwrap().network;
    let mut rng = StreamRng::new(0, "attack");
    let clean = accuracy(&net, &te).unwrap();
    let weak = robust_accuracy(&net, &te, &AttackConfig::new(0.01), &mut rng).unwrap();
    let strong = robust_accuracy(&net, &te, &AttackConfig::new(0.2), &mut rng).unwrap();
    assert!(strong <= weak && weak <= clean, "{strong} {weak} {clean}");
    assert_eq!(robust_accuracy(&net, &te, &AttackConfig::new(0.0), &mut rng).unwrap(), clean);
}

#[test]
fn dp_run_reports_a_consistent_spend() {
    let (tr, te) = circles();
    let mut c = config(Regime::DpSgd(DpConfig { clip_norm: 1.0, noise_multiplier: 1.5, delta: 1e-5 }));
    c.epochs = 3;
    let rec = train(&c, &tr, &te).unwrap();
    let spends: Vec<f64> = rec.epochs.iter().map(|e| e.privacy.unwrap().eps_dp).collect();
    assert!(spends.windows(2).all(|w| w[0] < w[1]), "{spends:?}");
    let last = rec.privacy().unwrap();
    assert_eq!(last.steps, 3 * 400u64.div_ceil(32));
    let check = check_bound(rec.last().train_acc, rec.last().test_acc, last).unwrap();
    assert_eq!(check.rhs, last.eps_dp.exp() - 1.0 + 1e-5);
    let report = MetricsReport::measure("dp", &rec.network, &tr, &te, Default::default()).unwrap();
    assert!(report.is_consistent());
    assert_eq!(report.gen_err, rec.gen_err());
}
