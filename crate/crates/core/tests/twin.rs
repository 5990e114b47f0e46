use adon::physics::LinkTopology;
use adon::scenario::{GroundTruth, NetworkState};
use adon::twin::study::{random_dataset, truth_parameters};
use adon::twin::{fit, jacobian, residuals, rmse, sync, FitOptions, ResidualWeights, TwinParameters, PARAM_COUNT};
use proptest::prelude::*;

fn state(seed: u64) -> NetworkState {
    NetworkState::new(LinkTopology::default(), GroundTruth::draw(seed))
}

fn nudged(p: &TwinParameters, k: usize, h: f64) -> TwinParameters {
    let mut q = p.clone();
    if k < q.extra_loss_db.len() {
        q.extra_loss_db[k] += h;
    } else {
        q.nf_db[k - q.extra_loss_db.len()] += h;
    }
    q
}

fn jacobian_error(params: &TwinParameters, seed: u64) -> f64 {
    let nominal = LinkTopology::default();
    let data = random_dataset(&state(seed), 6, seed, 0.1);
    let w = ResidualWeights::default();
    let (r, j) = jacobian(params, &nominal, &data, &w);
    let plain = residuals(params, &nominal, &data, &w);
    assert_eq!(r.len(), plain.len());
    assert!(r.iter().zip(&plain).all(|(a, b)| (a - b).abs() < 1e-9));
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for k in 0..PARAM_COUNT {
        let plus = residuals(&nudged(params, k, h), &nominal, &data, &w);
        let minus = residuals(&nudged(params, k, -h), &nominal, &data, &w);
        let fd: Vec<f64> = plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let scale = fd.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-6);
        let err = fd.iter().zip(&j).fold(0.0f64, |m, (f, row)| m.max((row[k] - f).abs()));
        worst = worst.max(err / scale);
    }
    worst
}

#[test]
fn jacobian_matches_central_differences_at_datasheet_point() {
    let err = jacobian_error(&TwinParameters::default(), 3);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn noisy_fit_reaches_noise_floor() {
    let s = state(11);
    let nominal = LinkTopology::default();
    let train = random_dataset(&s, 300, 1, 0.1);
    let test = random_dataset(&s, 300, 2, 0.1);
    let report = fit(&TwinParameters::default(), &nominal, &train, &FitOptions::default()).unwrap();
    let truth = truth_parameters(&s.truth);
    let fitted = rmse(&report.parameters, &nominal, &test).unwrap();
    let oracle = rmse(&truth, &nominal, &test).unwrap();
    assert!(report.converged);
    assert!(fitted < oracle + 0.02, "fitted {fitted} vs truth-parameter {oracle}");
    assert!(report.cost_trace.windows(2).all(|w| w[1] <= w[0]));
    for (f, t) in report.parameters.extra_loss_db.iter().zip(&truth.extra_loss_db) {
        assert!((f - t).abs() < 0.3, "loss {f} vs {t}");
    }
}

#[test]
fn repeated_sync_tracks_a_loss_step() {
    let s = state(5);
    let nominal = LinkTopology::default();
    let mut params = fit(
        &TwinParameters::default(),
        &nominal,
        &random_dataset(&s, 60, 9, 0.0),
        &FitOptions::default(),
    )
    .unwrap()
    .parameters;
    let mut truth = s.truth.clone();
    truth.aging_db[1] += 1.0;
    let aged = NetworkState::new(LinkTopology::default(), truth);
    let target = truth_parameters(&aged.truth).extra_loss_db[1];
    let before = (params.extra_loss_db[1] - target).abs();
    for rec in random_dataset(&aged, 60, 4, 0.0) {
        params = sync(&params, &nominal, &rec, &ResidualWeights::default());
    }
    let after = (params.extra_loss_db[1] - target).abs();
    assert!(before > 0.9);
    assert!(after < 0.1, "error after sync {after}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn jacobian_matches_central_differences_anywhere(
        losses in prop::collection::vec(0.0..4.0f64, 4),
        nfs in prop::collection::vec(3.5..9.5f64, 6),
        seed in 0u64..1000,
    ) {
        let p = TwinParameters { extra_loss_db: losses, nf_db: nfs };
        let err = jacobian_error(&p, seed);
        prop_assert!(err < 1e-4, "relative error {}", err);
    }
}
