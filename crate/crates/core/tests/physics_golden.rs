//! Cross-check of the propagation chain against an independent straight-line
//! evaluation (`golden/gen_physics_golden.py`), plus property tests.

use adon::gain::GainConfig;
use adon::physics::*;
use proptest::prelude::*;
use serde_json::Value;

const GOLDEN: &str = include_str!("golden/physics_golden.json");

fn loaded(n: usize) -> LinkTopology {
    let mut link = LinkTopology::default();
    for i in 0..n {
        link.grid.active[i] = true;
        link.grid.is_real[i] = i % 5 == 0;
    }
    link
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn nli_golden_constant() {
    let golden: Value = serde_json::from_str(GOLDEN).unwrap();
    let expected = golden["nli_power_1mw_110km_20ch_w"].as_f64().unwrap();
    let got = nli_power(1e-3, &Span::g652d(110.0), &ChannelGrid::default(), 20);
    assert!(rel(got, expected) < 1e-9, "{got} vs {expected}");
}

#[test]
fn flat_18db_twenty_channels_matches_golden_snapshot() {
    let golden: Value = serde_json::from_str(GOLDEN).unwrap();
    let expected = &golden["flat18_load20"];
    let link = loaded(20);
    let snap = transmit(&link, &link.launch_vector(), &GainConfig::flat(6, 18.0));

    let channels = expected["channels"].as_array().unwrap();
    assert_eq!(snap.channels.len(), channels.len());
    for (got, want) in snap.channels.iter().zip(channels) {
        assert_eq!(got.slot as u64, want["slot"].as_u64().unwrap());
        for (g, key) in [
            (got.received_power_w, "received_power_w"),
            (got.ase_power_w, "ase_power_w"),
            (got.nli_power_w, "nli_power_w"),
            (got.gsnr_db.unwrap(), "gsnr_db"),
        ] {
            let w = want[key].as_f64().unwrap();
            assert!(rel(g, w) < 1e-9, "slot {} {key}: {g} vs {w}", got.slot);
        }
    }
    let ports = expected["amplifier_ports"].as_array().unwrap();
    for (got, want) in snap.amplifier_ports.iter().zip(ports) {
        assert!(rel(got.input_w, want["input_w"].as_f64().unwrap()) < 1e-9);
        assert!(rel(got.output_w, want["output_w"].as_f64().unwrap()) < 1e-9);
    }
}

#[test]
fn transmit_is_bit_deterministic() {
    let link = loaded(25);
    let cfg = GainConfig::new(vec![20.0, 21.5, 19.0, 22.0, 23.0, 15.0], vec![0.5, -1.0, 0.0, 2.0, 0.0, -3.0]).unwrap();
    let a = transmit(&link, &link.launch_vector(), &cfg);
    let b = transmit(&link, &link.launch_vector(), &cfg);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

fn arb_span() -> impl Strategy<Value = Span> {
    (20.0..150.0f64, 0.15..0.3f64, 0.0..5.0f64, 10.0..30.0f64, 0.5..2.0f64).prop_map(|(l, a, x, b, g)| Span {
        length_km: l,
        attenuation_db_per_km: a,
        extra_loss_db: x,
        beta2_ps2_per_km: b,
        gamma_per_w_km: g,
        is_cut: false,
    })
}

fn arb_config() -> impl Strategy<Value = GainConfig> {
    (
        proptest::collection::vec(10.0..25.0f64, 6),
        proptest::collection::vec(-3.0..3.0f64, 6),
    )
        .prop_map(|(g, t)| GainConfig::new(g, t).unwrap())
}

proptest! {
    #[test]
    fn nli_scales_cubically(span in arb_span(), p in 1e-6..1e-2f64, n in 1usize..=30) {
        let grid = ChannelGrid::default();
        let a = nli_power(p, &span, &grid, n);
        let b = nli_power(2.0 * p, &span, &grid, n);
        prop_assert!(rel(b, 8.0 * a) < 1e-12);
    }

    #[test]
    fn added_ase_matches_closed_form(f in 190e12..197e12f64, nf in 3.0..10.0f64, g in 0.5..30.0f64) {
        let c = PhysicalConstants::default();
        let expected = c.planck * f * 10f64.powf(nf / 10.0) * (10f64.powf(g / 10.0) - 1.0) * c.reference_bandwidth;
        prop_assert!(rel(added_ase_w(&c, f, nf, g), expected) < 1e-12);
    }

    #[test]
    fn loss_gain_bookkeeping_is_exact(cfg in arb_config(), extras in proptest::collection::vec(0.0..4.0f64, 4), load in 1usize..=6) {
        let mut link = loaded(load * 5);
        for amp in &mut link.amplifiers {
            amp.noise_figure_db = f64::NEG_INFINITY;
        }
        for (span, x) in link.spans.iter_mut().zip(&extras) {
            span.gamma_per_w_km = 0.0;
            span.extra_loss_db = *x;
        }
        let snap = transmit(&link, &link.launch_vector(), &cfg);
        let loss: f64 = link.spans.iter().map(|s| s.total_loss_db()).sum();
        for ch in &snap.channels {
            let gain: f64 = cfg.gains.iter().zip(&cfg.tilts)
                .map(|(&g, &t)| Amplifier { gain_db: g, tilt_db: t, noise_figure_db: 0.0 }.channel_gain_db(ch.frequency_hz, &link.grid))
                .sum();
            let expected = link.launch_power_dbm + gain - loss;
            prop_assert!((w_to_dbm(ch.received_power_w) - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn adding_a_span_never_improves_gsnr(cfg in arb_config(), extra in arb_span()) {
        let link = loaded(20);
        let mut longer = link.clone();
        longer.spans.push(extra);
        longer.amplifiers.push(Amplifier::default());
        let mut cfg_long = cfg.clone();
        cfg_long.gains.insert(5, 18.0);
        cfg_long.tilts.insert(5, 0.0);
        let short = transmit(&link, &link.launch_vector(), &cfg);
        let long = transmit(&longer, &longer.launch_vector(), &cfg_long);
        for (a, b) in short.channels.iter().zip(&long.channels) {
            prop_assert!(b.gsnr_db.unwrap() <= a.gsnr_db.unwrap() + 1e-12);
        }
    }

    #[test]
    fn any_cut_darkens_the_receiver(cfg in arb_config(), cut in 0usize..4) {
        let mut link = loaded(30);
        link.spans[cut].is_cut = true;
        let snap = transmit(&link, &link.launch_vector(), &cfg);
        prop_assert!(snap.channels.iter().all(|c| c.received_power_w == 0.0));
        prop_assert_eq!(snap.amplifier_ports[cut + 1].input_w, 0.0);
    }
}
