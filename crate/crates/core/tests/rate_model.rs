mod common;

use proptest::prelude::*;

use common::{ld_profile, oracle_points, rel_err};
use qsmn::link_sim::{finite_key_rate, qber, secret_key_rate, transmittance, QkdSystemParams, QBER_ABORT_THRESHOLD};
use qsmn::topology::QkdSystem;

#[test]
fn every_oracle_point_matches_within_1e9() {
    let points = oracle_points();
    assert_eq!(points.len(), 20);
    for (i, p) in points.iter().enumerate() {
        let (profile, params) = p.input.profile();
        assert!(rel_err(transmittance(&profile, &params), p.transmittance) <= 1e-9, "point {i} transmittance");
        assert!(rel_err(qber(&profile, &params), p.qber) <= 1e-9, "point {i} qber");
        assert!(rel_err(secret_key_rate(&profile, &params), p.secret_key_rate) <= 1e-9, "point {i} rate");
        assert!(rel_err(finite_key_rate(&profile, &params), p.finite_key_rate) <= 1e-9, "point {i} finite");
    }
}

#[test]
fn oracle_grid_covers_every_system_and_a_zero_rate() {
    let points = oracle_points();
    for system in [QkdSystem::LD, QkdSystem::MU, QkdSystem::Access] {
        assert!(points.iter().any(|p| p.input.profile().0.system == system));
    }
    assert!(points.iter().any(|p| p.secret_key_rate == 0.0));
    assert!(points.iter().any(|p| p.input.co_prop));
}

#[test]
fn ld_reaches_120_km() {
    let p = QkdSystemParams::default();
    assert!(finite_key_rate(&ld_profile(120.0), &p) > 0.0);
    assert!(finite_key_rate(&ld_profile(150.0), &p) >= 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn rate_never_increases_with_length(
        mu in 0.1f64..0.9,
        det in 0.05f64..0.5,
        dark in 1e-7f64..1e-5,
        mis in 0.0f64..0.05,
    ) {
        let p = QkdSystemParams {
            mean_photon_number: mu,
            detector_efficiency: det,
            dark_count_prob_per_gate: dark,
            misalignment_error: mis,
            ..Default::default()
        };
        let mut prev = f64::INFINITY;
        for i in 0..=150 {
            let r = finite_key_rate(&ld_profile(i as f64), &p);
            prop_assert!(r >= 0.0 && r <= prev, "{} km", i);
            prev = r;
        }
    }

    #[test]
    fn qber_bounded_and_rate_zero_past_abort(len in 0.0f64..400.0, mis in 0.0f64..0.3) {
        let p = QkdSystemParams { misalignment_error: mis, ..Default::default() };
        let prof = ld_profile(len);
        let q = qber(&prof, &p);
        prop_assert!((0.0..=0.5).contains(&q));
        if q >= QBER_ABORT_THRESHOLD {
            prop_assert_eq!(finite_key_rate(&prof, &p), 0.0);
        }
        prop_assert!(finite_key_rate(&prof, &p) <= secret_key_rate(&prof, &p));
    }
}
