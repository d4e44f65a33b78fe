mod common;

use avgbench::ensembles::{average_channel, reflection_ensemble, twirl_3way, twirl_4way, Leg};
use avgbench::pauli::{check_cptp, unitary_superop};
use avgbench::random::{haar_gate, stream_rng};
use avgbench::spacetime::{classify, SpaceTimeLabel};
use proptest::prelude::*;

const TOL: f64 = 1e-9;

#[test]
fn averages_carry_their_promised_labels() {
    let mut rng = stream_rng(21, 0);
    let mut left_failures = 0;
    let n = 200;
    for s in 0..n {
        let g = haar_gate(&mut rng);
        let r = classify(&average_channel(&reflection_ensemble(&g).unwrap()), TOL);
        assert!(r.is_four_way() && r.max_residual() < TOL, "reflection, gate {s}: {r:?}");
        let lambda = s as f64 / (n - 1) as f64;
        let f = classify(&average_channel(&twirl_4way(&g, lambda).unwrap()), TOL);
        assert!(f.is_four_way() && f.max_residual() < TOL, "twirl_4way, gate {s}: {f:?}");
        let t = classify(&average_channel(&twirl_3way(&g, Leg::First)), TOL);
        assert_eq!(t.label(), SpaceTimeLabel::ThreeWayRight, "twirl_3way, gate {s}");
        assert!(t.residuals[0] < TOL && t.residuals[1] < TOL && t.residuals[3] < TOL);
        if !t.left_space_unital {
            left_failures += 1;
        }
    }
    assert!(left_failures * 100 >= 99 * n);
}

#[test]
fn second_leg_twirl_is_left_unital() {
    let mut rng = stream_rng(22, 0);
    for _ in 0..50 {
        let g = haar_gate(&mut rng);
        assert_eq!(classify(&average_channel(&twirl_3way(&g, Leg::Second)), TOL).label(), SpaceTimeLabel::ThreeWayLeft);
    }
}

#[test]
fn bare_haar_gates_are_general() {
    let mut rng = stream_rng(23, 0);
    for _ in 0..50 {
        let c = classify(&unitary_superop(&haar_gate::<f64, _>(&mut rng)), TOL);
        assert_eq!(c.label(), SpaceTimeLabel::General);
        assert!(c.tp && c.unital);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn averaged_channels_stay_cptp(seed in any::<u64>(), lambda in 0.0f64..=1.0) {
        let g = haar_gate(&mut stream_rng(seed, 0));
        for e in [reflection_ensemble(&g).unwrap(), twirl_4way(&g, lambda).unwrap(), twirl_3way(&g, Leg::First)] {
            let report = check_cptp(&average_channel(&e), 1e-10);
            prop_assert!(report.cp && report.tp && report.unital, "{report:?}");
        }
    }
}
