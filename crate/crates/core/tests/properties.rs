use proptest::prelude::*;

use qrelax::diagnostics::{angular_drift_rate, coverage_with_mask, jaccard, GridSpec, OccupancyGrid};
use qrelax::ensemble::{sample_initial, InitialDistribution};
use qrelax::integrator::{Sample, Trajectory};
use qrelax::wavefunction::{psi, velocity, Mode, WaveFunctionSpec, PERIOD, SIX_MODES};

fn six_mode_spec(eps: [f64; 5], theta: [f64; 6]) -> WaveFunctionSpec {
    let mut amps = vec![1.0];
    amps.extend(eps);
    WaveFunctionSpec::from_parts(&SIX_MODES, &amps, &theta).unwrap()
}

fn arb_spec() -> impl Strategy<Value = WaveFunctionSpec> {
    (prop::array::uniform5(0.0..1.0f64), prop::array::uniform6(0.0..std::f64::consts::TAU))
        .prop_map(|(e, t)| six_mode_spec(e, t))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psi_is_periodic(spec in arb_spec(), q1 in -3.0..3.0f64, q2 in -3.0..3.0f64, t in 0.0..20.0f64, k in 1u32..5) {
        let a = psi(&spec, q1, q2, t);
        let b = psi(&spec, q1, q2, t + k as f64 * PERIOD);
        prop_assert!((a - b).norm() <= 1e-12 * a.norm().max(1e-3), "{a} vs {b}");
    }

    #[test]
    fn global_phase_does_not_change_velocity(
        e in prop::array::uniform5(0.01..1.0f64),
        t0 in prop::array::uniform6(0.0..std::f64::consts::TAU),
        shift in 0.0..std::f64::consts::TAU,
        q1 in -2.0..2.0f64, q2 in -2.0..2.0f64, t in 0.0..10.0f64,
    ) {
        let shifted = t0.map(|x| (x + shift) % std::f64::consts::TAU);
        let a = six_mode_spec(e, t0);
        let b = six_mode_spec(e, shifted);
        if let (Ok(va), Ok(vb)) = (velocity(&a, q1, q2, t), velocity(&b, q1, q2, t)) {
            prop_assert!(close(va.0, vb.0, 1e-9) && close(va.1, vb.1, 1e-9), "{va:?} vs {vb:?}");
        }
    }

    #[test]
    fn swapping_axes_transposes_the_field(
        e in prop::array::uniform5(0.01..1.0f64),
        th in prop::array::uniform6(0.0..std::f64::consts::TAU),
        q1 in -2.0..2.0f64, q2 in -2.0..2.0f64, t in 0.0..10.0f64,
    ) {
        let spec = six_mode_spec(e, th);
        let mirrored_modes: Vec<Mode> = SIX_MODES.iter().map(|m| Mode::new(m.n, m.m)).collect();
        let mut amps = vec![1.0];
        amps.extend(e);
        let mirrored = WaveFunctionSpec::from_parts(&mirrored_modes, &amps, &th).unwrap();
        if let (Ok(v), Ok(w)) = (velocity(&spec, q1, q2, t), velocity(&mirrored, q2, q1, t)) {
            prop_assert!(close(v.0, w.1, 1e-9) && close(v.1, w.0, 1e-9), "{v:?} vs {w:?}");
        }
    }

    #[test]
    fn drift_rate_is_rotation_invariant(
        rate in -2.0..2.0f64,
        radius in 0.5..3.0f64,
        wobble in prop::collection::vec(-0.3..0.3f64, 50..200),
        alpha in 0.0..std::f64::consts::TAU,
    ) {
        let dt = 0.1;
        let make = |rot: f64| Trajectory {
            start: [radius, 0.0],
            spec_fingerprint: String::new(),
            sample_interval: dt,
            samples: wobble
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let t = k as f64 * dt;
                    let a = rate * t + w + rot;
                    Sample { t, q1: radius * a.cos(), q2: radius * a.sin() }
                })
                .collect(),
            steps_taken: 0,
            steps_rejected: 0,
            min_density_seen: 1.0,
        };
        let a = angular_drift_rate(&make(0.0)).unwrap();
        let b = angular_drift_rate(&make(alpha)).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn jaccard_is_symmetric_and_bounded(
        a in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 0..100),
        b in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 0..100),
    ) {
        let grid = GridSpec::new(4.0, 20);
        let ga = OccupancyGrid::from_points(grid, a.iter().map(|&(x, y)| [x, y]));
        let gb = OccupancyGrid::from_points(grid, b.iter().map(|&(x, y)| [x, y]));
        let ab = jaccard(&ga, &gb).unwrap();
        prop_assert_eq!(ab, jaccard(&gb, &ga).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(jaccard(&ga, &ga).unwrap(), 1.0);
    }

    #[test]
    fn union_covers_at_least_each_part(
        a in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 0..100),
        b in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 0..100),
        mask in prop::collection::vec(any::<bool>(), 400),
    ) {
        let grid = GridSpec::new(4.0, 20);
        let ga = OccupancyGrid::from_points(grid, a.iter().map(|&(x, y)| [x, y]));
        let gb = OccupancyGrid::from_points(grid, b.iter().map(|&(x, y)| [x, y]));
        let u = coverage_with_mask(&ga.union(&gb).unwrap(), &mask);
        prop_assert!(u >= coverage_with_mask(&ga, &mask).max(coverage_with_mask(&gb, &mask)));
    }

    #[test]
    fn sampling_ignores_worker_count(seed in any::<u64>(), n in 1usize..10_000) {
        let spec = WaveFunctionSpec::ground_state();
        let kind = InitialDistribution::Gaussian { sigma: 0.7, center: [0.2, -0.1] };
        let one = sample_initial(&kind, n, seed, &spec, Some(1)).unwrap();
        let many = sample_initial(&kind, n, seed, &spec, Some(3)).unwrap();
        prop_assert_eq!(one.points, many.points);
    }
}
