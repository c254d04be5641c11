use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use nashflow::flow;
use nashflow::game::build_example1;
use nashflow::graph::kron_laplacian;
use nashflow::harness::{self, read_reference, Algorithm, Experiment, ExperimentConfig};
use nashflow::hybrid::{self, TimerParams};
use nashflow::metrics::lyapunov_vtilde;
use nashflow::{DisturbanceSpec, SubnetworkGraph};

fn pinned() -> nashflow::SaddleReference {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    read_reference(&dir.join("reference_example1_42.json")).unwrap()
}

/// A ring on `n` nodes plus extra chords, with random positive weights.
fn connected_graph() -> impl Strategy<Value = SubnetworkGraph> {
    (2usize..7)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(0.1f64..5.0, n),
                prop::collection::vec((0..n, 0..n, 0.1f64..5.0), 0..6),
            )
        })
        .prop_map(|(n, ring_w, chords)| {
            let mut edges: Vec<(usize, usize, f64)> = Vec::new();
            for i in 0..n {
                let j = (i + 1) % n;
                if i != j && !(n == 2 && i == 1) {
                    edges.push((i, j, ring_w[i]));
                }
            }
            for (a, b, w) in chords {
                if a != b {
                    edges.push((a, b, w));
                }
            }
            SubnetworkGraph::from_edges(n, &edges).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_annihilates_ones_and_is_symmetric(g in connected_graph()) {
        let l = g.laplacian();
        let n = g.n();
        let ones = DVector::from_element(n, 1.0);
        let scale = g.weights().amax() * n as f64;
        prop_assert!((&l * &ones).amax() <= 4.0 * f64::EPSILON * scale);
        prop_assert_eq!(l.transpose(), l.clone());
        let mut eig = l.symmetric_eigenvalues().iter().copied().collect::<Vec<_>>();
        eig.sort_by(f64::total_cmp);
        prop_assert!(eig[0].abs() < 1e-9);
        prop_assert!(eig[1] > 1e-9, "connected graph has a simple zero eigenvalue");
    }

    #[test]
    fn kron_laplacian_kills_consensus(g in connected_graph(), v in prop::collection::vec(-5.0f64..5.0, 1..4)) {
        let p = v.len();
        let k = kron_laplacian(&g.laplacian(), p);
        let z = DVector::from_fn(g.n() * p, |i, _| v[i % p]);
        prop_assert!((k * z).amax() < 1e-12);
    }

    #[test]
    fn gap_is_nonnegative_on_feasible_points(
        ux in prop::collection::vec(-4.0f64..4.0, 8),
        uy in prop::collection::vec(-4.0f64..4.0, 8),
        lambda in prop::collection::vec(-3.0f64..3.0, 8),
        mu in prop::collection::vec(-3.0f64..3.0, 8),
    ) {
        let spec = build_example1(42);
        let reference = pinned();
        let x = spec.x_mirror().conjugate_gradient(&DVector::from_vec(ux));
        let y = spec.y_mirror().conjugate_gradient(&DVector::from_vec(uy));
        let gap = spec.duality_gap(&reference, &x, &DVector::from_vec(lambda), &y, &DVector::from_vec(mu));
        prop_assert!(gap >= -1e-8, "gap {}", gap);
    }

    #[test]
    fn jumps_change_only_timers(
        tau in prop::collection::vec(1.0f64..5.0, 8),
        due in 0usize..8,
        u in prop::collection::vec(-2.0f64..2.0, 8),
    ) {
        let spec = build_example1(42);
        let params = TimerParams::default_for(4, 4);
        let mut z = flow::default_init(&spec, 1.0).unwrap().z;
        z.u = DVector::from_vec(u);
        z.x = spec.x_mirror().conjugate_gradient(&z.u);
        let mut tau = tau;
        tau[due] = params.t_max;
        let hs = hybrid::hybrid_init(&spec, &params, z.clone(), tau[..4].to_vec(), tau[4..].to_vec()).unwrap();
        let (next, event) = hybrid::coordinated_jump(spec.topology(), &params, &hs).unwrap();
        prop_assert_eq!(&next.z, &z);
        prop_assert_eq!(next.j, hs.j + 1);
        prop_assert_eq!(next.t, hs.t);
        prop_assert_eq!(event.j, hs.j);
        for t in next.timers() {
            prop_assert!(t >= params.t0 && t <= params.t_max);
        }
    }

    #[test]
    fn vtilde_does_not_increase_when_a_synchronized_epoch_restarts(
        u in prop::collection::vec(-3.0f64..3.0, 8),
        v in prop::collection::vec(-3.0f64..3.0, 8),
    ) {
        let spec = build_example1(42);
        let reference = pinned();
        let params = TimerParams::default_for(4, 4);
        let mut z = flow::default_init(&spec, 1.0).unwrap().z;
        z.u = DVector::from_vec(u);
        z.x = spec.x_mirror().conjugate_gradient(&z.u);
        z.v = DVector::from_vec(v);
        z.y = spec.y_mirror().conjugate_gradient(&z.v);
        let mut hs = hybrid::hybrid_init(&spec, &params, z, vec![params.t_max; 4], vec![params.t_max; 4]).unwrap();
        let before = lyapunov_vtilde(&spec, 2.0, &reference, &hs.z, &hs.timers());
        let mut guard = 0;
        while hs.timers().iter().any(|&t| t >= params.t_max) {
            hs = hybrid::coordinated_jump(spec.topology(), &params, &hs).unwrap().0;
            guard += 1;
            prop_assert!(guard <= 8);
        }
        let after = lyapunov_vtilde(&spec, 2.0, &reference, &hs.z, &hs.timers());
        prop_assert!(before.valid && after.valid);
        prop_assert!(after.value <= before.value);
    }

    #[test]
    fn config_round_trips_through_toml(
        exp in prop::sample::select(vec![Experiment::Example1, Experiment::Example2, Experiment::Quadratic]),
        alg in prop::sample::select(vec![Algorithm::AcceleratedFlow, Algorithm::HybridRestart, Algorithm::BaselinePrimalDual]),
        seed in 0..=i64::MAX as u64,
        t_end in 2.0f64..500.0,
        r in 2.0f64..10.0,
        dt in 1e-4f64..1e-1,
        eps in 0.0f64..1.0,
        offset in prop::option::of(0.01f64..0.49),
        every in 1u64..100,
    ) {
        let mut cfg = ExperimentConfig::preset(exp);
        cfg.algorithm = alg;
        cfg.seed = seed;
        cfg.t_end = t_end;
        cfg.flow.r = r;
        cfg.flow.dt = dt;
        cfg.disturbance = DisturbanceSpec::constant(eps);
        cfg.timers.offset = offset;
        cfg.output.sample_every = every;
        let text = cfg.to_toml().unwrap();
        prop_assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }
}

#[test]
fn seeds_beyond_toml_integers_are_rejected() {
    let mut cfg = ExperimentConfig::preset(Experiment::Example1);
    cfg.seed = u64::MAX;
    assert!(cfg.validate().is_err());
}

#[test]
fn identical_configs_give_identical_outputs() {
    let mut cfg = ExperimentConfig::preset(Experiment::Example2);
    cfg.t_end = 15.0;
    cfg.disturbance = DisturbanceSpec {
        kind: nashflow::DisturbanceKind::UniformRandom,
        epsilon: 1e-3,
        seed: 5,
        ..DisturbanceSpec::default()
    };
    cfg.reference.fixture_dir = Some(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures"));
    let a = harness::run(&cfg).unwrap();
    let b = harness::run(&cfg).unwrap();
    let csv = |o: &harness::RunOutcome| {
        let mut buf = Vec::new();
        o.record.write_csv_to(&mut buf).unwrap();
        buf
    };
    assert!(a.record.jump_count() > 0);
    assert_eq!(a.record.events, b.record.events);
    assert_eq!(csv(&a), csv(&b));
}

#[test]
fn laplacian_of_weighted_triangle() {
    let g = SubnetworkGraph::from_edges(3, &[(0, 1, 2.0), (1, 2, 3.0)]).unwrap();
    let expected = DMatrix::from_row_slice(3, 3, &[2.0, -2.0, 0.0, -2.0, 5.0, -3.0, 0.0, -3.0, 3.0]);
    assert_eq!(g.laplacian(), expected);
}
