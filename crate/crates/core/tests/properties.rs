mod common;

use common::{power_iteration, random_environment, rng};
use exitlab::environment::{Environment, EnvironmentLaw};
use exitlab::exit_solver::{exit_measure, DomainSystem, SolverOptions};
use exitlab::kernel::{Measure, SimpleRandomWalk};
use exitlab::lattice::{ball, LatticePoint};
use exitlab::multiscale_stats::smooth;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exit_law_is_a_probability_on_the_outer_boundary(seed in 0u64..10_000, radius in 1.5f64..4.5) {
        let mut r = rng(seed);
        let v = ball(&LatticePoint::origin(3), radius).unwrap();
        let env = random_environment(&mut r, 3, v.domain());
        let ex = exit_measure(&env, v.domain(), &LatticePoint::origin(3), SolverOptions::default()).unwrap();
        prop_assert!((ex.measure.total() - 1.0).abs() < 1e-10);
        for (z, p) in ex.measure.entries() {
            prop_assert!(*p >= -1e-14);
            prop_assert!(v.boundary().contains(z));
        }
    }

    #[test]
    fn strong_markov_at_an_intermediate_ball(seed in 0u64..10_000, inner in 1.5f64..3.0) {
        // ex_V(0, ·) = Σ_y ex_U(0, y) ex_V(y, ·) for U ⊂ V.
        let mut r = rng(seed);
        let v = ball(&LatticePoint::origin(3), 4.5).unwrap();
        let u = ball(&LatticePoint::origin(3), inner).unwrap();
        let env = random_environment(&mut r, 3, v.domain());
        let opts = SolverOptions::default();
        let o = LatticePoint::origin(3);
        let direct = exit_measure(&env, v.domain(), &o, opts).unwrap().measure;
        let sys = DomainSystem::assemble(&env, v.domain(), opts).unwrap();
        let first = exit_measure(&env, u.domain(), &o, opts).unwrap().measure;
        let composed = sys.left_exit(&first).unwrap();
        prop_assert!(direct.l1_dist(&composed) < 1e-9);
    }

    #[test]
    fn environment_file_round_trip(seed in 0u64..10_000, eps in 0.0f64..0.16) {
        let law = EnvironmentLaw::isotropic(3, eps).unwrap();
        let v = ball(&LatticePoint::origin(3), 2.5).unwrap();
        let env = law.sample_environment(v.domain(), seed).unwrap();
        let mut buf = Vec::new();
        env.write_to(&mut buf).unwrap();
        let back = Environment::read_from(buf.as_slice()).unwrap();
        prop_assert!(env == back);
    }

    #[test]
    fn smoothing_preserves_mass_and_contracts(seed in 0u64..10_000, m in 1.0f64..3.0) {
        let mut r = rng(seed);
        let v = ball(&LatticePoint::origin(3), 3.0).unwrap();
        let env = random_environment(&mut r, 3, v.domain());
        let o = LatticePoint::origin(3);
        let opts = SolverOptions::default();
        let a = exit_measure(&env, v.domain(), &o, opts).unwrap().measure;
        let b = exit_measure(&SimpleRandomWalk::new(3), v.domain(), &o, opts).unwrap().measure;
        let diff = a.sub(&b);
        let sm = smooth(&diff, 3, |_| Ok(m)).unwrap();
        prop_assert!(sm.total().abs() < 1e-10);
        prop_assert!(sm.l1() <= diff.l1() + 1e-12);
        let sa = smooth(&a, 3, |_| Ok(m)).unwrap();
        prop_assert!((sa.total() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn power_iteration_oracle_matches_simple_random_walk_symmetry() {
    let v = ball(&LatticePoint::origin(3), 3.0).unwrap();
    let (ex, _) = power_iteration(&SimpleRandomWalk::new(3), v.domain(), &LatticePoint::origin(3), 1e-14);
    let solved = exit_measure(&SimpleRandomWalk::new(3), v.domain(), &LatticePoint::origin(3), SolverOptions::default())
        .unwrap()
        .measure;
    assert!(ex.l1_dist(&solved) < 1e-10);
    let flipped = Measure::from_entries(ex.entries().iter().map(|(z, p)| (z.neg(), *p)).collect());
    assert!(ex.l1_dist(&flipped) < 1e-12);
}
