use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subgoal_mpc::world2d::{Control, EnvConfig, EnvSpec, Vec2, PENETRATION_TOL};

fn random_walk(env: &EnvConfig, seed: u64, steps: usize) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = env.rest_state();
    let base = s.joints[0];
    let (mut link_err, mut base_move, mut min_sdf) = (0.0f64, 0.0f64, f64::INFINITY);
    for _ in 0..steps {
        let u = Control::new(rng.random_range(-0.06..0.06), rng.random_range(-0.06..0.06));
        let next = env.step(&s, u);
        // keypoints move by at most u_max plus a projection correction of
        // at most another u_max
        let moved = next
            .joints
            .iter()
            .zip(&s.joints)
            .map(|(a, b)| a.distance(*b))
            .fold(0.0, f64::max);
        assert!(moved <= 2.0 * env.u_max, "keypoint moved {moved}");
        s = next;
        link_err = link_err.max(s.max_link_error());
        base_move = base_move.max(s.joints[0].distance(base));
        min_sdf = s.joints.iter().map(|&p| env.sdf_query(p)).fold(min_sdf, f64::min);
    }
    (link_err, base_move, min_sdf)
}

#[test]
fn chain_invariants_over_random_steps() {
    let env = EnvSpec::chain_posts().build().unwrap();
    for seed in 0..10 {
        let (link_err, base_move, min_sdf) = random_walk(&env, seed, 1000);
        assert!(link_err <= 1e-6, "link error {link_err}");
        assert_eq!(base_move, 0.0);
        assert!(min_sdf >= -PENETRATION_TOL, "min sdf {min_sdf}");
    }
}

#[test]
fn point_mass_never_penetrates() {
    let env = EnvSpec::u_trap().build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = env.point_state(Vec2::new(0.0, 0.0));
    for _ in 0..2000 {
        let u = Control::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
        s = env.step(&s, u);
        assert!(env.sdf_query(s.gripper()) >= -PENETRATION_TOL);
    }
}

#[test]
fn step_is_deterministic() {
    let env = EnvSpec::chain_posts().build().unwrap();
    let s = env.rest_state();
    let u = Control::new(-0.03, 0.04);
    let a = env.step(&s, u);
    let b = env.step(&s, u);
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn hundred_random_steps_stay_collision_free(seed in 0u64..10_000) {
        let env = EnvSpec::chain_posts().build().unwrap();
        let (link_err, base_move, min_sdf) = random_walk(&env, seed, 100);
        prop_assert!(link_err <= 1e-6);
        prop_assert_eq!(base_move, 0.0);
        prop_assert!(min_sdf >= -PENETRATION_TOL);
    }
}
