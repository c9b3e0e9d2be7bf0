use proptest::prelude::*;
use se3grasp::lie::{apply_global, compose, exp_so3, geodesic_dist, log_so3, pose_inverse_increment};
use se3grasp::{Pose, Vec3};

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn pose() -> impl Strategy<Value = Pose> {
    (vec3(0.5), vec3(3.0)).prop_map(|(p, phi)| Pose::new(p, exp_so3(phi)))
}

proptest! {
    #[test]
    fn log_inverts_exp_below_pi(phi in vec3(1.8)) {
        prop_assume!(phi.norm() < 3.1);
        prop_assert!((log_so3(exp_so3(phi)) - phi).max_abs() < 1e-9);
    }

    #[test]
    fn inverse_increment_undoes_compose(g in pose(), dg in pose()) {
        let back = compose(compose(g, dg), pose_inverse_increment(dg));
        prop_assert!(geodesic_dist(&back, &g, 1.0) < 1e-9);
    }

    #[test]
    fn distance_is_a_left_invariant_metric(a in pose(), b in pose(), c in pose(), w in pose()) {
        let d = |x: &Pose, y: &Pose| geodesic_dist(x, y, 0.1);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-12);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        let (wa, wb) = (apply_global(&a, &w), apply_global(&b, &w));
        prop_assert!((d(&wa, &wb) - d(&a, &b)).abs() < 1e-9);
    }
}
