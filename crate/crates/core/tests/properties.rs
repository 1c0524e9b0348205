use std::sync::Arc;

use casf::baselines::{cbf_filter, hard_project, CbfConfig, ProjectionConfig};
use casf::eval::{discrete_frechet, path_length, Rollout};
use casf::geometry::{eval_sdf, FieldHandle, PointN, Shape};
use casf::kinematics::{fk_point, jacobian, pullback_metric, ArmModel, BodyPoint};
use casf::metric::{build_metric, influence_weight, shape_velocity, ConstraintSpec};
use casf::policy::tube_std;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn p2(x: f64, y: f64) -> PointN {
    DVector::from_vec(vec![x, y])
}

fn coord() -> impl Strategy<Value = f64> {
    -1.0..1.0_f64
}

fn shape() -> impl Strategy<Value = Shape> {
    prop_oneof![
        (coord(), coord(), 0.05..0.5_f64).prop_map(|(x, y, r)| Shape::circle([x, y], r).unwrap()),
        (coord(), coord(), 0.05..0.5_f64, 0.05..0.5_f64)
            .prop_map(|(x, y, w, h)| Shape::axis_box([x, y], [x + w, y + h]).unwrap()),
        (coord(), coord(), coord(), coord(), 0.02..0.2_f64)
            .prop_map(|(a, b, c, d, r)| Shape::capsule([a, b], [c, d], r).unwrap()),
    ]
}

fn spec(shape: Shape, alpha: f64, beta_frac: f64, kappa: f64) -> ConstraintSpec {
    let field: FieldHandle = Arc::new(shape);
    ConstraintSpec::new(field, alpha, alpha * beta_frac, kappa, 0.02).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sdf_gradients_are_unit_or_flagged(s in shape(), x in coord(), y in coord()) {
        let sample = eval_sdf(&s, &p2(x, y)).unwrap();
        if sample.gradient_norm_ok {
            prop_assert!((sample.gradient.norm() - 1.0).abs() < 1e-9);
        } else {
            prop_assert_eq!(sample.gradient.norm(), 0.0);
        }
    }

    #[test]
    fn sdf_is_one_lipschitz(s in shape(), a in (coord(), coord()), b in (coord(), coord())) {
        let (pa, pb) = (p2(a.0, a.1), p2(b.0, b.1));
        let da = eval_sdf(&s, &pa).unwrap().value;
        let db = eval_sdf(&s, &pb).unwrap().value;
        prop_assert!((da - db).abs() <= (&pa - &pb).norm() + 1e-12);
    }

    #[test]
    fn influence_weight_is_bounded_and_monotone(d in -1.0..1.0_f64, dd in 0.0..0.5_f64, kappa in 1.0..1e4_f64) {
        let w = influence_weight(d, kappa, 0.02);
        prop_assert!((0.0..=1.0).contains(&w));
        prop_assert!(influence_weight(d + dd, kappa, 0.02) <= w);
    }

    #[test]
    fn metric_is_symmetric_positive_definite(
        shapes in prop::collection::vec(shape(), 1..4),
        alpha in 0.0..200.0_f64,
        beta_frac in 0.0..1.0_f64,
        kappa in 1.0..1e4_f64,
        x in coord(),
        y in coord(),
    ) {
        let specs: Vec<_> = shapes.into_iter().map(|s| spec(s, alpha, beta_frac, kappa)).collect();
        let m = build_metric(&specs, &p2(x, y)).unwrap();
        prop_assert!(m.asymmetry() < 1e-12);
        let ev = m.eigenvalues();
        prop_assert!(ev[0] >= 1.0 - 1e-9);
    }

    #[test]
    fn shaping_never_reverses_or_amplifies(
        s in shape(),
        alpha in 0.0..200.0_f64,
        beta_frac in 0.0..1.0_f64,
        x in coord(), y in coord(), vx in coord(), vy in coord(),
    ) {
        let m = build_metric(&[spec(s, alpha, beta_frac, 100.0)], &p2(x, y)).unwrap();
        let v = p2(vx, vy);
        let u = shape_velocity(&m, &v).unwrap();
        prop_assert!(u.dot(&v) >= -1e-12);
        prop_assert!(u.norm() <= v.norm() + 1e-12);
        prop_assert!((&m.matrix * &u - &v).norm() < 1e-9);
    }

    #[test]
    fn projection_output_never_points_inward(s in shape(), x in coord(), y in coord(), vx in coord(), vy in coord()) {
        let fields: Vec<FieldHandle> = vec![Arc::new(s.clone())];
        let a = p2(x, y);
        let sample = eval_sdf(&s, &a).unwrap();
        let cfg = ProjectionConfig { margin: 0.05, push_out: false };
        match hard_project(&fields, &cfg, &a, &p2(vx, vy)) {
            Ok((_, v)) => {
                if sample.value <= 0.05 && sample.gradient_norm_ok {
                    prop_assert!(sample.gradient.dot(&v) >= -1e-12);
                }
            }
            Err(_) => prop_assert!(sample.value < 0.0 && !sample.gradient_norm_ok),
        }
    }

    #[test]
    fn cbf_output_satisfies_the_barrier(s in shape(), x in coord(), y in coord(), vx in coord(), vy in coord(), gamma in 0.1..20.0_f64) {
        let fields: Vec<FieldHandle> = vec![Arc::new(s.clone())];
        let a = p2(x, y);
        let sample = eval_sdf(&s, &a).unwrap();
        prop_assume!(sample.gradient_norm_ok);
        let v = cbf_filter(&fields, &CbfConfig { gamma, max_passes: 1 }, &a, &p2(vx, vy)).unwrap();
        prop_assert!(sample.gradient.dot(&v) + gamma * sample.value >= -1e-9);
    }

    #[test]
    fn pullback_preserves_energy(
        lengths in prop::collection::vec(0.1..1.0_f64, 1..5),
        seed_q in prop::collection::vec(-3.0..3.0_f64, 5),
        seed_v in prop::collection::vec(-2.0..2.0_f64, 5),
        m in prop::collection::vec(-1.0..1.0_f64, 4),
        link_frac in 0.0..1.0_f64,
    ) {
        let n = lengths.len();
        let arm = ArmModel::new(lengths, [0.0, 0.0]).unwrap();
        let q = DVector::from_row_slice(&seed_q[..n]);
        let qd = DVector::from_row_slice(&seed_v[..n]);
        let b = DMatrix::from_row_slice(2, 2, &m);
        let m_x = DMatrix::identity(2, 2) + b.transpose() * &b;
        let bp = BodyPoint { link_index: n - 1, fraction: link_frac };
        let j = jacobian(&arm, &bp, &q).unwrap();
        let lhs = (qd.transpose() * pullback_metric(&j, &m_x).unwrap() * &qd)[0];
        let xd = &j * &qd;
        let rhs = (xd.transpose() * &m_x * &xd)[0];
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
    }

    #[test]
    fn forward_kinematics_respects_link_lengths(
        lengths in prop::collection::vec(0.1..1.0_f64, 1..5),
        angles in prop::collection::vec(-3.0..3.0_f64, 5),
    ) {
        let n = lengths.len();
        let arm = ArmModel::new(lengths.clone(), [0.2, -0.1]).unwrap();
        let q = DVector::from_row_slice(&angles[..n]);
        let joints = arm.joint_positions(&q).unwrap();
        for (i, len) in lengths.iter().enumerate() {
            prop_assert!(((&joints[i + 1] - &joints[i]).norm() - len).abs() < 1e-12);
        }
        let tip = fk_point(&arm, &arm.tip(), &q).unwrap();
        prop_assert!((&tip - &joints[n]).norm() < 1e-12);
    }

    #[test]
    fn frechet_is_a_symmetric_bound(
        p in prop::collection::vec((coord(), coord()), 1..8),
        q in prop::collection::vec((coord(), coord()), 1..8),
    ) {
        let p: Vec<PointN> = p.into_iter().map(|(x, y)| p2(x, y)).collect();
        let q: Vec<PointN> = q.into_iter().map(|(x, y)| p2(x, y)).collect();
        let d = discrete_frechet(&p, &q).unwrap();
        prop_assert_eq!(d, discrete_frechet(&q, &p).unwrap());
        let ends = (&p[0] - &q[0]).norm().max((p.last().unwrap() - q.last().unwrap()).norm());
        prop_assert!(d >= ends - 1e-15);
        prop_assert_eq!(discrete_frechet(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn path_length_bounds_displacement(pts in prop::collection::vec((coord(), coord()), 2..20)) {
        let states: Vec<PointN> = pts.into_iter().map(|(x, y)| p2(x, y)).collect();
        let r = Rollout::uniform(0.0, 0.1, states.clone()).unwrap();
        prop_assert!(path_length(&r) + 1e-12 >= (&states[0] - states.last().unwrap()).norm());
    }

    #[test]
    fn tube_width_decays(sigma0 in 0.0..1.0_f64, k in 0.0..10.0_f64, t in 0.0..1.0_f64, dt in 0.0..0.5_f64) {
        prop_assert!(tube_std(sigma0, k, t + dt) <= tube_std(sigma0, k, t));
        prop_assert!(tube_std(sigma0, k, t) <= sigma0);
    }
}
