//! Planar revolute arms and joint-space metric fusion.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::VelocityField;
use crate::geometry::{min_distance_over, FieldHandle, PointN, Shape};
use crate::metric::{
    accumulate_terms, constraint_term, influence_weight, shape_velocity, ConstraintSpec,
    MetricTensor,
};

/// A serial chain of revolute joints in the plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub link_lengths: Vec<f64>,
    #[serde(default)]
    pub base: [f64; 2],
    #[serde(default)]
    pub joint_limits: Option<Vec<(f64, f64)>>,
}

impl ArmModel {
    pub fn new(link_lengths: Vec<f64>, base: [f64; 2]) -> Result<Self> {
        let arm = Self {
            link_lengths,
            base,
            joint_limits: None,
        };
        arm.validate()?;
        Ok(arm)
    }

    pub fn with_limits(mut self, limits: Vec<(f64, f64)>) -> Result<Self> {
        self.joint_limits = Some(limits);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.link_lengths.is_empty() {
            return invalid("an arm needs at least one link");
        }
        if self.link_lengths.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return invalid("link lengths must be positive");
        }
        if !self.base.iter().all(|x| x.is_finite()) {
            return invalid("arm base must be finite");
        }
        if let Some(limits) = &self.joint_limits {
            if limits.len() != self.link_lengths.len() {
                return invalid("need one joint limit per link");
            }
            if limits.iter().any(|(lo, hi)| !(lo < hi)) {
                return invalid("joint limits need min < max");
            }
        }
        Ok(())
    }

    pub fn num_joints(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn tip(&self) -> BodyPoint {
        BodyPoint {
            link_index: self.num_joints() - 1,
            fraction: 1.0,
        }
    }

    fn check_config(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.num_joints() {
            return invalid(format!(
                "configuration has {} angles, arm has {} joints",
                q.len(),
                self.num_joints()
            ));
        }
        Ok(())
    }

    fn check_point(&self, bp: &BodyPoint) -> Result<()> {
        if bp.link_index >= self.num_joints() || !(0.0..=1.0).contains(&bp.fraction) {
            return invalid("body point is not on the arm");
        }
        Ok(())
    }

    /// Joint positions `p_0 = base, ..., p_n = tip` for configuration `q`.
    pub fn joint_positions(&self, q: &DVector<f64>) -> Result<Vec<PointN>> {
        self.check_config(q)?;
        let mut theta = 0.0;
        let mut p = [self.base[0], self.base[1]];
        let mut out = vec![DVector::from_row_slice(&p)];
        for (l, qi) in self.link_lengths.iter().zip(q.iter()) {
            theta += qi;
            p[0] += l * theta.cos();
            p[1] += l * theta.sin();
            out.push(DVector::from_row_slice(&p));
        }
        Ok(out)
    }
}

/// A point on a link's centerline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyPoint {
    pub link_index: usize,
    pub fraction: f64,
}

pub fn fk_point(arm: &ArmModel, bp: &BodyPoint, q: &DVector<f64>) -> Result<PointN> {
    arm.check_point(bp)?;
    arm.check_config(q)?;
    let mut theta = 0.0;
    let mut p = [arm.base[0], arm.base[1]];
    for i in 0..=bp.link_index {
        theta += q[i];
        let reach = if i == bp.link_index {
            bp.fraction * arm.link_lengths[i]
        } else {
            arm.link_lengths[i]
        };
        p[0] += reach * theta.cos();
        p[1] += reach * theta.sin();
    }
    Ok(DVector::from_row_slice(&p))
}

/// `d fk_point / d q` as a `2 x n` matrix.
///
/// Column `m` is the body point's offset from joint `m`, rotated by 90
/// degrees; joints past the body point's link contribute nothing.
pub fn jacobian(arm: &ArmModel, bp: &BodyPoint, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    let p = fk_point(arm, bp, q)?;
    let joints = arm.joint_positions(q)?;
    let mut j = DMatrix::zeros(2, arm.num_joints());
    for m in 0..=bp.link_index {
        let r = &p - &joints[m];
        j[(0, m)] = -r[1];
        j[(1, m)] = r[0];
    }
    Ok(j)
}

/// `points_per_link` evenly spaced points per link, excluding each link's root.
pub fn sample_body_points(arm: &ArmModel, points_per_link: usize) -> Result<Vec<BodyPoint>> {
    if points_per_link == 0 {
        return invalid("need at least one body point per link");
    }
    Ok((0..arm.num_joints())
        .flat_map(|link_index| {
            (0..points_per_link).map(move |i| BodyPoint {
                link_index,
                fraction: (i + 1) as f64 / points_per_link as f64,
            })
        })
        .collect())
}

/// `J^T M_x J`.
pub fn pullback_metric(j: &DMatrix<f64>, m_x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m_x.nrows() != m_x.ncols() || m_x.nrows() != j.nrows() {
        return invalid("Jacobian rows must match the workspace metric");
    }
    Ok(j.transpose() * m_x * j)
}

/// `I + sum_i w_i J_i^T A_i J_i` over body-point constraints.
///
/// `A_i` is the unweighted anisotropic part at the body point; all distance
/// decay is carried by `w_i`.
pub fn fuse_metrics(
    arm: &ArmModel,
    specs: &[(BodyPoint, ConstraintSpec)],
    q: &DVector<f64>,
) -> Result<MetricTensor> {
    arm.check_config(q)?;
    let n = arm.num_joints();
    let mut m = DMatrix::identity(n, n);
    for (bp, spec) in specs {
        let x = fk_point(arm, bp, q)?;
        if spec.field.dim() != 2 {
            return invalid("body-point constraints must be planar fields");
        }
        let sample = spec.field.eval(&x)?;
        let w = influence_weight(sample.value, spec.kappa, spec.margin);
        if w == 0.0 {
            continue;
        }
        let j = jacobian(arm, bp, q)?;
        m += pullback_metric(&j, &constraint_term(spec, &sample))? * w;
    }
    Ok(MetricTensor { matrix: m })
}

/// Pairs every body point with every workspace constraint.
pub fn body_constraints(
    body_points: &[BodyPoint],
    constraints: &[ConstraintSpec],
) -> Vec<(BodyPoint, ConstraintSpec)> {
    body_points
        .iter()
        .flat_map(|bp| constraints.iter().map(move |c| (*bp, c.clone())))
        .collect()
}

/// Joint limits as configuration-space halfspaces: `q_i >= lo_i` and `q_i <= hi_i`.
pub fn joint_limit_fields(arm: &ArmModel) -> Result<Vec<FieldHandle>> {
    let n = arm.num_joints();
    let mut out: Vec<FieldHandle> = Vec::new();
    for (i, (lo, hi)) in arm.joint_limits.iter().flatten().enumerate() {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        out.push(Arc::new(Shape::halfspace(e.clone(), *lo)?));
        e[i] = -1.0;
        out.push(Arc::new(Shape::halfspace(e, -hi)?));
    }
    Ok(out)
}

/// A joint-space field reshaped by the fused metric.
#[derive(Clone, Debug)]
pub struct ShapedJointField<F> {
    pub arm: ArmModel,
    pub body_specs: Vec<(BodyPoint, ConstraintSpec)>,
    /// Constraints native to configuration space, such as joint limits.
    pub joint_specs: Vec<ConstraintSpec>,
    pub base: F,
}

impl<F: VelocityField> ShapedJointField<F> {
    pub fn metric(&self, q: &DVector<f64>) -> Result<MetricTensor> {
        let mut m = fuse_metrics(&self.arm, &self.body_specs, q)?;
        accumulate_terms(&mut m.matrix, &self.joint_specs, q)?;
        Ok(m)
    }
}

pub fn shaped_joint_field<F: VelocityField>(
    arm: ArmModel,
    body_specs: Vec<(BodyPoint, ConstraintSpec)>,
    joint_specs: Vec<ConstraintSpec>,
    base: F,
) -> Result<ShapedJointField<F>> {
    arm.validate()?;
    if base.dim() != arm.num_joints() {
        return invalid("base field must output one velocity per joint");
    }
    Ok(ShapedJointField {
        arm,
        body_specs,
        joint_specs,
        base,
    })
}

impl<F: VelocityField> VelocityField for ShapedJointField<F> {
    fn dim(&self) -> usize {
        self.arm.num_joints()
    }

    fn velocity(&self, q: &PointN, t: f64) -> Result<DVector<f64>> {
        let v = self.base.velocity(q, t)?;
        if self.body_specs.is_empty() && self.joint_specs.is_empty() {
            return Ok(v);
        }
        shape_velocity(&self.metric(q)?, &v)
    }

    fn correct_state(&self, q: &mut PointN) -> Result<()> {
        self.base.correct_state(q)
    }
}

/// Smallest signed distance from any body point to any field at `q`.
pub fn min_body_distance(
    arm: &ArmModel,
    body_points: &[BodyPoint],
    fields: &[FieldHandle],
    q: &DVector<f64>,
) -> Result<f64> {
    let mut best = f64::INFINITY;
    for bp in body_points {
        let x = fk_point(arm, bp, q)?;
        best = best.min(min_distance_over(fields, &x)?.1.value);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FnField;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn q(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn random_arm(rng: &mut ChaCha8Rng) -> ArmModel {
        let n = rng.random_range(1..5);
        let lengths = (0..n).map(|_| rng.random_range(0.2..1.5)).collect();
        ArmModel::new(lengths, [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).unwrap()
    }

    #[test]
    fn forward_kinematics_examples() {
        let arm = ArmModel::new(vec![1.0, 1.0], [0.0, 0.0]).unwrap();
        let tip = arm.tip();
        assert_abs_diff_eq!(fk_point(&arm, &tip, &q(&[0.0, 0.0])).unwrap(), q(&[2.0, 0.0]));
        assert_abs_diff_eq!(
            fk_point(&arm, &tip, &q(&[FRAC_PI_2, 0.0])).unwrap(),
            q(&[0.0, 2.0]),
            epsilon = 1e-12
        );
        let one = ArmModel::new(vec![1.0], [0.0, 0.0]).unwrap();
        let mid = BodyPoint {
            link_index: 0,
            fraction: 0.5,
        };
        assert_eq!(fk_point(&one, &mid, &q(&[0.0])).unwrap(), q(&[0.5, 0.0]));
        assert!(fk_point(&one, &mid, &q(&[0.0, 1.0])).is_err());
        assert!(fk_point(&one, &BodyPoint { link_index: 1, fraction: 0.5 }, &q(&[0.0])).is_err());
    }

    #[test]
    fn arm_validation() {
        assert!(ArmModel::new(vec![], [0.0, 0.0]).is_err());
        assert!(ArmModel::new(vec![1.0, 0.0], [0.0, 0.0]).is_err());
        let arm = ArmModel::new(vec![1.0], [0.0, 0.0]).unwrap();
        assert!(arm.clone().with_limits(vec![(1.0, -1.0)]).is_err());
        assert!(arm.with_limits(vec![(-1.0, 1.0), (0.0, 1.0)]).is_err());
    }

    #[test]
    fn jacobian_examples() {
        let one = ArmModel::new(vec![1.0], [0.0, 0.0]).unwrap();
        let j = jacobian(&one, &one.tip(), &q(&[0.0])).unwrap();
        assert_abs_diff_eq!(j, DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), epsilon = 1e-15);
        let root = BodyPoint {
            link_index: 0,
            fraction: 0.0,
        };
        assert_eq!(jacobian(&one, &root, &q(&[0.7])).unwrap(), DMatrix::zeros(2, 1));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..200 {
            let arm = random_arm(&mut rng);
            let n = arm.num_joints();
            let cfg = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let bp = BodyPoint {
                link_index: rng.random_range(0..n),
                fraction: rng.random_range(0.0..=1.0),
            };
            let j = jacobian(&arm, &bp, &cfg).unwrap();
            for m in 0..n {
                let mut plus = cfg.clone();
                let mut minus = cfg.clone();
                plus[m] += h;
                minus[m] -= h;
                let fd = (fk_point(&arm, &bp, &plus).unwrap() - fk_point(&arm, &bp, &minus).unwrap())
                    / (2.0 * h);
                assert!((fd - j.column(m)).amax() < 1e-6);
                if m > bp.link_index {
                    assert_eq!(j.column(m).amax(), 0.0);
                }
            }
        }
    }

    #[test]
    fn body_point_sampling() {
        let arm = ArmModel::new(vec![1.0, 0.5], [0.0, 0.0]).unwrap();
        let tips = sample_body_points(&arm, 1).unwrap();
        assert_eq!(tips.len(), 2);
        assert!(tips.iter().all(|bp| bp.fraction == 1.0));
        let pts = sample_body_points(&arm, 15).unwrap();
        assert_eq!(pts.len(), 30);
        for link in pts.chunks(15) {
            assert!(link.windows(2).all(|w| w[1].fraction > w[0].fraction));
            assert!(link[0].fraction > 0.0);
        }
        assert!(sample_body_points(&arm, 0).is_err());
    }

    #[test]
    fn pullback_examples() {
        let j = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let mx = DMatrix::from_diagonal(&q(&[2.0, 3.0]));
        assert_eq!(pullback_metric(&j, &mx).unwrap(), DMatrix::from_element(1, 1, 3.0));
        assert_eq!(pullback_metric(&DMatrix::zeros(2, 3), &mx).unwrap(), DMatrix::zeros(3, 3));
        assert!(pullback_metric(&DMatrix::zeros(3, 1), &mx).is_err());
    }

    #[test]
    fn pullback_preserves_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let arm = random_arm(&mut rng);
            let n = arm.num_joints();
            let cfg = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let qdot = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let j = jacobian(&arm, &arm.tip(), &cfg).unwrap();
            let l = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            let mx = &l * l.transpose() + DMatrix::identity(2, 2);
            let xdot = &j * &qdot;
            let lhs = (qdot.transpose() * pullback_metric(&j, &mx).unwrap() * &qdot)[(0, 0)];
            let rhs = (xdot.transpose() * &mx * &xdot)[(0, 0)];
            assert!((lhs - rhs).abs() < 1e-10 * (1.0 + rhs.abs()));
        }
    }

    fn circle_spec(center: [f64; 2], r: f64, alpha: f64, beta: f64) -> ConstraintSpec {
        ConstraintSpec::new(Arc::new(Shape::circle(center, r).unwrap()), alpha, beta, 4.0, 0.0).unwrap()
    }

    #[test]
    fn fusion_examples() {
        let one = ArmModel::new(vec![1.0], [0.0, 0.0]).unwrap();
        assert_eq!(fuse_metrics(&one, &[], &q(&[0.0])).unwrap(), MetricTensor::identity(1));

        // Tip at (1, 0) touching a circle below it: normal (0, 1).
        let touching = circle_spec([1.0, -0.5], 0.5, 50.0, 0.0);
        let m = fuse_metrics(&one, &[(one.tip(), touching)], &q(&[0.0])).unwrap();
        assert_abs_diff_eq!(m.matrix[(0, 0)], 51.0, epsilon = 1e-12);

        let far = ConstraintSpec::new(Arc::new(Shape::circle([100.0, 0.0], 1.0).unwrap()), 50.0, 2.0, 4.0, 0.0)
            .unwrap();
        let arm = ArmModel::new(vec![1.0, 1.0, 0.5], [0.0, 0.0]).unwrap();
        let pts = sample_body_points(&arm, 5).unwrap();
        let m = fuse_metrics(&arm, &body_constraints(&pts, &[far]), &q(&[0.1, 0.2, 0.3])).unwrap();
        assert!((m.matrix - DMatrix::identity(3, 3)).amax() < 1e-9);
    }

    #[test]
    fn fused_metric_is_spd_and_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let arm = ArmModel::new(vec![0.6, 0.5, 0.4], [0.0, 0.0]).unwrap();
        let obstacle = circle_spec([0.6, 0.4], 0.2, 50.0, 2.0);
        for _ in 0..300 {
            let cfg = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            let link = rng.random_range(0..3);
            let bp = BodyPoint {
                link_index: link,
                fraction: rng.random_range(0.1..=1.0),
            };
            let m = fuse_metrics(&arm, &[(bp, obstacle.clone())], &cfg).unwrap();
            assert!(m.asymmetry() < 1e-12);
            assert!(m.eigenvalues()[0] >= 1.0 - 1e-12);
            for jj in link + 1..3 {
                for k in 0..3 {
                    let expect = if k == jj { 1.0 } else { 0.0 };
                    assert_eq!(m.matrix[(jj, k)], expect);
                }
            }
        }
    }

    #[test]
    fn joint_limits_enter_as_halfspaces() {
        let arm = ArmModel::new(vec![1.0, 1.0], [0.0, 0.0])
            .unwrap()
            .with_limits(vec![(-1.0, 1.0), (-0.5, 0.5)])
            .unwrap();
        let fields = joint_limit_fields(&arm).unwrap();
        assert_eq!(fields.len(), 4);
        let at = q(&[0.25, 0.5]);
        let d: Vec<f64> = fields.iter().map(|f| f.eval(&at).unwrap().value).collect();
        assert_abs_diff_eq!(d.as_slice(), [1.25, 0.75, 1.0, 0.0].as_slice(), epsilon = 1e-15);

        let specs: Vec<ConstraintSpec> = fields
            .into_iter()
            .map(|f| ConstraintSpec::new(f, 50.0, 0.0, 100.0, 0.0).unwrap())
            .collect();
        let base = FnField::new(2, |_: &PointN, _| Ok(q(&[0.0, 1.0])));
        let shaped = shaped_joint_field(arm, vec![], specs, base).unwrap();
        let v = shaped.velocity(&at, 0.0).unwrap();
        assert!(v[1] > 0.0 && v[1] < 1.0 / 50.0);
    }

    #[test]
    fn unconstrained_joint_field_is_the_base() {
        let arm = ArmModel::new(vec![1.0, 1.0, 1.0], [0.0, 0.0]).unwrap();
        let base = FnField::new(3, |a: &PointN, t: f64| Ok(a.map(|x| (x + t).sin())));
        let shaped = shaped_joint_field(arm, vec![], vec![], &base).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let cfg = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            assert_eq!(shaped.velocity(&cfg, 0.3).unwrap(), base.velocity(&cfg, 0.3).unwrap());
        }
    }
}
