//! Distance-induced anisotropic metrics and metric-shaped velocity fields.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::field::VelocityField;
use crate::geometry::{Bounds, DistanceSample, FieldHandle, PointN};

pub const DEFAULT_ALPHA: f64 = 50.0;
pub const DEFAULT_BETA: f64 = 2.0;
pub const DEFAULT_MARGIN: f64 = 0.02;
/// Influence radius (where `w = e^{-1}`) as a fraction of the workspace diagonal.
pub const DEFAULT_RADIUS_FRACTION: f64 = 0.15;

/// `kappa` whose weight falls to `e^{-1}` at `radius` beyond the margin.
pub fn kappa_for_radius(radius: f64) -> Result<f64> {
    if !(radius > 0.0) || !radius.is_finite() {
        return invalid("influence radius must be positive");
    }
    Ok(1.0 / (radius * radius))
}

pub fn default_kappa(bounds: &Bounds) -> Result<f64> {
    kappa_for_radius(DEFAULT_RADIUS_FRACTION * bounds.diagonal())
}

/// One constraint's contribution to the metric.
#[derive(Clone, Debug)]
pub struct ConstraintSpec {
    pub field: FieldHandle,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub margin: f64,
}

impl ConstraintSpec {
    pub fn new(field: FieldHandle, alpha: f64, beta: f64, kappa: f64, margin: f64) -> Result<Self> {
        let spec = Self {
            field,
            alpha,
            beta,
            kappa,
            margin,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Default stiffness and margin with the given decay.
    pub fn with_defaults(field: FieldHandle, kappa: f64) -> Result<Self> {
        Self::new(field, DEFAULT_ALPHA, DEFAULT_BETA, kappa, DEFAULT_MARGIN)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !(self.alpha >= self.beta) || !self.alpha.is_finite() {
            return invalid("constraint stiffness needs alpha >= beta >= 0");
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return invalid("constraint kappa must be positive");
        }
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return invalid("constraint margin must be non-negative");
        }
        Ok(())
    }
}

/// `exp(-kappa * max(d - margin, 0)^2)`.
pub fn influence_weight(d: f64, kappa: f64, margin: f64) -> f64 {
    let excess = (d - margin).max(0.0);
    (-kappa * excess * excess).exp()
}

/// `alpha n n^T + beta (I - n n^T)` for a unit normal `n`.
pub fn anisotropic_part(n: &DVector<f64>, alpha: f64, beta: f64) -> DMatrix<f64> {
    let dim = n.len();
    let nnt = n * n.transpose();
    DMatrix::identity(dim, dim) * beta + nnt * (alpha - beta)
}

/// A symmetric positive definite metric.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricTensor {
    pub matrix: DMatrix<f64>,
}

impl MetricTensor {
    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .matrix
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn asymmetry(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).amax()
    }
}

/// Unweighted contribution of one constraint: the anisotropic part along the
/// sample's normal, or `beta I` when the normal is undefined.
pub fn constraint_term(spec: &ConstraintSpec, sample: &DistanceSample) -> DMatrix<f64> {
    match sample.normal() {
        Some(n) => anisotropic_part(&n, spec.alpha, spec.beta),
        None => {
            let dim = sample.gradient.len();
            DMatrix::identity(dim, dim) * spec.beta
        }
    }
}

/// Adds `w_k * term_k` for each constraint evaluated at `a`.
pub(crate) fn accumulate_terms(
    m: &mut DMatrix<f64>,
    specs: &[ConstraintSpec],
    a: &PointN,
) -> Result<()> {
    let dim = a.len();
    for spec in specs {
        if spec.field.dim() != dim {
            return invalid(format!(
                "constraint field is {}-dimensional, state is {dim}-dimensional",
                spec.field.dim()
            ));
        }
        let sample = spec.field.eval(a)?;
        let w = influence_weight(sample.value, spec.kappa, spec.margin);
        if w > 0.0 {
            *m += constraint_term(spec, &sample) * w;
        }
    }
    Ok(())
}

/// The metric at `a`: identity plus each constraint's weighted anisotropic
/// term. Constraints with no defined normal add `w beta I` instead.
pub fn build_metric(specs: &[ConstraintSpec], a: &PointN) -> Result<MetricTensor> {
    let dim = a.len();
    let mut m = DMatrix::identity(dim, dim);
    accumulate_terms(&mut m, specs, a)?;
    Ok(MetricTensor { matrix: m })
}

/// `M^{-1} v` by Cholesky solve.
pub fn shape_velocity(m: &MetricTensor, v: &DVector<f64>) -> Result<DVector<f64>> {
    if m.dim() != v.len() {
        return invalid("metric and velocity dimensions differ");
    }
    let chol = m.matrix.clone().cholesky().ok_or(Error::DegenerateMetric)?;
    Ok(chol.solve(v))
}

/// A base field reshaped by the constraint metric at each query state.
#[derive(Clone, Debug)]
pub struct ShapedField<F> {
    pub specs: Vec<ConstraintSpec>,
    pub base: F,
}

pub fn shaped_field<F: VelocityField>(specs: Vec<ConstraintSpec>, base: F) -> ShapedField<F> {
    ShapedField { specs, base }
}

impl<F: VelocityField> VelocityField for ShapedField<F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn velocity(&self, a: &PointN, t: f64) -> Result<DVector<f64>> {
        let v = self.base.velocity(a, t)?;
        if self.specs.is_empty() {
            return Ok(v);
        }
        shape_velocity(&build_metric(&self.specs, a)?, &v)
    }

    fn correct_state(&self, a: &mut PointN) -> Result<()> {
        self.base.correct_state(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FnField;
    use crate::geometry::Shape;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn p2(x: f64, y: f64) -> PointN {
        DVector::from_vec(vec![x, y])
    }

    fn halfspace_x(alpha: f64, beta: f64, kappa: f64, margin: f64) -> ConstraintSpec {
        // Allowed side is x >= 0 with outward normal (1, 0).
        let shape = Shape::halfspace(vec![1.0, 0.0], 0.0).unwrap();
        ConstraintSpec::new(Arc::new(shape), alpha, beta, kappa, margin).unwrap()
    }

    #[test]
    fn influence_weight_examples() {
        assert_eq!(influence_weight(-1.0, 4.0, 0.02), 1.0);
        assert_eq!(influence_weight(0.02, 4.0, 0.02), 1.0);
        assert_abs_diff_eq!(influence_weight(0.02 + 0.5, 4.0, 0.02), (-1.0f64).exp(), epsilon = 1e-15);
        assert!(influence_weight(0.02 + 5.0, 4.0, 0.02) < 1e-40);
        assert!(influence_weight(0.3, 4.0, 0.0) > influence_weight(0.31, 4.0, 0.0));
    }

    #[test]
    fn spec_validation() {
        let f: FieldHandle = Arc::new(Shape::circle([0.0, 0.0], 1.0).unwrap());
        assert!(ConstraintSpec::new(f.clone(), 1.0, 2.0, 1.0, 0.0).is_err());
        assert!(ConstraintSpec::new(f.clone(), 1.0, -0.1, 1.0, 0.0).is_err());
        assert!(ConstraintSpec::new(f.clone(), 1.0, 0.0, 0.0, 0.0).is_err());
        assert!(ConstraintSpec::new(f, 1.0, 0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn build_metric_examples() {
        let far = halfspace_x(50.0, 2.0, 100.0, 0.02);
        let m = build_metric(std::slice::from_ref(&far), &p2(10.0, 0.0)).unwrap();
        assert!((&m.matrix - DMatrix::identity(2, 2)).amax() < 1e-9);

        let m = build_metric(&[far], &p2(0.02, 0.3)).unwrap();
        assert_abs_diff_eq!(m.matrix, DMatrix::from_diagonal(&p2(51.0, 3.0)), epsilon = 1e-12);

        let hy = ConstraintSpec::new(
            Arc::new(Shape::halfspace(vec![0.0, 1.0], 0.0).unwrap()),
            50.0,
            0.0,
            1.0,
            0.0,
        )
        .unwrap();
        let m = build_metric(&[halfspace_x(50.0, 0.0, 1.0, 0.0), hy], &p2(0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(m.matrix, DMatrix::from_diagonal(&p2(51.0, 51.0)), epsilon = 1e-12);

        assert!(build_metric(&[halfspace_x(1.0, 0.0, 1.0, 0.0)], &DVector::zeros(3)).is_err());
    }

    #[test]
    fn degenerate_normal_falls_back_to_isotropic() {
        // Circle centre: gradient undefined.
        let c = ConstraintSpec::new(Arc::new(Shape::circle([0.0, 0.0], 1.0).unwrap()), 50.0, 2.0, 1.0, 0.0)
            .unwrap();
        let m = build_metric(&[c], &p2(0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(m.matrix, DMatrix::identity(2, 2) * 3.0, epsilon = 1e-12);
    }

    #[test]
    fn shape_velocity_examples() {
        let v = p2(1.0, 1.0);
        assert_eq!(shape_velocity(&MetricTensor::identity(2), &v).unwrap(), v);
        let m = MetricTensor {
            matrix: DMatrix::from_diagonal(&p2(51.0, 3.0)),
        };
        let out = shape_velocity(&m, &v).unwrap();
        assert_abs_diff_eq!(out, p2(1.0 / 51.0, 1.0 / 3.0), epsilon = 1e-15);

        let bad = MetricTensor {
            matrix: DMatrix::from_diagonal(&p2(1.0, -1.0)),
        };
        assert!(matches!(shape_velocity(&bad, &v), Err(Error::DegenerateMetric)));
    }

    #[test]
    fn normal_and_tangential_attenuation() {
        let (alpha, beta) = (50.0, 2.0);
        let spec = halfspace_x(alpha, beta, 1.0, 0.0);
        let m = build_metric(&[spec], &p2(0.0, 0.0)).unwrap();
        let n = p2(1.0, 0.0);
        let t = p2(0.0, 1.0);
        assert_abs_diff_eq!(shape_velocity(&m, &(&n * 3.0)).unwrap(), &n * (3.0 / 51.0), epsilon = 1e-14);
        assert_abs_diff_eq!(shape_velocity(&m, &t).unwrap(), &t / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn eigenvalue_law_for_one_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = ConstraintSpec::new(Arc::new(Shape::circle([0.0, 0.0], 0.5).unwrap()), 30.0, 4.0, 10.0, 0.02)
            .unwrap();
        for _ in 0..200 {
            let a = p2(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
            let s = spec.field.eval(&a).unwrap();
            let Some(n) = s.normal() else { continue };
            let w = influence_weight(s.value, spec.kappa, spec.margin);
            let m = build_metric(std::slice::from_ref(&spec), &a).unwrap();
            let ev = m.eigenvalues();
            assert_abs_diff_eq!(ev[0], 1.0 + w * spec.beta, epsilon = 1e-9);
            assert_abs_diff_eq!(ev[1], 1.0 + w * spec.alpha, epsilon = 1e-9);
            let mn = &m.matrix * &n;
            assert_abs_diff_eq!(mn, &n * (1.0 + w * spec.alpha), epsilon = 1e-9);
        }
    }

    #[test]
    fn legendre_stationarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let specs = vec![
            halfspace_x(50.0, 2.0, 4.0, 0.02),
            ConstraintSpec::new(Arc::new(Shape::circle([0.3, 0.3], 0.2).unwrap()), 20.0, 1.0, 8.0, 0.0)
                .unwrap(),
        ];
        for _ in 0..200 {
            let a = p2(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let v = p2(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let m = build_metric(&specs, &a).unwrap();
            let adot = shape_velocity(&m, &v).unwrap();
            assert!((&m.matrix * &adot - &v).amax() < 1e-9);
        }
    }

    #[test]
    fn shaped_field_identity_cases() {
        let base = FnField::new(2, |a: &PointN, t: f64| Ok(p2(a[1] + t, -a[0])));
        let empty = shaped_field(vec![], &base);
        let far = shaped_field(vec![halfspace_x(50.0, 2.0, 100.0, 0.02)], &base);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = p2(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let t = rng.random_range(0.0..1.0);
            assert_eq!(empty.velocity(&a, t).unwrap(), base.velocity(&a, t).unwrap());
            let far_a = p2(2.0 + a[0].abs(), a[1]);
            let diff = far.velocity(&far_a, t).unwrap() - base.velocity(&far_a, t).unwrap();
            assert!(diff.amax() < 1e-9);
        }
    }

    #[test]
    fn shaped_velocity_is_continuous_across_the_margin() {
        let base = FnField::new(2, |_: &PointN, _| Ok(p2(-1.0, 0.5)));
        let shaped = shaped_field(vec![halfspace_x(50.0, 2.0, 25.0, 0.02)], base);
        let mut prev: Option<DVector<f64>> = None;
        let h = 1e-5;
        for i in 0..=40_000 {
            let x = -0.1 + i as f64 * h;
            let v = shaped.velocity(&p2(x, 0.0), 0.0).unwrap();
            if let Some(p) = prev {
                // Bounded difference quotient: the field is Lipschitz here.
                assert!((&v - &p).norm() / h < 500.0, "jump at x = {x}");
            }
            prev = Some(v);
        }
    }
}
