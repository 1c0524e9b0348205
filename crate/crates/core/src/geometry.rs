//! Analytic signed distance fields.
//!
//! Distances are negative inside the restricted region and gradients point
//! outward, away from it. Every built-in shape is exact, so away from the
//! medial axis the gradient has unit norm.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A point in workspace, action or configuration space.
pub type PointN = DVector<f64>;

/// Gradients with norm below this are treated as undefined.
pub const DEGENERATE_GRADIENT: f64 = 1e-6;

/// One distance query result.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceSample {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub gradient_norm_ok: bool,
}

impl DistanceSample {
    /// Builds a sample from a raw gradient, zeroing it (and clearing the flag)
    /// when its norm is below [`DEGENERATE_GRADIENT`].
    pub fn new(value: f64, gradient: DVector<f64>) -> Self {
        if gradient.norm() < DEGENERATE_GRADIENT {
            Self::degenerate(value, gradient.len())
        } else {
            Self {
                value,
                gradient,
                gradient_norm_ok: true,
            }
        }
    }

    /// Like [`DistanceSample::new`] but rescales the gradient to unit norm.
    pub fn normalized(value: f64, gradient: DVector<f64>) -> Self {
        let norm = gradient.norm();
        if norm < DEGENERATE_GRADIENT || !norm.is_finite() {
            Self::degenerate(value, gradient.len())
        } else {
            Self {
                value,
                gradient: gradient / norm,
                gradient_norm_ok: true,
            }
        }
    }

    pub fn degenerate(value: f64, dim: usize) -> Self {
        Self {
            value,
            gradient: DVector::zeros(dim),
            gradient_norm_ok: false,
        }
    }

    /// Unit outward normal, when defined.
    pub fn normal(&self) -> Option<DVector<f64>> {
        if self.gradient_norm_ok {
            Some(self.gradient.normalize())
        } else {
            None
        }
    }
}

/// Anything that can be queried for a distance and gradient.
pub trait DistanceField: Send + Sync + Debug {
    fn dim(&self) -> usize;

    fn eval(&self, p: &PointN) -> Result<DistanceSample>;

    /// False for fields that only know the distance magnitude.
    fn is_signed(&self) -> bool {
        true
    }
}

pub type FieldHandle = Arc<dyn DistanceField>;

/// Built-in analytic shapes. The config representation is a tagged record,
/// e.g. `{"type":"circle","center":[0.0,0.0],"radius":1.0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Circle {
        center: [f64; 2],
        radius: f64,
    },
    AxisBox {
        min_corner: [f64; 2],
        max_corner: [f64; 2],
    },
    /// Restricted region is `normal . p < offset`.
    Halfspace {
        normal: Vec<f64>,
        offset: f64,
    },
    SegmentCapsule {
        p0: [f64; 2],
        p1: [f64; 2],
        radius: f64,
    },
    Union {
        members: Vec<Shape>,
    },
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

impl Shape {
    pub fn circle(center: [f64; 2], radius: f64) -> Result<Self> {
        let s = Shape::Circle { center, radius };
        s.validate()?;
        Ok(s)
    }

    pub fn axis_box(min_corner: [f64; 2], max_corner: [f64; 2]) -> Result<Self> {
        let s = Shape::AxisBox {
            min_corner,
            max_corner,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn halfspace(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let s = Shape::Halfspace { normal, offset };
        s.validate()?;
        Ok(s)
    }

    pub fn capsule(p0: [f64; 2], p1: [f64; 2], radius: f64) -> Result<Self> {
        let s = Shape::SegmentCapsule { p0, p1, radius };
        s.validate()?;
        Ok(s)
    }

    pub fn union(members: Vec<Shape>) -> Result<Self> {
        let s = Shape::Union { members };
        s.validate()?;
        Ok(s)
    }

    /// Checks the geometric invariants; needed after deserialization.
    pub fn validate(&self) -> Result<()> {
        match self {
            Shape::Circle { center, radius } => {
                if !all_finite(center) || !radius.is_finite() || *radius <= 0.0 {
                    return invalid("circle needs finite center and radius > 0");
                }
            }
            Shape::AxisBox {
                min_corner,
                max_corner,
            } => {
                if !all_finite(min_corner) || !all_finite(max_corner) {
                    return invalid("box corners must be finite");
                }
                if min_corner.iter().zip(max_corner).any(|(lo, hi)| lo >= hi) {
                    return invalid("box needs min_corner < max_corner componentwise");
                }
            }
            Shape::Halfspace { normal, offset } => {
                if normal.is_empty() || !all_finite(normal) || !offset.is_finite() {
                    return invalid("halfspace needs a finite, non-empty normal");
                }
                let norm = normal.iter().map(|x| x * x).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-9 {
                    return invalid(format!("halfspace normal must be unit length, got {norm}"));
                }
            }
            Shape::SegmentCapsule { p0, p1, radius } => {
                if !all_finite(p0) || !all_finite(p1) || !radius.is_finite() || *radius <= 0.0 {
                    return invalid("capsule needs finite endpoints and radius > 0");
                }
            }
            Shape::Union { members } => {
                let Some(first) = members.first() else {
                    return invalid("union needs at least one member");
                };
                for m in members {
                    m.validate()?;
                    if m.dim() != first.dim() {
                        return invalid("union members must share a dimension");
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Shape::Halfspace { normal, .. } => normal.len(),
            Shape::Union { members } => members.first().map_or(2, Shape::dim),
            _ => 2,
        }
    }

    /// Axis-aligned bounding box `(min, max)`; `None` for unbounded shapes.
    pub fn bounding_box(&self) -> Option<([f64; 2], [f64; 2])> {
        match self {
            Shape::Circle { center, radius } => Some((
                [center[0] - radius, center[1] - radius],
                [center[0] + radius, center[1] + radius],
            )),
            Shape::AxisBox {
                min_corner,
                max_corner,
            } => Some((*min_corner, *max_corner)),
            Shape::Halfspace { .. } => None,
            Shape::SegmentCapsule { p0, p1, radius } => Some((
                [p0[0].min(p1[0]) - radius, p0[1].min(p1[1]) - radius],
                [p0[0].max(p1[0]) + radius, p0[1].max(p1[1]) + radius],
            )),
            Shape::Union { members } => {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for m in members {
                    let (mlo, mhi) = m.bounding_box()?;
                    for k in 0..2 {
                        lo[k] = lo[k].min(mlo[k]);
                        hi[k] = hi[k].max(mhi[k]);
                    }
                }
                Some((lo, hi))
            }
        }
    }
}

/// Axis-aligned box of any dimension, used for sampling regions and plot extents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Bounds {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn unit_square() -> Self {
        Self {
            min: vec![0.0, 0.0],
            max: vec![1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.is_empty() || self.min.len() != self.max.len() {
            return invalid("bounds need matching, non-empty corners");
        }
        if !all_finite(&self.min) || !all_finite(&self.max) {
            return invalid("bounds must be finite");
        }
        if self.min.iter().zip(&self.max).any(|(lo, hi)| lo >= hi) {
            return invalid("degenerate bounds: need min < max on every axis");
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn diagonal(&self) -> f64 {
        self.min
            .iter()
            .zip(&self.max)
            .map(|(lo, hi)| (hi - lo) * (hi - lo))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains_box(&self, lo: &[f64], hi: &[f64]) -> bool {
        (0..self.dim()).all(|k| self.min[k] <= lo[k] && hi[k] <= self.max[k])
    }
}

/// Exact signed distance and outward gradient of `shape` at `p`.
pub fn eval_sdf(shape: &Shape, p: &PointN) -> Result<DistanceSample> {
    if p.len() != shape.dim() {
        return invalid(format!(
            "point has dimension {}, shape expects {}",
            p.len(),
            shape.dim()
        ));
    }
    if !p.iter().all(|x| x.is_finite()) {
        return invalid("query point has non-finite coordinates");
    }
    Ok(eval_unchecked(shape, p))
}

fn radial(value: f64, offset: [f64; 2], dist: f64) -> DistanceSample {
    if dist < DEGENERATE_GRADIENT {
        DistanceSample::degenerate(value, 2)
    } else {
        DistanceSample::new(
            value,
            DVector::from_vec(vec![offset[0] / dist, offset[1] / dist]),
        )
    }
}

fn eval_unchecked(shape: &Shape, p: &PointN) -> DistanceSample {
    match shape {
        Shape::Circle { center, radius } => {
            let off = [p[0] - center[0], p[1] - center[1]];
            let dist = off[0].hypot(off[1]);
            radial(dist - radius, off, dist)
        }
        Shape::AxisBox {
            min_corner,
            max_corner,
        } => eval_box(min_corner, max_corner, p),
        Shape::Halfspace { normal, offset } => {
            let n = DVector::from_column_slice(normal);
            DistanceSample::new(n.dot(p) - offset, n)
        }
        Shape::SegmentCapsule { p0, p1, radius } => {
            let seg = [p1[0] - p0[0], p1[1] - p0[1]];
            let len2 = seg[0] * seg[0] + seg[1] * seg[1];
            let rel = [p[0] - p0[0], p[1] - p0[1]];
            let s = if len2 > 0.0 {
                ((rel[0] * seg[0] + rel[1] * seg[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let off = [rel[0] - s * seg[0], rel[1] - s * seg[1]];
            let dist = off[0].hypot(off[1]);
            radial(dist - radius, off, dist)
        }
        Shape::Union { members } => {
            let mut best: Option<DistanceSample> = None;
            let mut tied = false;
            for m in members {
                let s = eval_unchecked(m, p);
                match &best {
                    None => best = Some(s),
                    Some(b) if s.value < b.value => {
                        best = Some(s);
                        tied = false;
                    }
                    Some(b) if s.value == b.value && s.gradient != b.gradient => tied = true,
                    _ => {}
                }
            }
            let best = best.expect("validated union is non-empty");
            if tied {
                DistanceSample::degenerate(best.value, p.len())
            } else {
                best
            }
        }
    }
}

fn eval_box(lo: &[f64; 2], hi: &[f64; 2], p: &PointN) -> DistanceSample {
    let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    let half = [0.5 * (hi[0] - lo[0]), 0.5 * (hi[1] - lo[1])];
    let rel = [p[0] - center[0], p[1] - center[1]];
    let q = [rel[0].abs() - half[0], rel[1].abs() - half[1]];

    if q[0] > 0.0 || q[1] > 0.0 {
        let pos = [q[0].max(0.0), q[1].max(0.0)];
        let dist = pos[0].hypot(pos[1]);
        let g = DVector::from_vec(vec![
            rel[0].signum() * pos[0] / dist,
            rel[1].signum() * pos[1] / dist,
        ]);
        return DistanceSample::new(dist, g);
    }

    // Inside or on the boundary: nearest face wins, lowest axis on ties.
    let axis = if q[1] > q[0] { 1 } else { 0 };
    if rel[axis] == 0.0 {
        return DistanceSample::degenerate(q[axis], 2);
    }
    let mut g = DVector::zeros(2);
    g[axis] = rel[axis].signum();
    DistanceSample::new(q[axis], g)
}

impl DistanceField for Shape {
    fn dim(&self) -> usize {
        Shape::dim(self)
    }

    fn eval(&self, p: &PointN) -> Result<DistanceSample> {
        eval_sdf(self, p)
    }
}

/// Index and sample of the field with the smallest signed distance at `p`.
/// Ties go to the lowest index.
pub fn min_distance_over(fields: &[FieldHandle], p: &PointN) -> Result<(usize, DistanceSample)> {
    let mut best: Option<(usize, DistanceSample)> = None;
    for (i, f) in fields.iter().enumerate() {
        let s = f.eval(p)?;
        if best.as_ref().is_none_or(|(_, b)| s.value < b.value) {
            best = Some((i, s));
        }
    }
    match best {
        Some(b) => Ok(b),
        None => invalid("min_distance_over needs at least one field"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(x: f64, y: f64) -> PointN {
        DVector::from_vec(vec![x, y])
    }

    fn test_shapes() -> Vec<Shape> {
        vec![
            Shape::circle([0.2, -0.1], 0.7).unwrap(),
            Shape::axis_box([-0.5, -0.3], [0.9, 0.6]).unwrap(),
            Shape::halfspace(vec![0.6, 0.8], 0.1).unwrap(),
            Shape::capsule([-0.6, 0.0], [0.5, 0.4], 0.25).unwrap(),
            Shape::union(vec![
                Shape::circle([-0.8, 0.0], 0.3).unwrap(),
                Shape::axis_box([0.2, 0.2], [0.7, 0.9]).unwrap(),
            ])
            .unwrap(),
        ]
    }

    #[test]
    fn circle_examples() {
        let c = Shape::circle([0.0, 0.0], 1.0).unwrap();
        let s = eval_sdf(&c, &pt(2.0, 0.0)).unwrap();
        assert_eq!(s.value, 1.0);
        assert_eq!(s.gradient, pt(1.0, 0.0));
        assert!(s.gradient_norm_ok);

        let s = eval_sdf(&c, &pt(0.0, 0.0)).unwrap();
        assert_eq!(s.value, -1.0);
        assert!(!s.gradient_norm_ok);
        assert_eq!(s.gradient, pt(0.0, 0.0));
    }

    #[test]
    fn union_nearer_member_dominates() {
        let u = Shape::union(vec![
            Shape::circle([0.0, 0.0], 1.0).unwrap(),
            Shape::circle([4.0, 0.0], 1.0).unwrap(),
        ])
        .unwrap();
        let s = eval_sdf(&u, &pt(1.5, 0.0)).unwrap();
        assert_eq!(s.value, 0.5);
        assert_eq!(s.gradient, pt(1.0, 0.0));

        // Equidistant from both members: gradient is ambiguous.
        let s = eval_sdf(&u, &pt(2.0, 0.0)).unwrap();
        assert_eq!(s.value, 1.0);
        assert!(!s.gradient_norm_ok);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let c = Shape::circle([0.0, 0.0], 1.0).unwrap();
        let p = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(eval_sdf(&c, &p), Err(crate::Error::InvalidInput(_))));
    }

    #[test]
    fn invalid_shapes_are_rejected() {
        assert!(Shape::circle([0.0, 0.0], 0.0).is_err());
        assert!(Shape::axis_box([0.0, 0.0], [1.0, 0.0]).is_err());
        assert!(Shape::halfspace(vec![1.0, 1.0], 0.0).is_err());
        assert!(Shape::union(vec![]).is_err());
        assert!(Shape::capsule([0.0, 0.0], [1.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn box_interior_picks_nearest_face_then_lowest_axis() {
        let b = Shape::axis_box([-1.0, -2.0], [1.0, 2.0]).unwrap();
        let s = eval_sdf(&b, &pt(0.5, 0.0)).unwrap();
        assert_abs_diff_eq!(s.value, -0.5, epsilon = 1e-15);
        assert_eq!(s.gradient, pt(1.0, 0.0));

        let sq = Shape::axis_box([-1.0, -1.0], [1.0, 1.0]).unwrap();
        let s = eval_sdf(&sq, &pt(0.5, 0.5)).unwrap();
        assert_eq!(s.gradient, pt(1.0, 0.0));
        // Center of a square: no defined face direction.
        assert!(!eval_sdf(&sq, &pt(0.0, 0.0)).unwrap().gradient_norm_ok);
    }

    #[test]
    fn halfspace_is_nd() {
        let h = Shape::halfspace(vec![0.0, 0.0, 1.0], -0.5).unwrap();
        let s = eval_sdf(&h, &DVector::from_vec(vec![3.0, 1.0, 0.0])).unwrap();
        assert_eq!(s.value, 0.5);
        assert_eq!(s.gradient[2], 1.0);
    }

    #[test]
    fn min_distance_over_examples() {
        let fields: Vec<FieldHandle> = vec![
            Arc::new(Shape::circle([0.0, 0.0], 0.5).unwrap()),
            Arc::new(Shape::circle([3.0, 0.0], 0.5).unwrap()),
        ];
        let (i, s) = min_distance_over(&fields, &pt(1.0, 0.0)).unwrap();
        assert_eq!(i, 0);
        assert_eq!(s.value, 0.5);
        let (i, _) = min_distance_over(&fields[1..], &pt(1.0, 0.0)).unwrap();
        assert_eq!(i, 0);
        // Tie goes to the lowest index.
        let (i, _) = min_distance_over(&fields, &pt(1.5, 0.0)).unwrap();
        assert_eq!(i, 0);
        assert!(min_distance_over(&[], &pt(0.0, 0.0)).is_err());
    }

    #[test]
    fn min_distance_over_matches_exhaustive_scan() {
        let shapes = [
            Shape::circle([0.0, 0.0], 0.3).unwrap(),
            Shape::axis_box([0.5, 0.5], [0.9, 1.2]).unwrap(),
            Shape::capsule([-1.0, 0.5], [-0.2, 1.0], 0.1).unwrap(),
        ];
        let fields: Vec<FieldHandle> = shapes.iter().cloned().map(|s| Arc::new(s) as _).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let p = pt(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let values: Vec<f64> = shapes.iter().map(|s| eval_sdf(s, &p).unwrap().value).collect();
            let mut want = 0;
            for (i, v) in values.iter().enumerate() {
                if *v < values[want] {
                    want = i;
                }
            }
            let (got, s) = min_distance_over(&fields, &p).unwrap();
            assert_eq!(got, want);
            assert_eq!(s.value, values[want]);
        }
    }

    #[test]
    fn unit_gradients_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for shape in test_shapes() {
            let mut checked = 0;
            while checked < 1000 {
                let p = pt(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
                let s = eval_sdf(&shape, &p).unwrap();
                if !s.gradient_norm_ok {
                    continue;
                }
                // Skip points within a stencil width of the medial axis,
                // where central differences straddle a kink.
                let mut fd = DVector::zeros(2);
                let mut smooth = true;
                for k in 0..2 {
                    let mut plus = p.clone();
                    let mut minus = p.clone();
                    plus[k] += h;
                    minus[k] -= h;
                    let sp = eval_sdf(&shape, &plus).unwrap();
                    let sm = eval_sdf(&shape, &minus).unwrap();
                    if (sp.gradient.clone() - &s.gradient).norm() > 1e-3
                        || (sm.gradient.clone() - &s.gradient).norm() > 1e-3
                    {
                        smooth = false;
                    }
                    fd[k] = (sp.value - sm.value) / (2.0 * h);
                }
                if !smooth {
                    continue;
                }
                assert_abs_diff_eq!(s.gradient.norm(), 1.0, epsilon = 1e-9);
                assert!(
                    (fd - &s.gradient).amax() <= 1e-4,
                    "{shape:?} at {p:?}"
                );
                checked += 1;
            }
        }
    }

    #[test]
    fn sign_matches_membership() {
        let c = Shape::circle([0.1, 0.2], 0.6).unwrap();
        let b = Shape::axis_box([-0.4, -0.7], [0.5, 0.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let p = pt(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let in_circle = (p[0] - 0.1).powi(2) + (p[1] - 0.2).powi(2) < 0.36;
            let in_box = p[0] > -0.4 && p[0] < 0.5 && p[1] > -0.7 && p[1] < 0.3;
            assert_eq!(eval_sdf(&c, &p).unwrap().value < 0.0, in_circle);
            assert_eq!(eval_sdf(&b, &p).unwrap().value < 0.0, in_box);
        }
    }

    #[test]
    fn union_is_pointwise_min() {
        let members = vec![
            Shape::circle([0.0, 0.0], 0.4).unwrap(),
            Shape::capsule([0.3, -0.5], [0.8, 0.5], 0.2).unwrap(),
            Shape::axis_box([-0.9, 0.3], [-0.2, 0.8]).unwrap(),
        ];
        let u = Shape::union(members.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let p = pt(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
            let want = members
                .iter()
                .map(|m| eval_sdf(m, &p).unwrap().value)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(eval_sdf(&u, &p).unwrap().value, want);
        }
    }

    #[test]
    fn shapes_roundtrip_through_config_json() {
        let json = r#"{"type":"circle","center":[0.0,0.0],"radius":1.0}"#;
        let s: Shape = serde_json::from_str(json).unwrap();
        assert_eq!(s, Shape::circle([0.0, 0.0], 1.0).unwrap());
        let u: Shape = serde_json::from_str(
            r#"{"type":"union","members":[{"type":"axis_box","min_corner":[0,0],"max_corner":[1,1]}]}"#,
        )
        .unwrap();
        u.validate().unwrap();
    }
}
