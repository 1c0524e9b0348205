//! Comparison safety filters: hard projection and a closed-form barrier filter.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::VelocityField;
use crate::geometry::{min_distance_over, DistanceSample, FieldHandle, PointN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub margin: f64,
    pub push_out: bool,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            margin: 0.0,
            push_out: true,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return invalid("projection margin must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbfConfig {
    pub gamma: f64,
    pub max_passes: usize,
}

impl Default for CbfConfig {
    fn default() -> Self {
        Self {
            gamma: 5.0,
            max_passes: 5,
        }
    }
}

impl CbfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return invalid("barrier gain must be positive");
        }
        if self.max_passes == 0 {
            return invalid("barrier filter needs at least one pass");
        }
        Ok(())
    }
}

fn check_dims(fields: &[FieldHandle], a: &PointN, v: &DVector<f64>) -> Result<()> {
    if a.len() != v.len() {
        return invalid("state and velocity dimensions differ");
    }
    if fields.iter().any(|f| f.dim() != a.len()) {
        return invalid("constraint field dimension differs from the state");
    }
    Ok(())
}

/// Removes the inward velocity component for each constraint within
/// `margin`, in constraint order; optionally pushes a penetrating state back
/// onto the surface of the most-penetrated constraint.
pub fn hard_project(
    fields: &[FieldHandle],
    cfg: &ProjectionConfig,
    a: &PointN,
    v: &DVector<f64>,
) -> Result<(PointN, DVector<f64>)> {
    check_dims(fields, a, v)?;
    let mut v = v.clone();
    for f in fields {
        let s = f.eval(a)?;
        if s.value > cfg.margin {
            continue;
        }
        let Some(n) = s.normal() else {
            if s.value < 0.0 {
                return Err(Error::ProjectionFailure(
                    "penetrating state has no defined normal".into(),
                ));
            }
            continue;
        };
        let inward = n.dot(&v);
        if inward < 0.0 {
            v -= &n * inward;
        }
    }
    let a = if cfg.push_out {
        push_out(fields, a)?
    } else {
        a.clone()
    };
    Ok((a, v))
}

fn push_out(fields: &[FieldHandle], a: &PointN) -> Result<PointN> {
    if fields.is_empty() {
        return Ok(a.clone());
    }
    let (_, s) = min_distance_over(fields, a)?;
    if s.value >= 0.0 {
        return Ok(a.clone());
    }
    let n = s.normal().ok_or_else(|| {
        Error::ProjectionFailure("penetrating state has no defined normal".into())
    })?;
    Ok(a - n * s.value)
}

/// Sequential single-constraint barrier corrections enforcing
/// `grad d . adot + gamma d >= 0`, nearest constraint first.
pub fn cbf_filter(
    fields: &[FieldHandle],
    cfg: &CbfConfig,
    a: &PointN,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dims(fields, a, v)?;
    let mut samples: Vec<DistanceSample> = fields
        .iter()
        .map(|f| f.eval(a))
        .collect::<Result<_>>()?;
    samples.sort_by(|x, y| x.value.total_cmp(&y.value));

    let mut adot = v.clone();
    for _ in 0..cfg.max_passes {
        let mut active = false;
        for s in &samples {
            let h = s.gradient.dot(&adot) + cfg.gamma * s.value;
            if h >= 0.0 {
                continue;
            }
            if !s.gradient_norm_ok {
                return Err(Error::FilterFailure(
                    "active constraint has no defined gradient".into(),
                ));
            }
            let lambda = -h;
            adot += &s.gradient * (lambda / s.gradient.norm_squared());
            active = true;
        }
        if !active {
            break;
        }
    }
    Ok(adot)
}

/// The filter applied by a [`FilteredField`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SafetyFilter {
    Projection(ProjectionConfig),
    Cbf(CbfConfig),
}

impl SafetyFilter {
    pub fn validate(&self) -> Result<()> {
        match self {
            SafetyFilter::Projection(c) => c.validate(),
            SafetyFilter::Cbf(c) => c.validate(),
        }
    }
}

/// A base field whose velocities (and, for projection with push-out, states)
/// pass through a safety filter.
#[derive(Clone, Debug)]
pub struct FilteredField<F> {
    pub filter: SafetyFilter,
    pub fields: Vec<FieldHandle>,
    pub base: F,
}

pub fn filtered_field<F: VelocityField>(
    filter: SafetyFilter,
    fields: Vec<FieldHandle>,
    base: F,
) -> Result<FilteredField<F>> {
    filter.validate()?;
    Ok(FilteredField {
        filter,
        fields,
        base,
    })
}

impl<F: VelocityField> VelocityField for FilteredField<F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn velocity(&self, a: &PointN, t: f64) -> Result<DVector<f64>> {
        let v = self.base.velocity(a, t)?;
        if self.fields.is_empty() {
            return Ok(v);
        }
        match &self.filter {
            SafetyFilter::Projection(cfg) => {
                let no_push = ProjectionConfig {
                    push_out: false,
                    ..cfg.clone()
                };
                Ok(hard_project(&self.fields, &no_push, a, &v)?.1)
            }
            SafetyFilter::Cbf(cfg) => cbf_filter(&self.fields, cfg, a, &v),
        }
    }

    fn correct_state(&self, a: &mut PointN) -> Result<()> {
        self.base.correct_state(a)?;
        if let SafetyFilter::Projection(cfg) = &self.filter {
            if cfg.push_out {
                *a = push_out(&self.fields, a)?;
            }
        }
        Ok(())
    }
}
