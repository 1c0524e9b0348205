//! Time-dependent velocity fields consumed by the streaming integrator.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::Result;
use crate::geometry::PointN;

/// `v(a, t)` over flow time `t`. Raw policies, shaped fields and filtered
/// fields all implement this, so they share one integrator.
pub trait VelocityField: Send + Sync {
    fn dim(&self) -> usize;

    fn velocity(&self, a: &PointN, t: f64) -> Result<DVector<f64>>;

    /// Positional correction applied after every integration step.
    fn correct_state(&self, _a: &mut PointN) -> Result<()> {
        Ok(())
    }
}

impl<T: VelocityField + ?Sized> VelocityField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity(&self, a: &PointN, t: f64) -> Result<DVector<f64>> {
        (**self).velocity(a, t)
    }

    fn correct_state(&self, a: &mut PointN) -> Result<()> {
        (**self).correct_state(a)
    }
}

impl<T: VelocityField + ?Sized> VelocityField for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity(&self, a: &PointN, t: f64) -> Result<DVector<f64>> {
        (**self).velocity(a, t)
    }

    fn correct_state(&self, a: &mut PointN) -> Result<()> {
        (**self).correct_state(a)
    }
}

impl<T: VelocityField + ?Sized> VelocityField for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity(&self, a: &PointN, t: f64) -> Result<DVector<f64>> {
        (**self).velocity(a, t)
    }

    fn correct_state(&self, a: &mut PointN) -> Result<()> {
        (**self).correct_state(a)
    }
}

/// Adapts a closure into a [`VelocityField`].
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&PointN, f64) -> Result<DVector<f64>> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VelocityField for FnField<F>
where
    F: Fn(&PointN, f64) -> Result<DVector<f64>> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, a: &PointN, t: f64) -> Result<DVector<f64>> {
        (self.f)(a, t)
    }
}

/// A field that is the same constant vector everywhere.
pub fn constant_field(v: DVector<f64>) -> impl VelocityField {
    FnField::new(v.len(), move |_, _| Ok(v.clone()))
}
