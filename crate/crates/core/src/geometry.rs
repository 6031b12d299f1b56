//! Space-time points, time-like and space-like vectors, the vertical mass
//! metric, frames of reference, and force sections.
//!
//! A chart carries admissible coordinates `(t, x¹, …, xⁿ)`. Absolute
//! velocities (time-like vectors) have unit time component, which is never
//! stored; impulses and relative velocities (space-like vectors) have zero
//! time component. The mass metric acts on space-like vectors only.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fields::{MatrixField, VectorField, VelocityField};

/// A point of the configuration space-time in chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SpacetimePoint {
    pub t: f64,
    pub x: DVector<f64>,
}

impl SpacetimePoint {
    pub fn new(t: f64, x: DVector<f64>) -> Self {
        SpacetimePoint { t, x }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().all(|c| c.is_finite())
    }
}

impl fmt::Display for SpacetimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(t={}", self.t)?;
        for c in self.x.iter() {
            write!(f, ", {c}")?;
        }
        write!(f, ")")
    }
}

fn check_same_base(a: &SpacetimePoint, b: &SpacetimePoint) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::MismatchedBase {
            left: a.to_string(),
            right: b.to_string(),
        })
    }
}

/// Absolute velocity: time component identically 1, spatial components `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimelikeVelocity {
    pub base: SpacetimePoint,
    pub spatial: DVector<f64>,
}

impl TimelikeVelocity {
    pub fn new(base: SpacetimePoint, spatial: DVector<f64>) -> Self {
        assert_eq!(base.dim(), spatial.len(), "velocity dimension mismatch");
        TimelikeVelocity { base, spatial }
    }

    /// Fibred sum with a space-like vector: spatial components add, the unit
    /// time component is untouched.
    pub fn shift(&self, v: &SpacelikeVector) -> Result<TimelikeVelocity> {
        check_same_base(&self.base, &v.base)?;
        Ok(TimelikeVelocity {
            base: self.base.clone(),
            spatial: &self.spatial + &v.components,
        })
    }

    /// Difference of two absolute velocities at the same point; space-like.
    pub fn jump_from(&self, earlier: &TimelikeVelocity) -> Result<SpacelikeVector> {
        check_same_base(&self.base, &earlier.base)?;
        Ok(SpacelikeVector {
            base: self.base.clone(),
            components: &self.spatial - &earlier.spatial,
        })
    }
}

/// Space-like vector: zero time component. Impulses and relative velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct SpacelikeVector {
    pub base: SpacetimePoint,
    pub components: DVector<f64>,
}

impl SpacelikeVector {
    pub fn new(base: SpacetimePoint, components: DVector<f64>) -> Self {
        assert_eq!(base.dim(), components.len(), "vector dimension mismatch");
        SpacelikeVector { base, components }
    }

    pub fn zero(base: SpacetimePoint) -> Self {
        let n = base.dim();
        SpacelikeVector {
            base,
            components: DVector::zeros(n),
        }
    }

    pub fn plus(&self, other: &SpacelikeVector) -> Result<SpacelikeVector> {
        check_same_base(&self.base, &other.base)?;
        Ok(SpacelikeVector {
            base: self.base.clone(),
            components: &self.components + &other.components,
        })
    }

    pub fn minus(&self, other: &SpacelikeVector) -> Result<SpacelikeVector> {
        check_same_base(&self.base, &other.base)?;
        Ok(SpacelikeVector {
            base: self.base.clone(),
            components: &self.components - &other.components,
        })
    }

    pub fn scaled(&self, factor: f64) -> SpacelikeVector {
        SpacelikeVector {
            base: self.base.clone(),
            components: &self.components * factor,
        }
    }
}

/// The vertical metric: a symmetric positive-definite matrix field `g(t, x)`
/// acting on space-like vectors. Encodes the inertia of the system.
#[derive(Debug, Clone)]
pub struct MassMetric {
    field: MatrixField,
}

impl MassMetric {
    pub fn new(field: MatrixField) -> Self {
        MassMetric { field }
    }

    pub fn constant(g: DMatrix<f64>) -> Self {
        MassMetric {
            field: MatrixField::constant(g),
        }
    }

    pub fn diagonal(entries: &[f64]) -> Self {
        MassMetric::constant(DMatrix::from_diagonal(&DVector::from_row_slice(entries)))
    }

    pub fn identity(n: usize) -> Self {
        MassMetric::constant(DMatrix::identity(n, n))
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&SpacetimePoint) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        MassMetric {
            field: MatrixField::from_fn(f),
        }
    }

    /// Mass matrix at a point.
    pub fn at(&self, pt: &SpacetimePoint) -> Result<DMatrix<f64>> {
        self.field.value(pt)
    }

    /// Cholesky factor at a point; fails when the matrix is not SPD.
    pub fn cholesky_at(&self, pt: &SpacetimePoint) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        let g = self.at(pt)?;
        Cholesky::new(g).ok_or_else(|| Error::NotPositiveDefinite { at: pt.to_string() })
    }

    /// Symmetry + positive definiteness check, used by scenario validation.
    pub fn check_spd(&self, pt: &SpacetimePoint, tol: f64) -> Result<()> {
        let g = self.at(pt)?;
        let asym = (&g - g.transpose()).amax();
        if asym > tol {
            return Err(Error::NotPositiveDefinite { at: pt.to_string() });
        }
        self.cholesky_at(pt).map(|_| ())
    }

    /// Inverse mass matrix at a point (raises covectors to space-like vectors).
    pub fn inverse_at(&self, pt: &SpacetimePoint) -> Result<DMatrix<f64>> {
        Ok(self.cholesky_at(pt)?.inverse())
    }

    /// The vertical scalar product `Φ(V₁, V₂) = g_ij V₁ⁱ V₂ʲ`.
    pub fn inner(&self, v1: &SpacelikeVector, v2: &SpacelikeVector) -> Result<f64> {
        check_same_base(&v1.base, &v2.base)?;
        let g = self.at(&v1.base)?;
        let value = (v1.components.transpose() * g * &v2.components)[(0, 0)];
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite {
                context: format!("metric inner product at {}", v1.base),
            })
        }
    }

    /// `‖V‖_Φ = √Φ(V, V)`.
    pub fn norm(&self, v: &SpacelikeVector) -> Result<f64> {
        Ok(self.inner(v, v)?.max(0.0).sqrt())
    }
}

/// A frame of reference: the time-like vector field
/// `h = ∂/∂t + Hⁱ(t, x) ∂/∂xⁱ`, stored through its spatial components `H`.
#[derive(Debug, Clone)]
pub struct FrameField {
    field: VectorField,
}

impl FrameField {
    pub fn new(field: VectorField) -> Self {
        FrameField { field }
    }

    pub fn constant(components: DVector<f64>) -> Self {
        FrameField {
            field: VectorField::constant(components),
        }
    }

    /// The frame carried by the chart itself (`h = ∂/∂t`).
    pub fn chart_rest(n: usize) -> Self {
        FrameField::constant(DVector::zeros(n))
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&SpacetimePoint) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        FrameField {
            field: VectorField::from_fn(f),
        }
    }

    pub fn at(&self, pt: &SpacetimePoint) -> Result<DVector<f64>> {
        self.field.value(pt)
    }

    /// The frame evaluated as an absolute velocity at `pt`.
    pub fn velocity_at(&self, pt: &SpacetimePoint) -> Result<TimelikeVelocity> {
        Ok(TimelikeVelocity::new(pt.clone(), self.at(pt)?))
    }

    /// Relativization `Δ_h(p) = p − h(π(p))`: the velocity of `p` relative to
    /// this frame, a space-like vector at the same base point.
    pub fn relativize(&self, p: &TimelikeVelocity) -> Result<SpacelikeVector> {
        let h = self.at(&p.base)?;
        Ok(SpacelikeVector {
            base: p.base.clone(),
            components: &p.spatial - h,
        })
    }
}

/// Kinetic energy of `p` with respect to the frame `h`:
/// `K_h(p) = ½ Φ(Δ_h p, Δ_h p)`.
pub fn kinetic_energy(p: &TimelikeVelocity, h: &FrameField, metric: &MassMetric) -> Result<f64> {
    let rel = h.relativize(p)?;
    Ok(0.5 * metric.inner(&rel, &rel)?)
}

/// Assignment of the active forces as acceleration components
/// `Zⁱ(t, xʲ, ẋʲ)` (a section of the vertical bundle over the velocity
/// space, read through the natural identification with space-like vectors).
#[derive(Debug, Clone)]
pub struct ForceSection {
    field: VelocityField,
}

impl ForceSection {
    pub fn new(field: VelocityField) -> Self {
        ForceSection { field }
    }

    pub fn zero(n: usize) -> Self {
        ForceSection {
            field: VelocityField::zero(n),
        }
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&SpacetimePoint, &DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        ForceSection {
            field: VelocityField::from_fn(f),
        }
    }

    /// Acceleration components at a state.
    pub fn acceleration(&self, pt: &SpacetimePoint, xdot: &DVector<f64>) -> Result<DVector<f64>> {
        self.field.value(pt, xdot)
    }

    /// Force value along an absolute velocity, as a space-like vector at its
    /// base point.
    pub fn value_along(&self, p: &TimelikeVelocity) -> Result<SpacelikeVector> {
        let z = self.acceleration(&p.base, &p.spatial)?;
        Ok(SpacelikeVector::new(p.base.clone(), z))
    }
}
