//! Admissible coordinate changes and push-forwards.
//!
//! Admissible changes preserve the time form and the fibres:
//! `t̄ = t + c`, `x̄ⁱ = x̄ⁱ(t, x)`. Points, space-like vectors, absolute
//! velocities, frames and the mass metric all transform through the spatial
//! Jacobian `∂x̄/∂x` and the time column `∂x̄/∂t`; the metric transforms by
//! congruence with the inverse spatial Jacobian so the vertical scalar
//! product is invariant.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{FrameField, MassMetric, SpacelikeVector, SpacetimePoint, TimelikeVelocity};

type MapFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type JacFn = Arc<dyn Fn(f64, &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) + Send + Sync>;

const FD_STEP: f64 = 1e-6;

/// An admissible coordinate change `t̄ = t + c`, `x̄ = x̄(t, x)`.
#[derive(Clone)]
pub struct CoordinateChange {
    time_shift: f64,
    forward: MapFn,
    /// Inverse spatial map as a function of the *old* time: `x = inv(t, x̄)`.
    inverse: MapFn,
    jacobian: Option<JacFn>,
}

impl fmt::Debug for CoordinateChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "CoordinateChange {{ time_shift: {}, jacobian: {} }}",
            self.time_shift,
            if self.jacobian.is_some() {
                "analytic"
            } else {
                "finite-difference"
            }
        )
    }
}

impl CoordinateChange {
    pub fn new<F, I>(time_shift: f64, forward: F, inverse: I) -> Self
    where
        F: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        I: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        CoordinateChange {
            time_shift,
            forward: Arc::new(forward),
            inverse: Arc::new(inverse),
            jacobian: None,
        }
    }

    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(f64, &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn identity(n: usize) -> Self {
        CoordinateChange::new(0.0, |_, x| x.clone(), |_, x| x.clone()).with_jacobian(move |_, _| {
            (DVector::zeros(n), DMatrix::identity(n, n))
        })
    }

    /// Galilean boost `x̄ = x + v·t`.
    pub fn galilean(v: DVector<f64>) -> Self {
        let n = v.len();
        let v1 = v.clone();
        let v2 = v.clone();
        let v3 = v.clone();
        CoordinateChange::new(
            0.0,
            move |t, x| x + &v1 * t,
            move |t, x| x - &v2 * t,
        )
        .with_jacobian(move |_, _| (v3.clone(), DMatrix::identity(n, n)))
    }

    /// Constant linear change `x̄ = A·x` with optional time shift.
    pub fn linear(a: DMatrix<f64>, time_shift: f64) -> Result<Self> {
        let n = a.nrows();
        let inv = a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularJacobian {
                at: "linear coordinate change".into(),
            })?;
        let a1 = a.clone();
        Ok(CoordinateChange::new(
            time_shift,
            move |_, x| &a1 * x,
            move |_, x| &inv * x,
        )
        .with_jacobian(move |_, _| (DVector::zeros(n), a.clone())))
    }

    pub fn time_shift(&self) -> f64 {
        self.time_shift
    }

    fn forward_spatial(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.forward)(t, x)
    }

    fn inverse_spatial(&self, t_old: f64, x_new: &DVector<f64>) -> DVector<f64> {
        (self.inverse)(t_old, x_new)
    }

    /// `(∂x̄/∂t, ∂x̄/∂x)` at an old-chart point.
    pub fn jacobian_at(&self, t: f64, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        if let Some(j) = &self.jacobian {
            return j(t, x);
        }
        let n = x.len();
        let m = self.forward_spatial(t, x).len();
        let ht = FD_STEP * t.abs().max(1.0);
        let dt = (self.forward_spatial(t + ht, x) - self.forward_spatial(t - ht, x)) / (2.0 * ht);
        let mut dx = DMatrix::zeros(m, n);
        for i in 0..n {
            let h = FD_STEP * x[i].abs().max(1.0);
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let col = (self.forward_spatial(t, &xp) - self.forward_spatial(t, &xm)) / (2.0 * h);
            dx.set_column(i, &col);
        }
        (dt, dx)
    }

    fn spatial_jacobian_checked(&self, t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (_, j) = self.jacobian_at(t, x);
        if j.clone().lu().is_invertible() {
            Ok(j)
        } else {
            Err(Error::SingularJacobian {
                at: format!("(t={t}, x={x:?})"),
            })
        }
    }

    /// Round-trip and regularity check at sample points (tolerance 1e-10).
    pub fn validate(&self, samples: &[SpacetimePoint]) -> Result<()> {
        for pt in samples {
            let fwd = self.forward_spatial(pt.t, &pt.x);
            let back = self.inverse_spatial(pt.t, &fwd);
            let err = (&back - &pt.x).amax();
            if err > 1e-10 {
                return Err(Error::BadInverse {
                    at: pt.to_string(),
                    err,
                });
            }
            self.spatial_jacobian_checked(pt.t, &pt.x)?;
        }
        Ok(())
    }

    // -- push-forwards -------------------------------------------------------

    pub fn push_point(&self, pt: &SpacetimePoint) -> SpacetimePoint {
        SpacetimePoint::new(pt.t + self.time_shift, self.forward_spatial(pt.t, &pt.x))
    }

    /// Old-chart point underneath a new-chart point.
    pub fn pull_point(&self, pt_new: &SpacetimePoint) -> SpacetimePoint {
        let t_old = pt_new.t - self.time_shift;
        SpacetimePoint::new(t_old, self.inverse_spatial(t_old, &pt_new.x))
    }

    /// Space-like vectors push through the spatial Jacobian alone.
    pub fn push_spacelike(&self, v: &SpacelikeVector) -> Result<SpacelikeVector> {
        let j = self.spatial_jacobian_checked(v.base.t, &v.base.x)?;
        Ok(SpacelikeVector::new(
            self.push_point(&v.base),
            &j * &v.components,
        ))
    }

    /// Absolute velocities pick up the time column:
    /// `p̄ⁱ = ∂x̄ⁱ/∂t + (∂x̄ⁱ/∂xʲ) pʲ`.
    pub fn push_velocity(&self, p: &TimelikeVelocity) -> Result<TimelikeVelocity> {
        let (dt, j) = self.jacobian_at(p.base.t, &p.base.x);
        if !j.clone().lu().is_invertible() {
            return Err(Error::SingularJacobian {
                at: p.base.to_string(),
            });
        }
        Ok(TimelikeVelocity::new(
            self.push_point(&p.base),
            dt + &j * &p.spatial,
        ))
    }

    /// Frames transform like absolute velocities, field-wise.
    pub fn push_frame(&self, h: &FrameField) -> FrameField {
        let chg = self.clone();
        let h = h.clone();
        FrameField::from_fn(move |pt_new| {
            let old = chg.pull_point(pt_new);
            let (dt, j) = chg.jacobian_at(old.t, &old.x);
            Ok(dt + j * h.at(&old)?)
        })
    }

    /// The mass matrix transforms by congruence with the inverse spatial
    /// Jacobian, `ḡ = J⁻ᵀ g J⁻¹`, keeping the scalar product invariant.
    pub fn push_metric(&self, g: &MassMetric) -> MassMetric {
        let chg = self.clone();
        let g = g.clone();
        MassMetric::from_fn(move |pt_new| {
            let old = chg.pull_point(pt_new);
            let j = chg.spatial_jacobian_checked(old.t, &old.x)?;
            let j_inv = j.try_inverse().ok_or_else(|| Error::SingularJacobian {
                at: old.to_string(),
            })?;
            Ok(j_inv.transpose() * g.at(&old)? * j_inv)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::kinetic_energy;
    use approx::assert_relative_eq;

    fn pt(t: f64, x: &[f64]) -> SpacetimePoint {
        SpacetimePoint::new(t, DVector::from_row_slice(x))
    }

    #[test]
    fn identity_change_fixes_everything() {
        let chg = CoordinateChange::identity(2);
        let base = pt(1.0, &[2.0, 3.0]);
        let p = TimelikeVelocity::new(base.clone(), DVector::from_row_slice(&[4.0, 5.0]));
        let v = SpacelikeVector::new(base.clone(), DVector::from_row_slice(&[6.0, 7.0]));
        assert_eq!(chg.push_point(&base), base);
        assert_eq!(chg.push_velocity(&p).unwrap().spatial, p.spatial);
        assert_eq!(chg.push_spacelike(&v).unwrap().components, v.components);
    }

    #[test]
    fn galilean_boost_shifts_velocities_and_frames() {
        let v_boost = 2.5;
        let chg = CoordinateChange::galilean(DVector::from_row_slice(&[v_boost]));
        let base = pt(3.0, &[1.0]);
        let u = 0.75;
        let p = TimelikeVelocity::new(base.clone(), DVector::from_row_slice(&[u]));
        let pushed = chg.push_velocity(&p).unwrap();
        assert_relative_eq!(pushed.spatial[0], u + v_boost, epsilon = 1e-12);
        assert_relative_eq!(pushed.base.x[0], 1.0 + v_boost * 3.0, epsilon = 1e-12);

        let w = -0.3;
        let h = FrameField::constant(DVector::from_row_slice(&[w]));
        let pushed_h = chg.push_frame(&h);
        let h_val = pushed_h.at(&pushed.base).unwrap();
        assert_relative_eq!(h_val[0], w + v_boost, epsilon = 1e-9);

        // relative velocity is boost-invariant
        let rel_old = h.relativize(&p).unwrap();
        let rel_new = pushed_h.relativize(&pushed).unwrap();
        assert_relative_eq!(rel_new.components[0], rel_old.components[0], epsilon = 1e-9);
    }

    #[test]
    fn metric_inner_is_invariant_under_linear_changes() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 1.5]);
        let chg = CoordinateChange::linear(a, 1.0).unwrap();
        let g = MassMetric::diagonal(&[2.0, 5.0]);
        let base = pt(0.5, &[1.0, -1.0]);
        let v = SpacelikeVector::new(base.clone(), DVector::from_row_slice(&[0.7, 1.1]));
        let before = g.inner(&v, &v).unwrap();
        let pushed_g = chg.push_metric(&g);
        let pushed_v = chg.push_spacelike(&v).unwrap();
        let after = pushed_g.inner(&pushed_v, &pushed_v).unwrap();
        assert_relative_eq!(before, after, epsilon = 1e-10);
    }

    #[test]
    fn kinetic_energy_is_invariant_under_push_forward() {
        let chg = CoordinateChange::galilean(DVector::from_row_slice(&[1.0, -2.0]));
        let g = MassMetric::diagonal(&[3.0, 0.5]);
        let base = pt(0.25, &[0.1, 0.2]);
        let p = TimelikeVelocity::new(base.clone(), DVector::from_row_slice(&[1.5, -0.5]));
        let h = FrameField::constant(DVector::from_row_slice(&[0.3, 0.4]));
        let before = kinetic_energy(&p, &h, &g).unwrap();
        let after = kinetic_energy(
            &chg.push_velocity(&p).unwrap(),
            &chg.push_frame(&h),
            &chg.push_metric(&g),
        )
        .unwrap();
        assert_relative_eq!(before, after, epsilon = 1e-9);
    }

    #[test]
    fn validate_flags_a_wrong_inverse() {
        let chg = CoordinateChange::new(0.0, |_, x| x * 2.0, |_, x| x.clone());
        let samples = [pt(0.0, &[1.0])];
        assert!(matches!(
            chg.validate(&samples),
            Err(Error::BadInverse { .. })
        ));
    }

    #[test]
    fn validate_flags_singular_jacobian() {
        let chg = CoordinateChange::new(
            0.0,
            |_, x| DVector::from_row_slice(&[x[0] + x[1], x[0] + x[1]]),
            |_, x| x.clone(),
        );
        let samples = [pt(0.0, &[1.0, -1.0])];
        assert!(chg.validate(&samples).is_err());
    }

    #[test]
    fn finite_difference_jacobian_matches_analytic() {
        // nonlinear admissible change on a 2-d chart
        let fwd = |t: f64, x: &DVector<f64>| {
            DVector::from_row_slice(&[x[0] * (1.0 + 0.1 * t) + 0.3 * x[1], x[1] + 0.2 * x[0] * x[0]])
        };
        let chg_fd = CoordinateChange::new(0.0, fwd, |_, x| x.clone());
        let (dt, j) = chg_fd.jacobian_at(0.7, &DVector::from_row_slice(&[1.2, -0.4]));
        assert_relative_eq!(dt[0], 0.12, epsilon = 1e-8);
        assert_relative_eq!(j[(0, 0)], 1.07, epsilon = 1e-8);
        assert_relative_eq!(j[(0, 1)], 0.3, epsilon = 1e-8);
        assert_relative_eq!(j[(1, 0)], 0.48, epsilon = 1e-8);
        assert_relative_eq!(j[(1, 1)], 1.0, epsilon = 1e-8);
    }
}
