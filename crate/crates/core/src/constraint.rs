//! Positional and kinetic constraints.
//!
//! A positional constraint is a fibred subbundle given in cartesian form by
//! level sets `f_ρ(t, x) = 0`, optionally unilateral with per-row orientation
//! signs picking the exit side, and optionally anisotropic through a unit
//! tangent direction field. A kinetic constraint is a list of affine velocity
//! rows `a_ρ(t, x)·ẋ + b_ρ(t, x) {=, ≥} 0`, permanent or instantaneous (the
//! latter active only in contact with an owning positional constraint).

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::fields::{ScalarField, VectorField};
use crate::geometry::{FrameField, MassMetric, SpacetimePoint, TimelikeVelocity};
use crate::split::AffineRow;

/// Default tolerance for contact, tangency and classification margins.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Indices of constraint rows active at a point: positional level sets within
/// tolerance and kinetic rows currently binding.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActiveRowSet {
    pub positional: Vec<usize>,
    pub kinetic: Vec<usize>,
}

/// Positional constraint `f_ρ(t, x) = 0`, `ρ = 1..k`.
#[derive(Debug, Clone)]
pub struct PositionalConstraint {
    pub name: String,
    pub funcs: Vec<ScalarField>,
    /// Exit-side sign per row (`+1`: exit towards increasing `f`); required on
    /// unilateral rows before classification.
    pub orientations: Vec<Option<f64>>,
    pub unilateral: Vec<bool>,
    /// Unit tangent direction field marking anisotropy, if any.
    pub anisotropy: Option<VectorField>,
    /// Optional per-row override of the orthogonal reference vector.
    pub normal_overrides: Vec<Option<VectorField>>,
}

impl PositionalConstraint {
    pub fn new(name: impl Into<String>, funcs: Vec<ScalarField>) -> Self {
        let k = funcs.len();
        PositionalConstraint {
            name: name.into(),
            funcs,
            orientations: vec![None; k],
            unilateral: vec![false; k],
            anisotropy: None,
            normal_overrides: vec![None; k],
        }
    }

    /// Codimension-1 unilateral constraint with an orientation sign.
    pub fn oriented(name: impl Into<String>, f: ScalarField, sign: f64) -> Self {
        PositionalConstraint {
            name: name.into(),
            funcs: vec![f],
            orientations: vec![Some(sign)],
            unilateral: vec![true],
            anisotropy: None,
            normal_overrides: vec![None],
        }
    }

    pub fn codim(&self) -> usize {
        self.funcs.len()
    }

    /// Contact test: `|f_ρ| ≤ tol` per row. Returns whether every row is in
    /// contact plus the set of rows that are.
    pub fn contact(&self, pt: &SpacetimePoint, tol: f64) -> Result<(bool, ActiveRowSet)> {
        let mut active = ActiveRowSet::default();
        for (rho, f) in self.funcs.iter().enumerate() {
            if f.value(pt)?.abs() <= tol {
                active.positional.push(rho);
            }
        }
        Ok((active.positional.len() == self.funcs.len(), active))
    }

    /// Largest `|f_ρ|` at the point.
    pub fn max_violation(&self, pt: &SpacetimePoint) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for f in &self.funcs {
            worst = worst.max(f.value(pt)?.abs());
        }
        Ok(worst)
    }

    /// Tangency rows at a point: row `ρ` has covector `∇f_ρ` and offset
    /// `∂f_ρ/∂t`, so that the row residual of an absolute velocity `p` is the
    /// total derivative of `f_ρ` along `p`.
    pub fn tangency_rows(&self, pt: &SpacetimePoint) -> Result<Vec<AffineRow>> {
        self.funcs
            .iter()
            .map(|f| {
                let (dt, dx) = f.gradient(pt)?;
                Ok(AffineRow { a: dx, b: dt })
            })
            .collect()
    }

    /// Orthogonal reference vector for row `ρ`: the override if present, else
    /// the metric-raised gradient carrying the declared orientation sign.
    pub fn orthogonal_reference(
        &self,
        rho: usize,
        pt: &SpacetimePoint,
        metric: &MassMetric,
    ) -> Result<DVector<f64>> {
        if let Some(field) = &self.normal_overrides[rho] {
            return field.value(pt);
        }
        let sign = self.orientations[rho].ok_or(Error::MissingOrientation {
            constraint: self.name.clone(),
            row: rho,
        })?;
        let (_, dx) = self.funcs[rho].gradient(pt)?;
        let g_inv = metric.inverse_at(pt)?;
        Ok(g_inv * dx * sign)
    }

    /// Rest-frame test: `h(f_ρ) = ∂f_ρ/∂t + Hⁱ ∂f_ρ/∂xⁱ = 0` at every sample.
    pub fn is_rest_frame(
        &self,
        h: &FrameField,
        samples: &[SpacetimePoint],
        tol: f64,
    ) -> Result<bool> {
        for pt in samples {
            let hv = h.at(pt)?;
            for f in &self.funcs {
                let (dt, dx) = f.gradient(pt)?;
                if (dt + dx.dot(&hv)).abs() > tol {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// Relation of a kinetic row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowRelation {
    Equality,
    /// Unilateral row `a·ẋ + b ≥ 0`.
    NonNegative,
}

/// One affine velocity row `a(t, x)·ẋ + b(t, x) {=, ≥} 0`.
#[derive(Debug, Clone)]
pub struct KineticRow {
    pub a: VectorField,
    pub b: ScalarField,
    pub relation: RowRelation,
}

impl KineticRow {
    pub fn equality(a: VectorField, b: ScalarField) -> Self {
        KineticRow {
            a,
            b,
            relation: RowRelation::Equality,
        }
    }

    pub fn nonnegative(a: VectorField, b: ScalarField) -> Self {
        KineticRow {
            a,
            b,
            relation: RowRelation::NonNegative,
        }
    }

    pub fn at(&self, pt: &SpacetimePoint) -> Result<AffineRow> {
        Ok(AffineRow {
            a: self.a.value(pt)?,
            b: self.b.value(pt)?,
        })
    }
}

/// Whether a kinetic constraint acts always or only during contact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KineticKind {
    Permanent,
    /// Active only on the contact set of the named positional constraint.
    Instantaneous { owner: String },
}

/// Kinetic constraint: affine (in)equality rows on velocity components.
#[derive(Debug, Clone)]
pub struct KineticConstraint {
    pub name: String,
    pub rows: Vec<KineticRow>,
    pub kind: KineticKind,
    /// Name of the frame the rows were authored in (metadata; rolling-type
    /// conditions are frame-dependent statements).
    pub authoring_frame: Option<String>,
}

impl KineticConstraint {
    pub fn permanent(name: impl Into<String>, rows: Vec<KineticRow>) -> Self {
        KineticConstraint {
            name: name.into(),
            rows,
            kind: KineticKind::Permanent,
            authoring_frame: None,
        }
    }

    pub fn instantaneous(
        name: impl Into<String>,
        rows: Vec<KineticRow>,
        owner: impl Into<String>,
    ) -> Self {
        KineticConstraint {
            name: name.into(),
            rows,
            kind: KineticKind::Instantaneous {
                owner: owner.into(),
            },
            authoring_frame: None,
        }
    }

    pub fn equality_rows_at(&self, pt: &SpacetimePoint) -> Result<Vec<AffineRow>> {
        self.rows
            .iter()
            .filter(|r| r.relation == RowRelation::Equality)
            .map(|r| r.at(pt))
            .collect()
    }

    /// Signed margins `a_ρ·p + b_ρ` of every row.
    pub fn margins(&self, p: &TimelikeVelocity) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| {
                let row = r.at(&p.base)?;
                Ok(row.residual(&p.spatial))
            })
            .collect()
    }

    /// Membership test with per-row margins: equality rows within `±tol`,
    /// unilateral rows at least `−tol`.
    pub fn satisfies(&self, p: &TimelikeVelocity, tol: f64) -> Result<(bool, Vec<f64>)> {
        let margins = self.margins(p)?;
        let ok = self
            .rows
            .iter()
            .zip(&margins)
            .all(|(row, &m)| match row.relation {
                RowRelation::Equality => m.abs() <= tol,
                RowRelation::NonNegative => m >= -tol,
            });
        Ok((ok, margins))
    }

    /// Indices of unilateral rows with margin below `−tol`.
    pub fn violated_rows(&self, p: &TimelikeVelocity, tol: f64) -> Result<Vec<usize>> {
        let margins = self.margins(p)?;
        Ok(self
            .rows
            .iter()
            .enumerate()
            .zip(&margins)
            .filter(|((_, row), &m)| row.relation == RowRelation::NonNegative && m < -tol)
            .map(|((i, _), _)| i)
            .collect())
    }

    /// Rest-frame test against the equality rows: `a_ρ·H + b_ρ = 0` at every
    /// sample.
    pub fn is_rest_frame(
        &self,
        h: &FrameField,
        samples: &[SpacetimePoint],
        tol: f64,
    ) -> Result<bool> {
        for pt in samples {
            let hv = h.at(pt)?;
            for row in self.rows.iter().filter(|r| r.relation == RowRelation::Equality) {
                let r = row.at(pt)?;
                if r.residual(&hv).abs() > tol {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// Draw `count` frames whose fields are rest frames of `s` at `pt`: constant
/// frames solving `∂f/∂t + ∇f·H = 0` there, randomized over the tangent
/// directions of the constraint.
pub fn sample_rest_frames<R: Rng>(
    s: &PositionalConstraint,
    pt: &SpacetimePoint,
    count: usize,
    spread: f64,
    rng: &mut R,
) -> Result<Vec<FrameField>> {
    let rows = s.tangency_rows(pt)?;
    let n = pt.dim();
    let k = rows.len();
    let mut a = nalgebra::DMatrix::zeros(k, n);
    let mut b = DVector::zeros(k);
    for (i, row) in rows.iter().enumerate() {
        a.set_row(i, &row.a.transpose());
        b[i] = row.b;
    }
    let aat = &a * a.transpose();
    let aat_inv = aat
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient {
            context: format!("rest-frame sampling on `{}`", s.name),
        })?;
    // particular solution of ∇f·H = −∂f/∂t, then random tangent components
    let particular = a.transpose() * &aat_inv * (-&b);
    let mut frames = Vec::with_capacity(count);
    for _ in 0..count {
        let raw = DVector::from_fn(n, |_, _| rng.random_range(-spread..spread));
        let tangent = &raw - a.transpose() * &aat_inv * (&a * &raw);
        frames.push(FrameField::constant(&particular + tangent));
    }
    Ok(frames)
}
