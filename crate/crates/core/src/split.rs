//! Metric-orthogonal splittings of velocities against constraints, velocity
//! classification, and the rest-frame commutation residual.
//!
//! Every splitting reduces to one primitive: given affine rows with covectors
//! `a_σ` and offsets `b_σ`, raise the covectors through the inverse mass
//! matrix, solve the Gram system `Φ(m_σ, m_ρ) c_ρ = a_σ·p + b_σ`, and take
//! `vperp = Σ c_ρ m_ρ`. The remainder `p − vperp` satisfies every row, and
//! `vperp` is Φ-orthogonal to the row null space.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::constraint::{KineticConstraint, PositionalConstraint};
use crate::error::{Error, Result};
use crate::geometry::{FrameField, MassMetric, SpacelikeVector, SpacetimePoint, TimelikeVelocity};

/// Affine velocity row: residual of `ẋ` is `a·ẋ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRow {
    pub a: DVector<f64>,
    pub b: f64,
}

impl AffineRow {
    pub fn residual(&self, xdot: &DVector<f64>) -> f64 {
        self.a.dot(xdot) + self.b
    }
}

/// Result of an orthogonal splitting `p = parallel + vperp`.
#[derive(Debug, Clone)]
pub struct Splitting {
    /// Component satisfying every row (a time-like velocity).
    pub parallel: TimelikeVelocity,
    /// Metric-orthogonal correction in the span of the raised row covectors.
    pub vperp: SpacelikeVector,
    /// Coefficients of `vperp` over the raised covectors.
    pub coeffs: DVector<f64>,
    /// The raised row covectors `m_σ = g⁻¹ a_σ`.
    pub normals: Vec<SpacelikeVector>,
}

/// Admissibility class of a velocity against unilateral constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VelocityClass {
    /// Entering: an impact must be resolved.
    Left,
    /// Tangent to the constraint: no impact.
    Tangent,
    /// Exiting.
    Right,
}

impl std::fmt::Display for VelocityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VelocityClass::Left => "LEFT",
            VelocityClass::Tangent => "TANGENT",
            VelocityClass::Right => "RIGHT",
        })
    }
}

/// Classification with the signed margin of every oriented row.
#[derive(Debug, Clone)]
pub struct Classification {
    pub class: VelocityClass,
    pub margins: Vec<f64>,
}

/// Raised normal directions of the rows at a point, with a regularity check
/// on their Gram matrix.
pub fn raised_normals(
    rows: &[AffineRow],
    pt: &SpacetimePoint,
    metric: &MassMetric,
    context: &str,
) -> Result<Vec<SpacelikeVector>> {
    let g_inv = metric.inverse_at(pt)?;
    let normals: Vec<DVector<f64>> = rows.iter().map(|r| &g_inv * &r.a).collect();
    gram_cholesky(rows, &normals, context)?;
    Ok(normals
        .into_iter()
        .map(|n| SpacelikeVector::new(pt.clone(), n))
        .collect())
}

fn gram_cholesky(
    rows: &[AffineRow],
    normals: &[DVector<f64>],
    context: &str,
) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let k = rows.len();
    let mut gram = DMatrix::zeros(k, k);
    for s in 0..k {
        for r in 0..k {
            gram[(s, r)] = rows[s].a.dot(&normals[r]);
        }
    }
    let rank_deficient = || Error::RankDeficient {
        context: context.to_string(),
    };
    let chol = Cholesky::new(gram).ok_or_else(rank_deficient)?;
    // a zero pivot can round to a tiny positive one; reject those too
    let diag = chol.l_dirty().diagonal();
    let dmax = diag.amax();
    if diag.iter().any(|&d| d <= 1e-7 * dmax) {
        return Err(rank_deficient());
    }
    Ok(chol)
}

/// Orthogonal splitting of an absolute velocity against a set of affine rows
/// evaluated at its base point.
pub fn orthogonal_split(
    p: &TimelikeVelocity,
    rows: &[AffineRow],
    metric: &MassMetric,
    context: &str,
) -> Result<Splitting> {
    let base = p.base.clone();
    if rows.is_empty() {
        return Ok(Splitting {
            parallel: p.clone(),
            vperp: SpacelikeVector::zero(base),
            coeffs: DVector::zeros(0),
            normals: Vec::new(),
        });
    }
    let g_inv = metric.inverse_at(&base)?;
    let normals: Vec<DVector<f64>> = rows.iter().map(|r| &g_inv * &r.a).collect();
    let chol = gram_cholesky(rows, &normals, context)?;
    let residuals = DVector::from_iterator(
        rows.len(),
        rows.iter().map(|r| r.residual(&p.spatial)),
    );
    let coeffs = chol.solve(&residuals);
    let mut vperp = DVector::zeros(base.dim());
    for (c, m) in coeffs.iter().zip(&normals) {
        vperp += m * *c;
    }
    let parallel = TimelikeVelocity::new(base.clone(), &p.spatial - &vperp);
    Ok(Splitting {
        parallel,
        vperp: SpacelikeVector::new(base.clone(), vperp),
        coeffs,
        normals: normals
            .into_iter()
            .map(|n| SpacelikeVector::new(base.clone(), n))
            .collect(),
    })
}

/// Vertical splitting of a space-like vector against the row covectors alone
/// (no offsets): `V = tangent + perp` with `perp` in the span of the raised
/// covectors.
pub fn vertical_split(
    v: &SpacelikeVector,
    covectors: &[DVector<f64>],
    metric: &MassMetric,
    context: &str,
) -> Result<(SpacelikeVector, SpacelikeVector)> {
    let rows: Vec<AffineRow> = covectors
        .iter()
        .map(|a| AffineRow { a: a.clone(), b: 0.0 })
        .collect();
    let as_velocity = TimelikeVelocity::new(v.base.clone(), v.components.clone());
    let split = orthogonal_split(&as_velocity, &rows, metric, context)?;
    let tangent = SpacelikeVector::new(v.base.clone(), split.parallel.spatial);
    Ok((tangent, split.vperp))
}

/// Raised-gradient basis of the orthogonal space of a positional constraint.
pub fn normal_basis(
    pt: &SpacetimePoint,
    s: &PositionalConstraint,
    metric: &MassMetric,
) -> Result<Vec<SpacelikeVector>> {
    let rows = s.tangency_rows(pt)?;
    raised_normals(&rows, pt, metric, &format!("normal basis of `{}`", s.name))
}

/// Splitting of `p` against the tangency rows of a positional constraint.
pub fn split_positional(
    p: &TimelikeVelocity,
    s: &PositionalConstraint,
    metric: &MassMetric,
) -> Result<Splitting> {
    let rows = s.tangency_rows(&p.base)?;
    orthogonal_split(p, &rows, metric, &format!("splitting against `{}`", s.name))
}

/// Splitting of `p` against the equality rows of a kinetic constraint.
pub fn split_kinetic(
    p: &TimelikeVelocity,
    a: &KineticConstraint,
    metric: &MassMetric,
) -> Result<Splitting> {
    let rows = a.equality_rows_at(&p.base)?;
    orthogonal_split(p, &rows, metric, &format!("splitting against `{}`", a.name))
}

/// Joint splitting against the intersection of positional tangency rows and
/// kinetic equality rows (stacked Gram system).
pub fn split_joint(
    p: &TimelikeVelocity,
    positional: &[&PositionalConstraint],
    kinetic: &[&KineticConstraint],
    metric: &MassMetric,
) -> Result<Splitting> {
    let mut rows = Vec::new();
    let mut names = Vec::new();
    for s in positional {
        rows.extend(s.tangency_rows(&p.base)?);
        names.push(s.name.clone());
    }
    for a in kinetic {
        rows.extend(a.equality_rows_at(&p.base)?);
        names.push(a.name.clone());
    }
    orthogonal_split(
        p,
        &rows,
        metric,
        &format!("joint splitting against {}", names.join(" ∩ ")),
    )
}

/// Signed margin of `p` against one oriented row of `s`: the vertical scalar
/// product of the row's single-row orthogonal component with its orthogonal
/// reference vector.
fn row_margin(
    p: &TimelikeVelocity,
    s: &PositionalConstraint,
    rho: usize,
    metric: &MassMetric,
) -> Result<f64> {
    let rows = s.tangency_rows(&p.base)?;
    let row = rows[rho].clone();
    let split = orthogonal_split(
        p,
        std::slice::from_ref(&row),
        metric,
        &format!("margin of `{}` row {rho}", s.name),
    )?;
    let u = SpacelikeVector::new(p.base.clone(), s.orthogonal_reference(rho, &p.base, metric)?);
    metric.inner(&split.vperp, &u)
}

fn class_from_margins(margins: &[f64], tol: f64) -> VelocityClass {
    if margins.iter().any(|&m| m < -tol) {
        VelocityClass::Left
    } else if margins.iter().all(|&m| m.abs() <= tol) {
        VelocityClass::Tangent
    } else {
        VelocityClass::Right
    }
}

/// Classify `p` against a single unilateral constraint by the sign of
/// `Φ(velort(p), U⊥)`: negative enters, positive exits, zero is tangent.
///
/// Codimension ≥ 2 constraints are accepted only when every row is unilateral
/// and oriented, in which case they classify like a regular intersection of
/// codimension-1 constraints.
pub fn classify(
    p: &TimelikeVelocity,
    s: &PositionalConstraint,
    metric: &MassMetric,
    tol: f64,
) -> Result<Classification> {
    if s.codim() > 1 && !s.unilateral.iter().all(|&u| u) {
        return Err(Error::NoEntranceRule {
            constraint: s.name.clone(),
            codim: s.codim(),
        });
    }
    let mut margins = Vec::with_capacity(s.codim());
    for rho in 0..s.codim() {
        margins.push(row_margin(p, s, rho, metric)?);
    }
    Ok(Classification {
        class: class_from_margins(&margins, tol),
        margins,
    })
}

/// Classify `p` against several simultaneously active unilateral constraints:
/// entering when any per-constraint orthogonal sign is negative, exiting when
/// none is negative and at least one is positive, tangent otherwise.
pub fn classify_multiple(
    p: &TimelikeVelocity,
    constraints: &[&PositionalConstraint],
    metric: &MassMetric,
    tol: f64,
) -> Result<Classification> {
    let mut margins = Vec::new();
    for s in constraints {
        for rho in 0..s.codim() {
            margins.push(row_margin(p, s, rho, metric)?);
        }
    }
    Ok(Classification {
        class: class_from_margins(&margins, tol),
        margins,
    })
}

/// Defect between the two candidate orthogonal components of `p` relative to
/// a frame `h`: `‖P⊥_J(p) − P⊥_V(p − h)‖_Φ`.
///
/// The first projector splits the absolute velocity against the tangency
/// rows; the second splits the `h`-relative velocity vertically. They agree
/// exactly when `h` is a rest frame of the constraint, so this residual
/// measures how far `h` is from one.
pub fn split_commutation_residual(
    p: &TimelikeVelocity,
    h: &FrameField,
    s: &PositionalConstraint,
    metric: &MassMetric,
) -> Result<f64> {
    let jet_perp = split_positional(p, s, metric)?.vperp;
    let rel = h.relativize(p)?;
    let covectors: Vec<DVector<f64>> = s
        .tangency_rows(&p.base)?
        .into_iter()
        .map(|r| r.a)
        .collect();
    let (_, vertical_perp) = vertical_split(
        &rel,
        &covectors,
        metric,
        &format!("vertical splitting against `{}`", s.name),
    )?;
    metric.norm(&jet_perp.minus(&vertical_perp)?)
}
