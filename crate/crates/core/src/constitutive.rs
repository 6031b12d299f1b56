//! Constitutive characterizations: the rules producing the reactive impulse
//! from an admissible left velocity.
//!
//! Every law resolves an impact through the impulse–velocity balance
//! `p_R = p_L + I_act + I_react` and must return a right velocity respecting
//! the constraints (or explicitly declare them broken) so that the evolution
//! stays deterministic. Laws never re-derive geometry: orthogonal components
//! come from the splitting module.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;

use crate::constraint::{KineticConstraint, PositionalConstraint};
use crate::error::{Error, Result};
use crate::expr::{BoundExpr, EvalEnv, Node, Slot};
use crate::geometry::{
    kinetic_energy, FrameField, MassMetric, SpacelikeVector, SpacetimePoint, TimelikeVelocity,
};
use crate::split::{
    classify_multiple, orthogonal_split, split_joint, vertical_split, Splitting, VelocityClass,
};

/// Extra identifiers available to law-parameter expressions, in slot order:
/// the orthogonal speed, the tangential speed (needs a rest frame), and the
/// force magnitude at the left velocity.
pub const LAW_EXTRAS: [&str; 3] = ["vperp", "vpar", "zforce"];

/// Everything a law may consult: the contact point, the metric, the active
/// constraints, and the optional active impulse / force value / rest frame.
#[derive(Debug, Clone)]
pub struct ImpactContext {
    pub point: SpacetimePoint,
    pub metric: MassMetric,
    pub positional: Vec<PositionalConstraint>,
    pub permanent: Vec<KineticConstraint>,
    pub instantaneous: Vec<KineticConstraint>,
    pub active_impulse: Option<SpacelikeVector>,
    pub force_value: Option<SpacelikeVector>,
    /// Named rest frame of the positional constraints, for friction laws.
    pub rest_frame: Option<(String, FrameField)>,
    pub tol: f64,
}

impl ImpactContext {
    /// Build a context, checking that the point lies on every positional
    /// constraint within `contact_tol`.
    pub fn new(
        point: SpacetimePoint,
        metric: MassMetric,
        positional: Vec<PositionalConstraint>,
        permanent: Vec<KineticConstraint>,
        instantaneous: Vec<KineticConstraint>,
        tol: f64,
        contact_tol: f64,
    ) -> Result<Self> {
        for s in &positional {
            let worst = s.max_violation(&point)?;
            if worst > contact_tol {
                return Err(Error::NotOnConstraint {
                    constraint: s.name.clone(),
                    residual: worst,
                });
            }
        }
        Ok(ImpactContext {
            point,
            metric,
            positional,
            permanent,
            instantaneous,
            active_impulse: None,
            force_value: None,
            rest_frame: None,
            tol,
        })
    }

    pub fn with_active_impulse(mut self, i_act: SpacelikeVector) -> Result<Self> {
        if i_act.base != self.point {
            return Err(Error::MismatchedBase {
                left: i_act.base.to_string(),
                right: self.point.to_string(),
            });
        }
        self.active_impulse = Some(i_act);
        Ok(self)
    }

    pub fn with_force_value(mut self, z: SpacelikeVector) -> Self {
        self.force_value = Some(z);
        self
    }

    pub fn with_rest_frame(mut self, name: impl Into<String>, h: FrameField) -> Self {
        self.rest_frame = Some((name.into(), h));
        self
    }

    fn positional_refs(&self) -> Vec<&PositionalConstraint> {
        self.positional.iter().collect()
    }

    fn permanent_refs(&self) -> Vec<&KineticConstraint> {
        self.permanent.iter().collect()
    }

    fn instantaneous_refs(&self) -> Vec<&KineticConstraint> {
        self.instantaneous.iter().collect()
    }
}

/// Outcome of one impact resolution.
#[derive(Debug, Clone)]
pub struct ImpactResolution {
    /// The reactive impulse `I_react`.
    pub impulse: SpacelikeVector,
    /// `p_R = p_L + I_act + I_react`, computed by exactly that sum.
    pub p_right: TimelikeVelocity,
    /// Constraints declared no longer binding by the law.
    pub broken: BTreeSet<String>,
    /// Φ-norm of the orthogonal component driving the law.
    pub vperp_norm: f64,
}

/// Scalar law parameter: a constant or an expression over the left velocity,
/// `vperp`, `vpar` and `zforce`.
#[derive(Debug, Clone)]
pub enum LawParam {
    Const(f64),
    Expr(BoundExpr),
}

impl LawParam {
    pub fn constant(v: f64) -> Self {
        LawParam::Const(v)
    }

    fn eval(&self, law: &str, env: &LawParamEnv<'_>) -> Result<f64> {
        match self {
            LawParam::Const(v) => Ok(*v),
            LawParam::Expr(e) => {
                if uses_extra(e, 1) && env.vpar.is_none() {
                    return Err(Error::LawParameter {
                        law: law.into(),
                        msg: "parameter references `vpar` but no rest frame is supplied".into(),
                    });
                }
                if uses_extra(e, 2) && env.zforce.is_none() {
                    return Err(Error::LawParameter {
                        law: law.into(),
                        msg: "parameter references `zforce` but no force section is configured"
                            .into(),
                    });
                }
                let extras = [
                    env.vperp,
                    env.vpar.unwrap_or(0.0),
                    env.zforce.unwrap_or(0.0),
                ];
                Ok(e.eval(&EvalEnv {
                    t: env.p_left.base.t,
                    x: env.p_left.base.x.as_slice(),
                    xdot: env.p_left.spatial.as_slice(),
                    extras: &extras,
                })?)
            }
        }
    }
}

struct LawParamEnv<'a> {
    p_left: &'a TimelikeVelocity,
    vperp: f64,
    vpar: Option<f64>,
    zforce: Option<f64>,
}

fn uses_extra(e: &BoundExpr, idx: usize) -> bool {
    match &e.node {
        Node::Var(Slot::Extra(i)) => *i == idx,
        Node::Var(_) | Node::Num(_) => false,
        Node::Neg(inner) => uses_extra(inner, idx),
        Node::Binary(_, a, b) => uses_extra(a, idx) || uses_extra(b, idx),
        Node::Call(_, args) => args.iter().any(|a| uses_extra(a, idx)),
    }
}

/// Splitting target of a reflection-type law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReflectionTarget {
    /// The positional constraint(s) alone.
    Positional,
    /// Intersection with the permanent kinetic constraint(s).
    WithPermanent,
    /// Intersection with the instantaneous kinetic constraint(s).
    WithInstantaneous,
}

/// Which subspace cancels the active impulse in the ideal active-impulse law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveIdealTarget {
    /// Permanent kinetic constraint (cancel the `V⊥(A)` part).
    Kinetic,
    /// Bilateral positional constraint (cancel the `V⊥(S)` part).
    Positional,
}

/// The library of constitutive characterizations.
#[derive(Debug, Clone)]
pub enum ConstitutiveLaw {
    /// `I = −2·velort(p_L)`: preserves kinetic energy in every rest frame of
    /// the target.
    IdealReflection { target: ReflectionTarget },
    /// `I = −(1+ε⊥)·velort(p_L)` with `ε⊥ ∈ [0, 1]`.
    NewtonRestitution { eps: LawParam },
    /// `p_R = P_J(p_L)`: the orthogonal component is absorbed.
    TotallyInelastic,
    /// `I = α·velort + β·velpar` relative to a declared rest frame; the
    /// tangential term may be rescaled along the anisotropy direction.
    RestFrameFriction {
        alpha: LawParam,
        beta: LawParam,
        frame: String,
        anisotropy_gain: Option<f64>,
    },
    /// Ideal response to an active impulse: the orthogonal part of `I_act` is
    /// cancelled, the tangential reaction vanishes.
    KineticIdeal { target: ActiveIdealTarget },
    /// `I = −λ·velort` with `λ = 2Ξ²/(Ξ² + ‖velort‖²)`: breaks above the
    /// threshold speed.
    BreakableSaturating { threshold: LawParam },
    /// `I = −λ·velort` with `λ = 2‖velort‖²/(Ξ² + ‖velort‖²)`: breaks below
    /// the threshold speed.
    BreakableLowSpeed { threshold: LawParam },
    /// Two-branch wall law for a rolling body: joint reflection while the
    /// orthogonal speed stays within the threshold, positional-only
    /// reflection (rolling broken) above it.
    DiskWallBreakable {
        eps_contact: LawParam,
        eps_break: LawParam,
        threshold: LawParam,
    },
    /// Metric-orthogonal projection onto the admissible set, treating
    /// violated unilateral kinetic rows as equalities.
    InelasticClamp,
}

/// Registry tags accepted by scenario files.
pub const KNOWN_TAGS: [&str; 9] = [
    "ideal_reflection",
    "newton",
    "totally_inelastic",
    "friction",
    "kinetic_ideal",
    "breakable_saturating",
    "breakable_lowspeed",
    "disk_wall_breakable",
    "inelastic_clamp",
];

impl ConstitutiveLaw {
    pub fn tag(&self) -> &'static str {
        match self {
            ConstitutiveLaw::IdealReflection { .. } => "ideal_reflection",
            ConstitutiveLaw::NewtonRestitution { .. } => "newton",
            ConstitutiveLaw::TotallyInelastic => "totally_inelastic",
            ConstitutiveLaw::RestFrameFriction { .. } => "friction",
            ConstitutiveLaw::KineticIdeal { .. } => "kinetic_ideal",
            ConstitutiveLaw::BreakableSaturating { .. } => "breakable_saturating",
            ConstitutiveLaw::BreakableLowSpeed { .. } => "breakable_lowspeed",
            ConstitutiveLaw::DiskWallBreakable { .. } => "disk_wall_breakable",
            ConstitutiveLaw::InelasticClamp => "inelastic_clamp",
        }
    }

    /// Resolve an impact. The left velocity must be based at the context
    /// point.
    pub fn apply(&self, p_left: &TimelikeVelocity, ctx: &ImpactContext) -> Result<ImpactResolution> {
        if p_left.base != ctx.point {
            return Err(Error::MismatchedBase {
                left: p_left.base.to_string(),
                right: ctx.point.to_string(),
            });
        }
        match self {
            ConstitutiveLaw::IdealReflection { target } => self.reflect(p_left, ctx, *target, 1.0),
            ConstitutiveLaw::NewtonRestitution { eps } => {
                let split = positional_split(p_left, ctx)?;
                let env = param_env(p_left, ctx, &split)?;
                let eps = eps.eval(self.tag(), &env)?;
                if !(0.0..=1.0).contains(&eps) {
                    return Err(Error::LawParameter {
                        law: self.tag().into(),
                        msg: format!("restitution coefficient {eps} outside [0, 1]"),
                    });
                }
                require_entering(self.tag(), p_left, ctx)?;
                let i_react = split.vperp.scaled(-(1.0 + eps));
                finish(p_left, ctx, i_react, BTreeSet::new(), env.vperp)
            }
            ConstitutiveLaw::TotallyInelastic => {
                require_entering(self.tag(), p_left, ctx)?;
                let split = positional_split(p_left, ctx)?;
                let nv = ctx.metric.norm(&split.vperp)?;
                let i_react = split.vperp.scaled(-1.0);
                finish(p_left, ctx, i_react, BTreeSet::new(), nv)
            }
            ConstitutiveLaw::RestFrameFriction {
                alpha,
                beta,
                frame,
                anisotropy_gain,
            } => self.friction(p_left, ctx, alpha, beta, frame, *anisotropy_gain),
            ConstitutiveLaw::KineticIdeal { target } => self.kinetic_ideal(p_left, ctx, *target),
            ConstitutiveLaw::BreakableSaturating { threshold } => {
                self.breakable(p_left, ctx, threshold, BreakableKind::Saturating)
            }
            ConstitutiveLaw::BreakableLowSpeed { threshold } => {
                self.breakable(p_left, ctx, threshold, BreakableKind::LowSpeed)
            }
            ConstitutiveLaw::DiskWallBreakable {
                eps_contact,
                eps_break,
                threshold,
            } => self.disk_wall(p_left, ctx, eps_contact, eps_break, threshold),
            ConstitutiveLaw::InelasticClamp => self.inelastic_clamp(p_left, ctx),
        }
    }

    fn reflect(
        &self,
        p_left: &TimelikeVelocity,
        ctx: &ImpactContext,
        target: ReflectionTarget,
        eps: f64,
    ) -> Result<ImpactResolution> {
        require_entering(self.tag(), p_left, ctx)?;
        let split = target_split(p_left, ctx, target)?;
        let nv = ctx.metric.norm(&split.vperp)?;
        let i_react = split.vperp.scaled(-(1.0 + eps));
        finish(p_left, ctx, i_react, BTreeSet::new(), nv)
    }

    fn friction(
        &self,
        p_left: &TimelikeVelocity,
        ctx: &ImpactContext,
        alpha: &LawParam,
        beta: &LawParam,
        frame_name: &str,
        anisotropy_gain: Option<f64>,
    ) -> Result<ImpactResolution> {
        let (name, h) = ctx.rest_frame.as_ref().ok_or(Error::MissingRestFrame)?;
        // The decomposition below is frame-consistent only for rest frames.
        for s in &ctx.positional {
            if !s.is_rest_frame(h, std::slice::from_ref(&ctx.point), 10.0 * ctx.tol)? {
                let hv = h.at(&ctx.point)?;
                let mut worst = 0.0f64;
                for f in &s.funcs {
                    let (dt, dx) = f.gradient(&ctx.point)?;
                    worst = worst.max((dt + dx.dot(&hv)).abs());
                }
                return Err(Error::NotRestFrame {
                    frame: if frame_name.is_empty() {
                        name.clone()
                    } else {
                        frame_name.to_string()
                    },
                    constraint: s.name.clone(),
                    residual: worst,
                });
            }
        }
        require_entering(self.tag(), p_left, ctx)?;
        let split = positional_split(p_left, ctx)?;
        let rel = h.relativize(p_left)?;
        let covectors: Vec<DVector<f64>> = stacked_positional_rows(ctx)?
            .into_iter()
            .map(|r| r.a)
            .collect();
        let (vpar, _) = vertical_split(&rel, &covectors, &ctx.metric, "friction tangential part")?;
        let env = LawParamEnv {
            p_left,
            vperp: ctx.metric.norm(&split.vperp)?,
            vpar: Some(ctx.metric.norm(&vpar)?),
            zforce: force_norm(ctx)?,
        };
        let a = alpha.eval(self.tag(), &env)?;
        let b = beta.eval(self.tag(), &env)?;
        let tangential = match anisotropy_gain {
            None => vpar.scaled(b),
            Some(gain) => {
                let l_field = ctx
                    .positional
                    .iter()
                    .find_map(|s| s.anisotropy.as_ref())
                    .ok_or_else(|| Error::LawParameter {
                        law: self.tag().into(),
                        msg: "anisotropy gain set but no constraint declares a direction".into(),
                    })?;
                let l = SpacelikeVector::new(ctx.point.clone(), l_field.value(&ctx.point)?);
                let norm = ctx.metric.norm(&l)?;
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(Error::LawParameter {
                        law: self.tag().into(),
                        msg: format!("anisotropy direction has Φ-norm {norm}, expected 1"),
                    });
                }
                let along = l.scaled(ctx.metric.inner(&vpar, &l)?);
                let off = vpar.minus(&along)?;
                off.plus(&along.scaled(gain))?.scaled(b)
            }
        };
        let i_react = split.vperp.scaled(a).plus(&tangential)?;
        finish(p_left, ctx, i_react, BTreeSet::new(), env.vperp)
    }

    fn kinetic_ideal(
        &self,
        p_left: &TimelikeVelocity,
        ctx: &ImpactContext,
        target: ActiveIdealTarget,
    ) -> Result<ImpactResolution> {
        let i_act = ctx
            .active_impulse
            .as_ref()
            .ok_or(Error::MissingActiveImpulse)?;
        let covectors: Vec<DVector<f64>> = match target {
            ActiveIdealTarget::Kinetic => {
                if ctx.permanent.is_empty() {
                    return Err(Error::MissingKineticConstraint);
                }
                for a in &ctx.permanent {
                    let (ok, _) = a.satisfies(p_left, 1e3 * ctx.tol)?;
                    if !ok {
                        return Err(Error::Precondition {
                            law: self.tag().into(),
                            msg: format!("left velocity is not a member of `{}`", a.name),
                        });
                    }
                }
                let mut rows = Vec::new();
                for a in &ctx.permanent {
                    rows.extend(a.equality_rows_at(&ctx.point)?.into_iter().map(|r| r.a));
                }
                rows
            }
            ActiveIdealTarget::Positional => stacked_positional_rows(ctx)?
                .into_iter()
                .map(|r| r.a)
                .collect(),
        };
        let (_, perp) = vertical_split(i_act, &covectors, &ctx.metric, "active impulse splitting")?;
        let nv = ctx.metric.norm(&perp)?;
        let i_react = perp.scaled(-1.0);
        finish(p_left, ctx, i_react, BTreeSet::new(), nv)
    }

    fn breakable(
        &self,
        p_left: &TimelikeVelocity,
        ctx: &ImpactContext,
        threshold: &LawParam,
        kind: BreakableKind,
    ) -> Result<ImpactResolution> {
        require_entering(self.tag(), p_left, ctx)?;
        let split = positional_split(p_left, ctx)?;
        let env = param_env(p_left, ctx, &split)?;
        let xi = threshold.eval(self.tag(), &env)?;
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(Error::LawParameter {
                law: self.tag().into(),
                msg: format!("breakability threshold {xi} must be positive and finite"),
            });
        }
        let nv = env.vperp;
        let (lambda, broken) = match kind {
            BreakableKind::Saturating => {
                (2.0 * xi * xi / (xi * xi + nv * nv), nv > xi)
            }
            BreakableKind::LowSpeed => (2.0 * nv * nv / (xi * xi + nv * nv), nv < xi),
        };
        let i_react = split.vperp.scaled(-lambda);
        let broken_set: BTreeSet<String> = if broken {
            ctx.positional.iter().map(|s| s.name.clone()).collect()
        } else {
            BTreeSet::new()
        };
        finish(p_left, ctx, i_react, broken_set, nv)
    }

    fn disk_wall(
        &self,
        p_left: &TimelikeVelocity,
        ctx: &ImpactContext,
        eps_contact: &LawParam,
        eps_break: &LawParam,
        threshold: &LawParam,
    ) -> Result<ImpactResolution> {
        if ctx.permanent.is_empty() {
            return Err(Error::MissingKineticConstraint);
        }
        for a in &ctx.permanent {
            let (ok, _) = a.satisfies(p_left, 1e3 * ctx.tol)?;
            if !ok {
                return Err(Error::Precondition {
                    law: self.tag().into(),
                    msg: format!("left velocity is not a member of `{}`", a.name),
                });
            }
        }
        require_entering(self.tag(), p_left, ctx)?;
        let split_s = positional_split(p_left, ctx)?;
        let env = param_env(p_left, ctx, &split_s)?;
        let xi = threshold.eval(self.tag(), &env)?;
        if xi < 0.0 {
            return Err(Error::LawParameter {
                law: self.tag().into(),
                msg: format!("breakability threshold {xi} must be nonnegative"),
            });
        }
        let nv = env.vperp;
        if nv <= xi {
            let eps1 = eps_contact.eval(self.tag(), &env)?;
            check_restitution(self.tag(), eps1)?;
            let joint = split_joint(
                p_left,
                &ctx.positional_refs(),
                &ctx.permanent_refs(),
                &ctx.metric,
            )?;
            let i_react = joint.vperp.scaled(-(1.0 + eps1));
            finish(p_left, ctx, i_react, BTreeSet::new(), nv)
        } else {
            let eps2 = eps_break.eval(self.tag(), &env)?;
            check_restitution(self.tag(), eps2)?;
            let i_react = split_s.vperp.scaled(-(1.0 + eps2));
            let broken = ctx.permanent.iter().map(|a| a.name.clone()).collect();
            finish(p_left, ctx, i_react, broken, nv)
        }
    }

    fn inelastic_clamp(
        &self,
        p_left: &TimelikeVelocity,
        ctx: &ImpactContext,
    ) -> Result<ImpactResolution> {
        // active set: every equality row plus the violated unilateral rows;
        // grows until the projection satisfies all rows
        let mut active: BTreeSet<(usize, usize)> = BTreeSet::new();
        for (ci, a) in ctx.permanent.iter().enumerate() {
            for (ri, row) in a.rows.iter().enumerate() {
                if row.relation == crate::constraint::RowRelation::Equality {
                    active.insert((ci, ri));
                }
            }
            for ri in a.violated_rows(p_left, ctx.tol)? {
                active.insert((ci, ri));
            }
        }
        if ctx
            .permanent
            .iter()
            .map(|a| a.violated_rows(p_left, ctx.tol).map(|v| v.len()))
            .sum::<Result<usize>>()?
            == 0
        {
            return finish(
                p_left,
                ctx,
                SpacelikeVector::zero(ctx.point.clone()),
                BTreeSet::new(),
                0.0,
            );
        }
        let total_rows: usize = ctx.permanent.iter().map(|a| a.rows.len()).sum();
        for _ in 0..=total_rows {
            let rows: Vec<_> = active
                .iter()
                .map(|&(ci, ri)| ctx.permanent[ci].rows[ri].at(&ctx.point))
                .collect::<Result<_>>()?;
            let split = orthogonal_split(p_left, &rows, &ctx.metric, "inelastic clamp")
                .map_err(|e| match e {
                    Error::RankDeficient { context } => Error::InfeasibleActiveSet {
                        msg: format!("dependent active rows ({context})"),
                    },
                    other => other,
                })?;
            let candidate = &split.parallel;
            let mut newly_violated = Vec::new();
            for (ci, a) in ctx.permanent.iter().enumerate() {
                for ri in a.violated_rows(candidate, ctx.tol)? {
                    if !active.contains(&(ci, ri)) {
                        newly_violated.push((ci, ri));
                    }
                }
            }
            if newly_violated.is_empty() {
                let nv = ctx.metric.norm(&split.vperp)?;
                let i_react = split.vperp.scaled(-1.0);
                return finish(p_left, ctx, i_react, BTreeSet::new(), nv);
            }
            active.extend(newly_violated);
        }
        Err(Error::InfeasibleActiveSet {
            msg: "active set did not stabilize".into(),
        })
    }
}

enum BreakableKind {
    Saturating,
    LowSpeed,
}

fn check_restitution(law: &str, eps: f64) -> Result<()> {
    if (0.0..=1.0).contains(&eps) {
        Ok(())
    } else {
        Err(Error::LawParameter {
            law: law.into(),
            msg: format!("restitution coefficient {eps} outside [0, 1]"),
        })
    }
}

fn stacked_positional_rows(ctx: &ImpactContext) -> Result<Vec<crate::split::AffineRow>> {
    let mut rows = Vec::new();
    for s in &ctx.positional {
        rows.extend(s.tangency_rows(&ctx.point)?);
    }
    Ok(rows)
}

/// Orthogonal split against the stacked positional constraints of the
/// context.
fn positional_split(p_left: &TimelikeVelocity, ctx: &ImpactContext) -> Result<Splitting> {
    if ctx.positional.is_empty() {
        return Err(Error::Precondition {
            law: "positional law".into(),
            msg: "no positional constraint is active".into(),
        });
    }
    split_joint(p_left, &ctx.positional_refs(), &[], &ctx.metric)
}

fn target_split(
    p_left: &TimelikeVelocity,
    ctx: &ImpactContext,
    target: ReflectionTarget,
) -> Result<Splitting> {
    match target {
        ReflectionTarget::Positional => positional_split(p_left, ctx),
        ReflectionTarget::WithPermanent => split_joint(
            p_left,
            &ctx.positional_refs(),
            &ctx.permanent_refs(),
            &ctx.metric,
        ),
        ReflectionTarget::WithInstantaneous => split_joint(
            p_left,
            &ctx.positional_refs(),
            &ctx.instantaneous_refs(),
            &ctx.metric,
        ),
    }
}

fn param_env<'a>(
    p_left: &'a TimelikeVelocity,
    ctx: &ImpactContext,
    split: &Splitting,
) -> Result<LawParamEnv<'a>> {
    Ok(LawParamEnv {
        p_left,
        vperp: ctx.metric.norm(&split.vperp)?,
        vpar: match &ctx.rest_frame {
            Some((_, h)) => {
                let rel = h.relativize(p_left)?;
                let covectors: Vec<DVector<f64>> = stacked_positional_rows(ctx)?
                    .into_iter()
                    .map(|r| r.a)
                    .collect();
                let (vpar, _) =
                    vertical_split(&rel, &covectors, &ctx.metric, "tangential speed")?;
                Some(ctx.metric.norm(&vpar)?)
            }
            None => None,
        },
        zforce: force_norm(ctx)?,
    })
}

fn force_norm(ctx: &ImpactContext) -> Result<Option<f64>> {
    match &ctx.force_value {
        Some(z) => Ok(Some(ctx.metric.norm(z)?)),
        None => Ok(None),
    }
}

// Entering (LEFT) velocities resolve normally and tangent ones degenerate to
// a zero orthogonal component; exiting velocities are rejected.
fn require_entering(law: &str, p_left: &TimelikeVelocity, ctx: &ImpactContext) -> Result<()> {
    if ctx.positional.is_empty() {
        return Err(Error::Precondition {
            law: law.into(),
            msg: "no positional constraint is active".into(),
        });
    }
    let class = classify_multiple(p_left, &ctx.positional_refs(), &ctx.metric, ctx.tol)?;
    match class.class {
        VelocityClass::Left | VelocityClass::Tangent => Ok(()),
        other => Err(Error::NotEntering {
            class: other.to_string(),
        }),
    }
}

fn finish(
    p_left: &TimelikeVelocity,
    ctx: &ImpactContext,
    i_react: SpacelikeVector,
    broken: BTreeSet<String>,
    vperp_norm: f64,
) -> Result<ImpactResolution> {
    let total = match &ctx.active_impulse {
        Some(i_act) => i_act.plus(&i_react)?,
        None => i_react.clone(),
    };
    let p_right = p_left.shift(&total)?;
    Ok(ImpactResolution {
        impulse: i_react,
        p_right,
        broken,
        vperp_norm,
    })
}

/// Determinism guard: a resolution that leaves the system entering without
/// declaring anything broken contradicts the definition of a constitutive
/// characterization.
pub fn validate_resolution(
    law: &str,
    p_left: &TimelikeVelocity,
    res: &ImpactResolution,
    ctx: &ImpactContext,
) -> Result<()> {
    let expected = match &ctx.active_impulse {
        Some(i_act) => p_left.shift(&i_act.plus(&res.impulse)?)?,
        None => p_left.shift(&res.impulse)?,
    };
    if expected.spatial != res.p_right.spatial {
        return Err(Error::LawContract {
            law: law.into(),
            msg: "right velocity is not p_L + I_act + I_react".into(),
        });
    }
    if res.broken.is_empty() && !ctx.positional.is_empty() {
        let class = classify_multiple(
            &res.p_right,
            &ctx.positional_refs(),
            &ctx.metric,
            ctx.tol,
        )?;
        if class.class == VelocityClass::Left {
            return Err(Error::LawContract {
                law: law.into(),
                msg: "right velocity still enters the constraint and nothing was broken".into(),
            });
        }
    }
    Ok(())
}

/// Per-frame kinetic energies and restitution ratios of an impact.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FrameEnergy {
    pub left: f64,
    pub right: f64,
    /// `K_R / K_L`; absent when the left energy vanishes in that frame.
    pub ratio: Option<f64>,
}

/// Kinetic-energy restitution ratios of `p_L → p_R` in each supplied frame.
pub fn energy_restitution_table(
    p_left: &TimelikeVelocity,
    p_right: &TimelikeVelocity,
    frames: &BTreeMap<String, FrameField>,
    metric: &MassMetric,
) -> Result<BTreeMap<String, FrameEnergy>> {
    let mut table = BTreeMap::new();
    for (name, h) in frames {
        let left = kinetic_energy(p_left, h, metric)?;
        let right = kinetic_energy(p_right, h, metric)?;
        let ratio = if left == 0.0 { None } else { Some(right / left) };
        table.insert(
            name.clone(),
            FrameEnergy {
                left,
                right,
                ratio,
            },
        );
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::{sample_rest_frames, KineticRow, RowRelation};
    use crate::fields::{ScalarField, VectorField};
    use crate::geometry::kinetic_energy;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn pt(t: f64, x: &[f64]) -> SpacetimePoint {
        SpacetimePoint::new(t, DVector::from_row_slice(x))
    }

    fn tv(base: &SpacetimePoint, c: &[f64]) -> TimelikeVelocity {
        TimelikeVelocity::new(base.clone(), DVector::from_row_slice(c))
    }

    fn plane_ctx(g: &[f64], z0: &SpacetimePoint) -> ImpactContext {
        let s = PositionalConstraint::oriented(
            "plane",
            ScalarField::from_fn(|pt| Ok(pt.x[2])),
            1.0,
        );
        ImpactContext::new(
            z0.clone(),
            MassMetric::diagonal(g),
            vec![s],
            vec![],
            vec![],
            1e-9,
            1e-7,
        )
        .unwrap()
    }

    fn rod_ctx(m: f64, l: f64) -> (ImpactContext, SpacetimePoint) {
        let base = pt(0.0, &[0.0, l, std::f64::consts::FRAC_PI_2]);
        let lc = l;
        let s = PositionalConstraint::oriented(
            "floor",
            ScalarField::from_fn(move |pt| Ok(pt.x[1] - lc * pt.x[2].sin())),
            1.0,
        );
        let ctx = ImpactContext::new(
            base.clone(),
            MassMetric::diagonal(&[m, m, m * l * l / 3.0]),
            vec![s],
            vec![],
            vec![],
            1e-9,
            1e-7,
        )
        .unwrap();
        (ctx, base)
    }

    /// Disk against a wall, chart (x, ϑ): S: x = 1 entered from the left,
    /// A: ẋ + Rϑ̇ = 0.
    fn disk_ctx(m: f64, i0: f64, r: f64) -> (ImpactContext, SpacetimePoint) {
        let base = pt(0.0, &[1.0, 0.0]);
        let s = PositionalConstraint::oriented(
            "wall",
            ScalarField::from_fn(|pt| Ok(pt.x[0] - 1.0)),
            -1.0,
        );
        let a = KineticConstraint::permanent(
            "rolling",
            vec![KineticRow::equality(
                VectorField::constant(DVector::from_row_slice(&[1.0, r])),
                ScalarField::constant(0.0),
            )],
        );
        let ctx = ImpactContext::new(
            base.clone(),
            MassMetric::diagonal(&[m, i0]),
            vec![s],
            vec![a],
            vec![],
            1e-9,
            1e-7,
        )
        .unwrap();
        (ctx, base)
    }

    #[test]
    fn ideal_reflection_rod_rebound() {
        let (m, l, y0) = (1.0, 1.0, 1.3);
        let (ctx, base) = rod_ctx(m, l);
        let p_left = tv(&base, &[0.0, -y0, 0.0]);
        let law = ConstitutiveLaw::IdealReflection {
            target: ReflectionTarget::Positional,
        };
        let res = law.apply(&p_left, &ctx).unwrap();
        assert_relative_eq!(res.p_right.spatial[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(res.p_right.spatial[1], y0, epsilon = 1e-12);
        assert_relative_eq!(res.p_right.spatial[2], 0.0, epsilon = 1e-12);
        validate_resolution(law.tag(), &p_left, &res, &ctx).unwrap();
    }

    #[test]
    fn ideal_reflection_preserves_energy_in_random_rest_frames() {
        let (ctx, base) = rod_ctx(2.0, 1.0);
        let p_left = tv(&base, &[0.0, -1.3, 0.0]);
        let law = ConstitutiveLaw::IdealReflection {
            target: ReflectionTarget::Positional,
        };
        let res = law.apply(&p_left, &ctx).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let frames = sample_rest_frames(&ctx.positional[0], &base, 50, 2.0, &mut rng).unwrap();
        for h in &frames {
            let kl = kinetic_energy(&p_left, h, &ctx.metric).unwrap();
            let kr = kinetic_energy(&res.p_right, h, &ctx.metric).unwrap();
            assert_relative_eq!(kl, kr, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn ideal_reflection_plane() {
        let base = pt(0.0, &[0.0, 0.0, 0.0]);
        let ctx = plane_ctx(&[1.0, 1.0, 1.0], &base);
        let p_left = tv(&base, &[1.0, 0.0, -2.0]);
        let law = ConstitutiveLaw::IdealReflection {
            target: ReflectionTarget::Positional,
        };
        let res = law.apply(&p_left, &ctx).unwrap();
        assert_eq!(
            res.p_right.spatial,
            DVector::from_row_slice(&[1.0, 0.0, 2.0])
        );
    }

    #[test]
    fn ideal_reflection_tangent_velocity_gives_zero_impulse() {
        let base = pt(0.0, &[0.0, 0.0, 0.0]);
        let ctx = plane_ctx(&[1.0, 1.0, 1.0], &base);
        let p_left = tv(&base, &[1.0, -0.5, 0.0]);
        let law = ConstitutiveLaw::IdealReflection {
            target: ReflectionTarget::Positional,
        };
        let res = law.apply(&p_left, &ctx).unwrap();
        assert_relative_eq!(res.impulse.components.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ideal_reflection_rejects_exiting_velocity() {
        let base = pt(0.0, &[0.0, 0.0, 0.0]);
        let ctx = plane_ctx(&[1.0, 1.0, 1.0], &base);
        let p_left = tv(&base, &[0.0, 0.0, 3.0]);
        let law = ConstitutiveLaw::IdealReflection {
            target: ReflectionTarget::Positional,
        };
        assert!(matches!(
            law.apply(&p_left, &ctx),
            Err(Error::NotEntering { .. })
        ));
    }

    #[test]
    fn newton_restitution_scales_the_orthogonal_part() {
        let base = pt(0.0, &[0.0, 0.0, 0.0]);
        let ctx = plane_ctx(&[1.0, 1.0, 1.0], &base);
        let p_left = tv(&base, &[1.0, 0.0, -2.0]);
        let newton = |e: f64| ConstitutiveLaw::NewtonRestitution {
            eps: LawParam::constant(e),
        };
        let res = newton(0.5).apply(&p_left, &ctx).unwrap();
        assert_eq!(
            res.p_right.spatial,
            DVector::from_row_slice(&[1.0, 0.0, 1.0])
        );
        // boundary identities
        let inelastic = ConstitutiveLaw::TotallyInelastic.apply(&p_left, &ctx).unwrap();
        assert_eq!(
            newton(0.0).apply(&p_left, &ctx).unwrap().p_right.spatial,
            inelastic.p_right.spatial
        );
        let reflect = ConstitutiveLaw::IdealReflection {
            target: ReflectionTarget::Positional,
        }
        .apply(&p_left, &ctx)
        .unwrap();
        assert_eq!(
            newton(1.0).apply(&p_left, &ctx).unwrap().p_right.spatial,
            reflect.p_right.spatial
        );
        assert!(matches!(
            newton(1.5).apply(&p_left, &ctx),
            Err(Error::LawParameter { .. })
        ));
    }

    #[test]
    fn newton_restitution_never_gains_energy_in_rest_frames() {
        let (ctx, base) = rod_ctx(1.5, 1.0);
        let p_left = tv(&base, &[0.4, -1.1, 0.0]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let frames = sample_rest_frames(&ctx.positional[0], &base, 20, 2.0, &mut rng).unwrap();
        for eps in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let law = ConstitutiveLaw::NewtonRestitution {
                eps: LawParam::constant(eps),
            };
            let res = law.apply(&p_left, &ctx).unwrap();
            for h in &frames {
                let kl = kinetic_energy(&p_left, h, &ctx.metric).unwrap();
                let kr = kinetic_energy(&res.p_right, h, &ctx.metric).unwrap();
                assert!(kr <= kl + 1e-10, "eps {eps}: {kr} > {kl}");
                if eps == 1.0 {
                    assert_relative_eq!(kr, kl, epsilon = 1e-10, max_relative = 1e-10);
                }
            }
        }
    }

    #[test]
    fn totally_inelastic_absorbs_the_orthogonal_part() {
        let base = pt(0.0, &[0.0, 0.0, 0.0]);
        let ctx = plane_ctx(&[1.0, 1.0, 1.0], &base);
        let p_left = tv(&base, &[1.0, 0.0, -2.0]);
        let res = ConstitutiveLaw::TotallyInelastic.apply(&p_left, &ctx).unwrap();
        assert_eq!(
            res.p_right.spatial,
            DVector::from_row_slice(&[1.0, 0.0, 0.0])
        );

        // vertically falling rod stops dead
        let (ctx, base) = rod_ctx(1.0, 1.0);
        let p_left = tv(&base, &[0.0, -1.0, 0.0]);
        let res = ConstitutiveLaw::TotallyInelastic.apply(&p_left, &ctx).unwrap();
        assert_relative_eq!(res.p_right.spatial.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn energy_table_reproduces_frame_dependent_ratio() {
        // non-rebounding rod: ε_K in h₀ = ∂t + Hx ∂x equals Hx²/(Hx² + ẏ₀²)
        let (m, l, y0) = (1.0, 1.0, 1.0);
        let (ctx, base) = rod_ctx(m, l);
        let p_left = tv(&base, &[0.0, -y0, 0.0]);
        let res = ConstitutiveLaw::TotallyInelastic.apply(&p_left, &ctx).unwrap();
        let mut frames = BTreeMap::new();
        for (i, hx) in [0.0, 0.3, 1.0, -2.0, 7.5].iter().enumerate() {
            frames.insert(
                format!("h{i}"),
                FrameField::constant(DVector::from_row_slice(&[*hx, 0.0, 0.0])),
            );
        }
        let table =
            energy_restitution_table(&p_left, &res.p_right, &frames, &ctx.metric).unwrap();
        for (i, hx) in [0.0f64, 0.3, 1.0, -2.0, 7.5].iter().enumerate() {
            let expected = hx * hx / (hx * hx + y0 * y0);
            let entry = &table[&format!("h{i}")];
            assert_relative_eq!(entry.ratio.unwrap(), expected, epsilon = 1e-12);
        }
        // Hx = ẏ₀ gives exactly one half
        let mut one = BTreeMap::new();
        one.insert(
            "h".to_string(),
            FrameField::constant(DVector::from_row_slice(&[y0, 0.0, 0.0])),
        );
        let table = energy_restitution_table(&p_left, &res.p_right, &one, &ctx.metric).unwrap();
        assert_relative_eq!(table["h"].ratio.unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn energy_table_reports_undefined_ratio_for_zero_left_energy() {
        let base = pt(0.0, &[0.0, 0.0, 0.0]);
        let g = MassMetric::identity(3);
        let p = tv(&base, &[1.0, 0.0, 0.0]);
        let q = tv(&base, &[2.0, 0.0, 0.0]);
        let mut frames = BTreeMap::new();
        frames.insert(
            "comoving".to_string(),
            FrameField::constant(DVector::from_row_slice(&[1.0, 0.0, 0.0])),
        );
        let table = energy_restitution_table(&p, &q, &frames, &g).unwrap();
        assert!(table["comoving"].ratio.is_none());
        assert_eq!(table["comoving"].left, 0.0);
    }

    #[test]
    fn friction_combines_orthogonal_and_tangential_terms() {
        let base = pt(0.0, &[0.0, 0.0, 0.0]);
        let mut ctx = plane_ctx(&[1.0, 1.0, 1.0], &base);
        ctx = ctx.with_rest_frame("rest", FrameField::chart_rest(3));
        let p_left = tv(&base, &[2.0, 0.0, -1.0]);
        let law = ConstitutiveLaw::RestFrameFriction {
            alpha: LawParam::constant(-2.0),
            beta: LawParam::constant(-0.5),
            frame: "rest".into(),
            anisotropy_gain: None,
        };
        let res = law.apply(&p_left, &ctx).unwrap();
        assert_eq!(
            res.impulse.components,
            DVector::from_row_slice(&[-1.0, 0.0, 2.0])
        );
        assert_eq!(
            res.p_right.spatial,
            DVector::from_row_slice(&[1.0, 0.0, 1.0])
        );
    }

    #[test]
    fn friction_with_alpha_minus_two_and_no_drag_is_the_reflection() {
        let base = pt(0.0, &[0.0, 0.0, 0.0]);
        let mut ctx = plane_ctx(&[2.0, 3.0, 4.0], &base);
        ctx = ctx.with_rest_frame("rest", FrameField::chart_rest(3));
        let p_left = tv(&base, &[0.7, -0.4, -2.5]);
        let friction = ConstitutiveLaw::RestFrameFriction {
            alpha: LawParam::constant(-2.0),
            beta: LawParam::constant(0.0),
            frame: "rest".into(),
            anisotropy_gain: None,
        };
        let reflection = ConstitutiveLaw::IdealReflection {
            target: ReflectionTarget::Positional,
        };
        let a = friction.apply(&p_left, &ctx).unwrap();
        let b = reflection.apply(&p_left, &ctx).unwrap();
        assert_relative_eq!(
            (a.p_right.spatial - b.p_right.spatial).norm(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn friction_with_comoving_tangential_part_leaves_no_drag() {
        let base = pt(0.0, &[0.0, 0.0, 0.0]);
        let mut ctx = plane_ctx(&[1.0, 1.0, 1.0], &base);
        let h = FrameField::constant(DVector::from_row_slice(&[2.0, 0.5, 0.0]));
        ctx = ctx.with_rest_frame("belt", h);
        let p_left = tv(&base, &[2.0, 0.5, -1.0]);
        let law = ConstitutiveLaw::RestFrameFriction {
            alpha: LawParam::constant(-2.0),
            beta: LawParam::constant(-0.9),
            frame: "belt".into(),
            anisotropy_gain: None,
        };
        let res = law.apply(&p_left, &ctx).unwrap();
        // tangential part of p_L − h is zero, so only the reflection remains
        assert_eq!(
            res.p_right.spatial,
            DVector::from_row_slice(&[2.0, 0.5, 1.0])
        );
    }

    #[test]
    fn friction_rejects_non_rest_frames() {
        let base = pt(0.0, &[0.0, 0.0, 0.0]);
        let mut ctx = plane_ctx(&[1.0, 1.0, 1.0], &base);
        ctx = ctx.with_rest_frame(
            "bad",
            FrameField::constant(DVector::from_row_slice(&[0.0, 0.0, 1.0])),
        );
        let p_left = tv(&base, &[0.0, 0.0, -1.0]);
        let law = ConstitutiveLaw::RestFrameFriction {
            alpha: LawParam::constant(-2.0),
            beta: LawParam::constant(0.0),
            frame: "bad".into(),
            anisotropy_gain: None,
        };
        assert!(matches!(
            law.apply(&p_left, &ctx),
            Err(Error::NotRestFrame { .. })
        ));
    }

    #[test]
    fn friction_anisotropy_rescales_the_marked_direction() {
        let base = pt(0.0, &[0.0, 0.0, 0.0]);
        let s = PositionalConstraint {
            name: "plane".into(),
            funcs: vec![ScalarField::from_fn(|pt| Ok(pt.x[2]))],
            orientations: vec![Some(1.0)],
            unilateral: vec![true],
            anisotropy: Some(VectorField::constant(DVector::from_row_slice(&[
                1.0, 0.0, 0.0,
            ]))),
            normal_overrides: vec![None],
        };
        let ctx = ImpactContext::new(
            base.clone(),
            MassMetric::identity(3),
            vec![s],
            vec![],
            vec![],
            1e-9,
            1e-7,
        )
        .unwrap()
        .with_rest_frame("rest", FrameField::chart_rest(3));
        let p_left = tv(&base, &[2.0, 1.0, -1.0]);
        let law = ConstitutiveLaw::RestFrameFriction {
            alpha: LawParam::constant(-2.0),
            beta: LawParam::constant(-0.5),
            frame: "rest".into(),
            anisotropy_gain: Some(0.25),
        };
        let res = law.apply(&p_left, &ctx).unwrap();
        // tangential term: −0.5·(off + 0.25·along) with along = (2,0,0)
        assert_relative_eq!(res.impulse.components[0], -0.5 * 0.25 * 2.0, epsilon = 1e-12);
        assert_relative_eq!(res.impulse.components[1], -0.5, epsilon = 1e-12);
        assert_relative_eq!(res.impulse.components[2], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn kinetic_ideal_cancels_the_orthogonal_active_part() {
        // A: ẏ = 0 in the plane, identity metric, I_act = (1, 2)
        let base = pt(0.0, &[0.0, 0.0]);
        let a = KineticConstraint::permanent(
            "ydot",
            vec![KineticRow::equality(
                VectorField::constant(DVector::from_row_slice(&[0.0, 1.0])),
                ScalarField::constant(0.0),
            )],
        );
        let ctx = ImpactContext::new(
            base.clone(),
            MassMetric::identity(2),
            vec![],
            vec![a],
            vec![],
            1e-9,
            1e-7,
        )
        .unwrap()
        .with_active_impulse(SpacelikeVector::new(
            base.clone(),
            DVector::from_row_slice(&[1.0, 2.0]),
        ))
        .unwrap();
        let p_left = tv(&base, &[0.5, 0.0]);
        let law = ConstitutiveLaw::KineticIdeal {
            target: ActiveIdealTarget::Kinetic,
        };
        let res = law.apply(&p_left, &ctx).unwrap();
        assert_eq!(
            res.impulse.components,
            DVector::from_row_slice(&[0.0, -2.0])
        );
        assert_eq!(
            res.p_right.spatial,
            DVector::from_row_slice(&[1.5, 0.0])
        );
        validate_resolution(law.tag(), &p_left, &res, &ctx).unwrap();
    }

    #[test]
    fn kinetic_ideal_right_velocity_ignores_the_orthogonal_active_part() {
        let base = pt(0.0, &[0.0, 0.0]);
        let a = KineticConstraint::permanent(
            "ydot",
            vec![KineticRow::equality(
                VectorField::constant(DVector::from_row_slice(&[0.0, 1.0])),
                ScalarField::constant(0.0),
            )],
        );
        let p_left = tv(&base, &[0.5, 0.0]);
        let law = ConstitutiveLaw::KineticIdeal {
            target: ActiveIdealTarget::Kinetic,
        };
        let mut outcomes = Vec::new();
        for ortho in [0.0, 1.0, -3.0] {
            let ctx = ImpactContext::new(
                base.clone(),
                MassMetric::identity(2),
                vec![],
                vec![a.clone()],
                vec![],
                1e-9,
                1e-7,
            )
            .unwrap()
            .with_active_impulse(SpacelikeVector::new(
                base.clone(),
                DVector::from_row_slice(&[1.0, ortho]),
            ))
            .unwrap();
            outcomes.push(law.apply(&p_left, &ctx).unwrap().p_right.spatial);
        }
        assert_eq!(outcomes[0], outcomes[1]);
        assert_eq!(outcomes[0], outcomes[2]);
        // a tangent active impulse draws no reaction at all
        let ctx = ImpactContext::new(
            base.clone(),
            MassMetric::identity(2),
            vec![],
            vec![a],
            vec![],
            1e-9,
            1e-7,
        )
        .unwrap()
        .with_active_impulse(SpacelikeVector::new(
            base.clone(),
            DVector::from_row_slice(&[1.0, 0.0]),
        ))
        .unwrap();
        let res = law.apply(&p_left, &ctx).unwrap();
        assert_relative_eq!(res.impulse.components.norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn kinetic_ideal_on_a_bilateral_positional_constraint() {
        // the analogue for S: z = 0 as a bilateral constraint
        let base = pt(0.0, &[0.0, 0.0, 0.0]);
        let s = PositionalConstraint::new(
            "table",
            vec![ScalarField::from_fn(|pt| Ok(pt.x[2]))],
        );
        let ctx = ImpactContext::new(
            base.clone(),
            MassMetric::identity(3),
            vec![s],
            vec![],
            vec![],
            1e-9,
            1e-7,
        )
        .unwrap()
        .with_active_impulse(SpacelikeVector::new(
            base.clone(),
            DVector::from_row_slice(&[0.5, 0.0, 4.0]),
        ))
        .unwrap();
        let p_left = tv(&base, &[1.0, 0.0, 0.0]);
        let law = ConstitutiveLaw::KineticIdeal {
            target: ActiveIdealTarget::Positional,
        };
        let res = law.apply(&p_left, &ctx).unwrap();
        // normal part cancelled, tangential reaction zero
        assert_eq!(
            res.impulse.components,
            DVector::from_row_slice(&[0.0, 0.0, -4.0])
        );
        assert_eq!(
            res.p_right.spatial,
            DVector::from_row_slice(&[1.5, 0.0, 0.0])
        );
    }

    #[test]
    fn kinetic_ideal_requires_an_active_impulse() {
        let base = pt(0.0, &[0.0, 0.0]);
        let a = KineticConstraint::permanent(
            "ydot",
            vec![KineticRow::equality(
                VectorField::constant(DVector::from_row_slice(&[0.0, 1.0])),
                ScalarField::constant(0.0),
            )],
        );
        let ctx = ImpactContext::new(
            base.clone(),
            MassMetric::identity(2),
            vec![],
            vec![a],
            vec![],
            1e-9,
            1e-7,
        )
        .unwrap();
        let p_left = tv(&base, &[0.5, 0.0]);
        let law = ConstitutiveLaw::KineticIdeal {
            target: ActiveIdealTarget::Kinetic,
        };
        assert!(matches!(
            law.apply(&p_left, &ctx),
            Err(Error::MissingActiveImpulse)
        ));
    }

    #[test]
    fn breakable_saturating_regimes() {
        let base = pt(0.0, &[0.0, 0.0, 0.0]);
        let ctx = plane_ctx(&[1.0, 1.0, 1.0], &base);
        let law = |xi: f64| ConstitutiveLaw::BreakableSaturating {
            threshold: LawParam::constant(xi),
        };

        // at the threshold speed the pane behaves totally inelastically
        let p = tv(&base, &[0.0, 0.0, -2.0]);
        let res = law(2.0).apply(&p, &ctx).unwrap();
        assert_relative_eq!(res.p_right.spatial[2], 0.0, epsilon = 1e-12);
        assert!(res.broken.is_empty());

        // above threshold: λ = 0.5 at ‖vperp‖ = 2√3, Ξ = 2; sign kept, broken
        let v = 2.0 * 3.0f64.sqrt();
        let p = tv(&base, &[0.0, 0.0, -v]);
        let res = law(2.0).apply(&p, &ctx).unwrap();
        assert_relative_eq!(res.p_right.spatial[2], -0.5 * v, epsilon = 1e-12);
        assert!(res.broken.contains("plane"));

        // far below threshold the reflection is nearly perfect
        let p = tv(&base, &[0.0, 0.0, -2e-6]);
        let res = law(2.0).apply(&p, &ctx).unwrap();
        assert_relative_eq!(res.p_right.spatial[2], 2e-6, max_relative = 1e-11);
        assert!(res.broken.is_empty());

        assert!(matches!(
            law(0.0).apply(&tv(&base, &[0.0, 0.0, -1.0]), &ctx),
            Err(Error::LawParameter { .. })
        ));
    }

    #[test]
    fn breakable_lowspeed_regimes() {
        let base = pt(0.0, &[0.0, 0.0, 0.0]);
        let ctx = plane_ctx(&[1.0, 1.0, 1.0], &base);
        let law = |xi: f64| ConstitutiveLaw::BreakableLowSpeed {
            threshold: LawParam::constant(xi),
        };

        // at the threshold: totally inelastic
        let p = tv(&base, &[0.0, 0.0, -2.0]);
        let res = law(2.0).apply(&p, &ctx).unwrap();
        assert_relative_eq!(res.p_right.spatial[2], 0.0, epsilon = 1e-12);
        assert!(res.broken.is_empty());

        // below threshold: λ = 0.4 at ‖vperp‖ = Ξ/2; surface yields
        let p = tv(&base, &[0.0, 0.0, -1.0]);
        let res = law(2.0).apply(&p, &ctx).unwrap();
        assert_relative_eq!(res.p_right.spatial[2], -0.6, epsilon = 1e-12);
        assert!(res.broken.contains("plane"));

        // fast entries reflect almost perfectly
        let p = tv(&base, &[0.0, 0.0, -200.0]);
        let res = law(2.0).apply(&p, &ctx).unwrap();
        assert_relative_eq!(res.p_right.spatial[2], 200.0, max_relative = 1e-3);
        assert!(res.broken.is_empty());
    }

    #[test]
    fn breakable_laws_coincide_with_totally_inelastic_at_the_threshold() {
        let base = pt(0.0, &[0.0, 0.0, 0.0]);
        let ctx = plane_ctx(&[2.0, 1.0, 3.0], &base);
        let p = tv(&base, &[0.3, -0.2, -0.9814]);
        // the threshold case means ‖velort‖ = Ξ bitwise
        let split = crate::split::split_positional(&p, &ctx.positional[0], &ctx.metric).unwrap();
        let xi = ctx.metric.norm(&split.vperp).unwrap();
        let inelastic = ConstitutiveLaw::TotallyInelastic.apply(&p, &ctx).unwrap();
        for law in [
            ConstitutiveLaw::BreakableSaturating {
                threshold: LawParam::constant(xi),
            },
            ConstitutiveLaw::BreakableLowSpeed {
                threshold: LawParam::constant(xi),
            },
        ] {
            let res = law.apply(&p, &ctx).unwrap();
            assert_relative_eq!(
                (res.p_right.spatial.clone() - &inelastic.p_right.spatial).norm(),
                0.0,
                epsilon = 1e-12
            );
            assert!(res.broken.is_empty());
        }
    }

    #[test]
    fn disk_wall_keeps_rolling_below_the_threshold() {
        let (m, i0, r, thdot) = (2.0, 0.25, 0.5, -1.0);
        let (ctx, base) = disk_ctx(m, i0, r);
        let p_left = tv(&base, &[-r * thdot, thdot]); // ẋ = +0.5 toward the wall
        let law = ConstitutiveLaw::DiskWallBreakable {
            eps_contact: LawParam::constant(1.0),
            eps_break: LawParam::constant(1.0),
            threshold: LawParam::constant(1.0), // ‖vperp_S‖ = √M·|ẋ| ≈ 0.707 ≤ 1
        };
        let res = law.apply(&p_left, &ctx).unwrap();
        assert_relative_eq!(res.p_right.spatial[0], r * thdot, epsilon = 1e-12);
        assert_relative_eq!(res.p_right.spatial[1], -thdot, epsilon = 1e-12);
        assert!(res.broken.is_empty());
        // rolling survives
        let (ok, _) = ctx.permanent[0].satisfies(&res.p_right, 1e-10).unwrap();
        assert!(ok);
    }

    #[test]
    fn disk_wall_breaks_rolling_above_the_threshold() {
        let (m, i0, r, thdot) = (2.0, 0.25, 0.5, -1.0);
        let (ctx, base) = disk_ctx(m, i0, r);
        let p_left = tv(&base, &[-r * thdot, thdot]);
        let law = ConstitutiveLaw::DiskWallBreakable {
            eps_contact: LawParam::constant(1.0),
            eps_break: LawParam::constant(1.0),
            threshold: LawParam::constant(0.5), // ‖vperp_S‖ ≈ 0.707 > 0.5
        };
        let res = law.apply(&p_left, &ctx).unwrap();
        // x reversed, spin kept, rolling broken
        assert_relative_eq!(res.p_right.spatial[0], r * thdot, epsilon = 1e-12);
        assert_relative_eq!(res.p_right.spatial[1], thdot, epsilon = 1e-12);
        assert!(res.broken.contains("rolling"));
        let (ok, _) = ctx.permanent[0].satisfies(&res.p_right, 1e-10).unwrap();
        assert!(!ok);
    }

    #[test]
    fn disk_wall_with_infinite_threshold_is_the_joint_reflection() {
        let (ctx, base) = disk_ctx(2.0, 0.25, 0.5);
        let p_left = tv(&base, &[0.5, -1.0]);
        let law = ConstitutiveLaw::DiskWallBreakable {
            eps_contact: LawParam::constant(1.0),
            eps_break: LawParam::constant(1.0),
            threshold: LawParam::constant(f64::INFINITY),
        };
        let reflection = ConstitutiveLaw::IdealReflection {
            target: ReflectionTarget::WithPermanent,
        };
        let a = law.apply(&p_left, &ctx).unwrap();
        let b = reflection.apply(&p_left, &ctx).unwrap();
        assert_relative_eq!(
            (a.p_right.spatial - b.p_right.spatial).norm(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn disk_wall_conserves_energy_in_rest_frames_at_unit_restitution() {
        let (m, i0, r, thdot) = (2.0, 0.25, 0.5, -1.0);
        let (ctx, base) = disk_ctx(m, i0, r);
        let p_left = tv(&base, &[-r * thdot, thdot]);
        // below threshold: rest frames of S ∩ A reduce to the chart frame
        let below = ConstitutiveLaw::DiskWallBreakable {
            eps_contact: LawParam::constant(1.0),
            eps_break: LawParam::constant(1.0),
            threshold: LawParam::constant(10.0),
        }
        .apply(&p_left, &ctx)
        .unwrap();
        let rest = FrameField::chart_rest(2);
        let kl = kinetic_energy(&p_left, &rest, &ctx.metric).unwrap();
        let kr = kinetic_energy(&below.p_right, &rest, &ctx.metric).unwrap();
        assert_relative_eq!(kl, kr, epsilon = 1e-10);
        // above threshold: every rest frame of S (x-component zero) works
        let above = ConstitutiveLaw::DiskWallBreakable {
            eps_contact: LawParam::constant(1.0),
            eps_break: LawParam::constant(1.0),
            threshold: LawParam::constant(0.1),
        }
        .apply(&p_left, &ctx)
        .unwrap();
        for hth in [0.0, 0.9, -1.7] {
            let h = FrameField::constant(DVector::from_row_slice(&[0.0, hth]));
            let kl = kinetic_energy(&p_left, &h, &ctx.metric).unwrap();
            let kr = kinetic_energy(&above.p_right, &h, &ctx.metric).unwrap();
            assert_relative_eq!(kl, kr, epsilon = 1e-10);
        }
    }

    fn coaster_system(m: f64, ith: f64, iph: f64, r: f64) -> (ImpactContext, SpacetimePoint) {
        let base = pt(0.0, &[0.0, 0.0, 0.0, 0.0]);
        let rows = vec![
            KineticRow::equality(
                VectorField::from_fn(move |pt| {
                    Ok(DVector::from_row_slice(&[1.0, 0.0, 0.0, r * pt.x[2].cos()]))
                }),
                ScalarField::constant(0.0),
            ),
            KineticRow::equality(
                VectorField::from_fn(move |pt| {
                    Ok(DVector::from_row_slice(&[0.0, 1.0, 0.0, r * pt.x[2].sin()]))
                }),
                ScalarField::constant(0.0),
            ),
            KineticRow {
                a: VectorField::constant(DVector::from_row_slice(&[0.0, 0.0, 0.0, 1.0])),
                b: ScalarField::constant(0.0),
                relation: RowRelation::NonNegative,
            },
        ];
        let a = KineticConstraint::permanent("coaster", rows);
        let ctx = ImpactContext::new(
            base.clone(),
            MassMetric::diagonal(&[m, m, ith, iph]),
            vec![],
            vec![a],
            vec![],
            1e-9,
            1e-7,
        )
        .unwrap();
        (ctx, base)
    }

    #[test]
    fn inelastic_clamp_projects_the_coaster_disk() {
        let r = 0.7;
        let (ctx, base) = coaster_system(1.0, 0.1, 0.05, r);
        // rolling backwards: φ̇ = −1, rows force ẋ = R, ẏ = 0 at ϑ = 0
        let p_left = tv(&base, &[r, 0.0, 0.3, -1.0]);
        let res = ConstitutiveLaw::InelasticClamp.apply(&p_left, &ctx).unwrap();
        assert_relative_eq!(res.p_right.spatial[3], 0.0, epsilon = 1e-12); // φ̇ clamped
        assert_relative_eq!(res.p_right.spatial[0], 0.0, epsilon = 1e-12); // ẋ follows
        assert_relative_eq!(res.p_right.spatial[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(res.p_right.spatial[2], 0.3, epsilon = 1e-12); // ϑ̇ untouched
        let (ok, _) = ctx.permanent[0].satisfies(&res.p_right, 1e-10).unwrap();
        assert!(ok);
    }

    #[test]
    fn inelastic_clamp_is_the_identity_on_admissible_velocities() {
        let r = 0.7;
        let (ctx, base) = coaster_system(1.0, 0.1, 0.05, r);
        let p_left = tv(&base, &[-r, 0.0, 0.3, 1.0]);
        let res = ConstitutiveLaw::InelasticClamp.apply(&p_left, &ctx).unwrap();
        assert_eq!(res.p_right.spatial, p_left.spatial);
        assert_relative_eq!(res.impulse.components.norm(), 0.0);
    }

    #[test]
    fn inelastic_clamp_single_row_correction_norm() {
        // one violated row a·p + b = −δ: the correction has Φ-norm δ/‖a‖_{g⁻¹}
        let base = pt(0.0, &[0.0, 0.0]);
        let g = MassMetric::diagonal(&[2.0, 5.0]);
        let a_cov = DVector::from_row_slice(&[1.0, 3.0]);
        let delta = 0.8;
        let row = KineticRow {
            a: VectorField::constant(a_cov.clone()),
            b: ScalarField::constant(0.0),
            relation: RowRelation::NonNegative,
        };
        let constraint = KineticConstraint::permanent("row", vec![row]);
        let ctx = ImpactContext::new(
            base.clone(),
            g.clone(),
            vec![],
            vec![constraint],
            vec![],
            1e-9,
            1e-7,
        )
        .unwrap();
        // choose p with a·p = −δ
        let p_left = tv(&base, &[-delta, 0.0]);
        let res = ConstitutiveLaw::InelasticClamp.apply(&p_left, &ctx).unwrap();
        let g_inv_norm = (a_cov.transpose() * g.inverse_at(&base).unwrap() * &a_cov)[(0, 0)]
            .sqrt();
        let correction = SpacelikeVector::new(base.clone(), res.impulse.components.clone());
        assert_relative_eq!(
            g.norm(&correction).unwrap(),
            delta / g_inv_norm,
            epsilon = 1e-12
        );
        let (ok, _) = ctx.permanent[0].satisfies(&res.p_right, 1e-10).unwrap();
        assert!(ok);
    }

    #[test]
    fn laws_are_deterministic() {
        let (ctx, base) = rod_ctx(1.0, 1.0);
        let p_left = tv(&base, &[0.1, -1.0, 0.2]);
        let law = ConstitutiveLaw::NewtonRestitution {
            eps: LawParam::constant(0.37),
        };
        let a = law.apply(&p_left, &ctx).unwrap();
        let b = law.apply(&p_left, &ctx).unwrap();
        assert_eq!(a.p_right.spatial, b.p_right.spatial);
        assert_eq!(a.impulse.components, b.impulse.components);
    }

    #[test]
    fn resolutions_are_spacelike_and_based_at_the_impact_point() {
        let (ctx, base) = rod_ctx(1.0, 1.0);
        let p_left = tv(&base, &[0.1, -1.0, 0.2]);
        let res = ConstitutiveLaw::TotallyInelastic.apply(&p_left, &ctx).unwrap();
        assert_eq!(res.impulse.base, base);
        assert_eq!(res.p_right.base, base);
    }

    #[test]
    fn validate_resolution_rejects_entering_outputs() {
        let (ctx, base) = rod_ctx(1.0, 1.0);
        let p_left = tv(&base, &[0.0, -1.0, 0.0]);
        let res = ImpactResolution {
            impulse: SpacelikeVector::zero(base.clone()),
            p_right: p_left.clone(),
            broken: BTreeSet::new(),
            vperp_norm: 1.0,
        };
        assert!(matches!(
            validate_resolution("broken_law", &p_left, &res, &ctx),
            Err(Error::LawContract { .. })
        ));
    }

    #[test]
    fn law_params_can_reference_the_force_magnitude() {
        // threshold scaled by the weight: xi = zforce
        let base = pt(0.0, &[0.0, 0.0, 0.0]);
        let mut ctx = plane_ctx(&[1.0, 1.0, 1.0], &base);
        ctx = ctx.with_force_value(SpacelikeVector::new(
            base.clone(),
            DVector::from_row_slice(&[0.0, 0.0, -2.0]),
        ));
        let coords: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let bind = crate::expr::BindContext::new(&coords)
            .with_dots()
            .with_extras(&LAW_EXTRAS);
        let xi = LawParam::Expr(crate::expr::compile("zforce", &bind).unwrap());
        let law = ConstitutiveLaw::BreakableSaturating { threshold: xi };
        // zforce = 2: entering at 3 exceeds it → broken
        let p = tv(&base, &[0.0, 0.0, -3.0]);
        let res = law.apply(&p, &ctx).unwrap();
        assert!(res.broken.contains("plane"));
        // entering at 1 stays below → rebound
        let p = tv(&base, &[0.0, 0.0, -1.0]);
        let res = law.apply(&p, &ctx).unwrap();
        assert!(res.broken.is_empty());
        // without a force value the reference is an error
        let ctx2 = plane_ctx(&[1.0, 1.0, 1.0], &base);
        let law2 = ConstitutiveLaw::BreakableSaturating {
            threshold: LawParam::Expr(
                crate::expr::compile("zforce", &bind).unwrap(),
            ),
        };
        assert!(matches!(
            law2.apply(&tv(&base, &[0.0, 0.0, -1.0]), &ctx2),
            Err(Error::LawParameter { .. })
        ));
    }
}
