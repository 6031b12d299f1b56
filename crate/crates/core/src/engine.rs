//! Event-driven simulation: smooth integration under the force section,
//! impact detection by constraint sign change, impulsive resolution.
//!
//! Motion alternates between smooth phases (fixed-step RK4 on
//! `ẍⁱ = Zⁱ(t, x, ẋ)` with velocity post-stabilization onto the unbroken
//! permanent kinetic rows) and isolated impact instants, located by bisection
//! on the linearly interpolated trajectory and resolved algebraically by the
//! constitutive laws.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;

use crate::constitutive::{
    energy_restitution_table, validate_resolution, ConstitutiveLaw, FrameEnergy, ImpactContext,
    ImpactResolution, ReflectionTarget,
};
use crate::constraint::{KineticConstraint, PositionalConstraint};
use crate::error::{Error, Result};
use crate::geometry::{
    ForceSection, FrameField, MassMetric, SpacelikeVector, SpacetimePoint, TimelikeVelocity,
};
use crate::split::{classify_multiple, orthogonal_split, split_commutation_residual, VelocityClass};

/// Fixed-step integrator and event-location settings.
#[derive(Debug, Clone)]
pub struct IntegratorConfig {
    pub h_step: f64,
    pub t_end: f64,
    /// Impact bisection time tolerance.
    pub t_tol: f64,
    pub max_events: usize,
    /// Allowed post-stabilization residual on permanent kinetic rows.
    pub drift_tol: f64,
    /// Allowed unilateral penetration along the trajectory.
    pub penetration_tol: f64,
    /// Contact/classification margin band.
    pub tangency_tol: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            h_step: 1e-3,
            t_end: 1.0,
            t_tol: 1e-10,
            max_events: 1000,
            drift_tol: 1e-9,
            penetration_tol: 1e-8,
            tangency_tol: 1e-9,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let all_positive = self.h_step > 0.0
            && self.t_tol > 0.0
            && self.max_events > 0
            && self.drift_tol > 0.0
            && self.penetration_tol > 0.0
            && self.tangency_tol > 0.0;
        if all_positive {
            Ok(())
        } else {
            Err(Error::schema("integrator", "all settings must be positive"))
        }
    }
}

/// One active impulse scripted to fire at a fixed instant.
#[derive(Debug, Clone)]
pub struct ScriptedImpulse {
    pub time: f64,
    pub components: DVector<f64>,
    /// Key into the law table; defaults to the ideal active-impulse response
    /// (or the free impulse balance when no kinetic constraint is active).
    pub law: Option<String>,
}

/// A mechanical system ready to simulate.
#[derive(Debug, Clone)]
pub struct System {
    pub coords: Vec<String>,
    pub metric: MassMetric,
    pub positional: Vec<PositionalConstraint>,
    pub kinetic: Vec<KineticConstraint>,
    /// Laws keyed by constraint name; the key `multiple` resolves
    /// simultaneous impacts on several constraints.
    pub laws: BTreeMap<String, ConstitutiveLaw>,
    pub frames: BTreeMap<String, FrameField>,
    /// Frames reported in per-event energy/commutation diagnostics.
    pub energy_frames: Vec<String>,
    pub force: Option<ForceSection>,
    pub initial: TimelikeVelocity,
    pub config: IntegratorConfig,
    pub impulses: Vec<ScriptedImpulse>,
    /// Trajectory sampling cadence in accepted steps.
    pub sample_every: usize,
}

impl System {
    pub fn law_for(&self, constraint: &str) -> ConstitutiveLaw {
        if let Some(law) = self.laws.get(constraint) {
            return law.clone();
        }
        if self.positional.iter().any(|s| s.name == constraint) {
            ConstitutiveLaw::IdealReflection {
                target: ReflectionTarget::Positional,
            }
        } else {
            ConstitutiveLaw::InelasticClamp
        }
    }

    pub fn multiple_law(&self) -> ConstitutiveLaw {
        self.laws
            .get("multiple")
            .cloned()
            .unwrap_or(ConstitutiveLaw::IdealReflection {
                target: ReflectionTarget::Positional,
            })
    }

    fn contact_tol(&self) -> f64 {
        self.config.penetration_tol.max(100.0 * self.config.tangency_tol)
    }

    fn frame(&self, name: &str) -> Result<&FrameField> {
        self.frames.get(name).ok_or_else(|| {
            Error::schema(format!("frames.{name}"), "frame is not defined")
        })
    }
}

/// Instantaneous simulation state.
#[derive(Debug, Clone)]
pub struct SimState {
    pub velocity: TimelikeVelocity,
    pub broken: BTreeSet<String>,
    pub step: usize,
}

/// One trajectory sample.
#[derive(Debug, Clone)]
pub struct Sample {
    pub t: f64,
    pub x: DVector<f64>,
    pub xdot: DVector<f64>,
}

/// Timestamped record of one resolved impact.
#[derive(Debug, Clone)]
pub struct ImpactEvent {
    pub index: usize,
    pub time: f64,
    pub point: SpacetimePoint,
    pub p_left: TimelikeVelocity,
    pub i_act: Option<SpacelikeVector>,
    pub i_react: SpacelikeVector,
    pub p_right: TimelikeVelocity,
    pub law: String,
    /// Names of the constraints the event was resolved against.
    pub constraints: Vec<String>,
    /// Constraints newly broken by this event.
    pub broken: BTreeSet<String>,
    pub vperp_norm: f64,
    /// Kinetic energies before/after per configured frame.
    pub energy: BTreeMap<String, FrameEnergy>,
    /// Rest-frame commutation residual per configured frame, against the
    /// first involved positional constraint.
    pub commutation: BTreeMap<String, f64>,
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndReason {
    TimeReached,
    MaxEvents,
}

/// Full output of a run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub samples: Vec<Sample>,
    pub events: Vec<ImpactEvent>,
    pub end: EndReason,
    /// Largest stabilization correction applied during smooth phases.
    pub max_drift: f64,
    /// Smallest oriented unilateral margin seen along the trajectory.
    pub min_margin: f64,
}

// ---------------------------------------------------------------------------
// Smooth phase
// ---------------------------------------------------------------------------

fn acceleration(system: &System, t: f64, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    match &system.force {
        Some(f) => f.acceleration(&SpacetimePoint::new(t, x.clone()), v),
        None => Ok(DVector::zeros(x.len())),
    }
}

fn rk4_step(
    system: &System,
    t: f64,
    x: &DVector<f64>,
    v: &DVector<f64>,
    h: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let k1x = v.clone();
    let k1v = acceleration(system, t, x, v)?;
    let k2x = v + &k1v * (h / 2.0);
    let k2v = acceleration(system, t + h / 2.0, &(x + &k1x * (h / 2.0)), &k2x)?;
    let k3x = v + &k2v * (h / 2.0);
    let k3v = acceleration(system, t + h / 2.0, &(x + &k2x * (h / 2.0)), &k3x)?;
    let k4x = v + &k3v * h;
    let k4v = acceleration(system, t + h, &(x + &k3x * h), &k4x)?;
    let x1 = x + (k1x + &k2x * 2.0 + &k3x * 2.0 + k4x) * (h / 6.0);
    let v1 = v + (k1v + &k2v * 2.0 + &k3v * 2.0 + k4v) * (h / 6.0);
    Ok((x1, v1))
}

/// Project a velocity onto the unbroken permanent kinetic equality rows,
/// returning the corrected velocity and the Φ-norm of the correction.
fn stabilize(
    system: &System,
    broken: &BTreeSet<String>,
    pt: &SpacetimePoint,
    v: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let mut rows = Vec::new();
    for a in system
        .kinetic
        .iter()
        .filter(|a| a.kind == crate::constraint::KineticKind::Permanent && !broken.contains(&a.name))
    {
        rows.extend(a.equality_rows_at(pt)?);
    }
    if rows.is_empty() {
        return Ok((v.clone(), 0.0));
    }
    let p = TimelikeVelocity::new(pt.clone(), v.clone());
    let split = orthogonal_split(&p, &rows, &system.metric, "velocity stabilization")?;
    let drift = system.metric.norm(&split.vperp)?;
    Ok((split.parallel.spatial, drift))
}

/// One smooth step: RK4 advance then velocity post-stabilization.
pub fn smooth_step(system: &System, state: &SimState, h: f64) -> Result<(SimState, f64)> {
    let t = state.velocity.base.t;
    let (x1, v1_raw) = rk4_step(system, t, &state.velocity.base.x, &state.velocity.spatial, h)?;
    let pt = SpacetimePoint::new(t + h, x1);
    if !pt.is_finite() || !v1_raw.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFiniteState { t: t + h });
    }
    let (v1, drift) = stabilize(system, &state.broken, &pt, &v1_raw)?;
    Ok((
        SimState {
            velocity: TimelikeVelocity::new(pt, v1),
            broken: state.broken.clone(),
            step: state.step + 1,
        },
        drift,
    ))
}

// ---------------------------------------------------------------------------
// Event location
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
enum CrossKind {
    Positional(usize),
    KineticRow(usize, usize),
}

#[derive(Debug, Clone)]
struct Crossing {
    kind: CrossKind,
    time: f64,
}

struct Interpolant<'a> {
    t0: f64,
    t1: f64,
    x0: &'a DVector<f64>,
    x1: &'a DVector<f64>,
    v0: &'a DVector<f64>,
    v1: &'a DVector<f64>,
}

impl Interpolant<'_> {
    fn at(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        let alpha = if self.t1 > self.t0 {
            ((t - self.t0) / (self.t1 - self.t0)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (
            self.x0 + (self.x1 - self.x0) * alpha,
            self.v0 + (self.v1 - self.v0) * alpha,
        )
    }
}

/// Oriented positional margin `sign·f_ρ` at a point.
fn oriented_margin(s: &PositionalConstraint, rho: usize, pt: &SpacetimePoint) -> Result<f64> {
    let sign = s.orientations[rho].ok_or(Error::MissingOrientation {
        constraint: s.name.clone(),
        row: rho,
    })?;
    Ok(sign * s.funcs[rho].value(pt)?)
}

fn bisect<F>(value: F, t0: f64, t1: f64, level: f64, t_tol: f64, what: &str) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut a = t0;
    let mut b = t1;
    if value(a)? < level {
        return Ok(a);
    }
    for _ in 0..200 {
        if b - a <= t_tol {
            return Ok(a);
        }
        let mid = 0.5 * (a + b);
        if value(mid)? >= level {
            a = mid;
        } else {
            b = mid;
        }
    }
    Err(Error::BisectionFailed {
        constraint: what.to_string(),
        t0,
        t1,
    })
}

/// Locate the earliest constraint crossing between two consecutive states on
/// the linearly interpolated trajectory. Crossings within `t_tol` of the
/// earliest are reported together (simultaneous event).
fn locate_crossings(
    system: &System,
    broken: &BTreeSet<String>,
    interp: &Interpolant<'_>,
) -> Result<Vec<Crossing>> {
    let cfg = &system.config;
    let mut found: Vec<Crossing> = Vec::new();

    // positional unilateral rows: leave the admissible side of sign·f = 0
    for (ci, s) in system.positional.iter().enumerate() {
        if broken.contains(&s.name) {
            continue;
        }
        let mut earliest: Option<f64> = None;
        for rho in 0..s.codim() {
            if !s.unilateral[rho] {
                continue;
            }
            let val = |t: f64| -> Result<f64> {
                let (x, _) = interp.at(t);
                oriented_margin(s, rho, &SpacetimePoint::new(t, x))
            };
            let v0 = val(interp.t0)?;
            let v1 = val(interp.t1)?;
            if v0 >= -cfg.tangency_tol && v1 < -cfg.tangency_tol && v1 < v0 {
                let tau = bisect(&val, interp.t0, interp.t1, 0.0, cfg.t_tol, &s.name)?;
                earliest = Some(match earliest {
                    Some(prev) => prev.min(tau),
                    None => tau,
                });
            }
        }
        if let Some(tau) = earliest {
            found.push(Crossing {
                kind: CrossKind::Positional(ci),
                time: tau,
            });
        }
    }

    // unilateral kinetic rows of unbroken permanent constraints: the margin
    // is bisected slightly past zero so the clamp sees a definite violation
    let cross_level = -2.0 * cfg.tangency_tol;
    for (ci, a) in system.kinetic.iter().enumerate() {
        if a.kind != crate::constraint::KineticKind::Permanent || broken.contains(&a.name) {
            continue;
        }
        for (ri, row) in a.rows.iter().enumerate() {
            if row.relation != crate::constraint::RowRelation::NonNegative {
                continue;
            }
            let val = |t: f64| -> Result<f64> {
                let (x, v) = interp.at(t);
                let r = row.at(&SpacetimePoint::new(t, x))?;
                Ok(r.residual(&v))
            };
            let v0 = val(interp.t0)?;
            let v1 = val(interp.t1)?;
            if v0 >= cross_level && v1 < cross_level && v1 < v0 {
                let tau = bisect(&val, interp.t0, interp.t1, cross_level, cfg.t_tol, &a.name)?;
                found.push(Crossing {
                    kind: CrossKind::KineticRow(ci, ri),
                    time: tau,
                });
            }
        }
    }

    if found.is_empty() {
        return Ok(found);
    }
    let earliest = found
        .iter()
        .map(|c| c.time)
        .fold(f64::INFINITY, f64::min);
    found.retain(|c| c.time <= earliest + cfg.t_tol);
    Ok(found)
}

// ---------------------------------------------------------------------------
// Event resolution
// ---------------------------------------------------------------------------

fn build_context(
    system: &System,
    broken: &BTreeSet<String>,
    point: &SpacetimePoint,
    active_positional: &[usize],
    law: &ConstitutiveLaw,
    p_left: &TimelikeVelocity,
) -> Result<ImpactContext> {
    let positional: Vec<PositionalConstraint> = active_positional
        .iter()
        .map(|&i| system.positional[i].clone())
        .collect();
    let active_names: BTreeSet<&str> = positional.iter().map(|s| s.name.as_str()).collect();
    let permanent: Vec<KineticConstraint> = system
        .kinetic
        .iter()
        .filter(|a| a.kind == crate::constraint::KineticKind::Permanent && !broken.contains(&a.name))
        .cloned()
        .collect();
    let instantaneous: Vec<KineticConstraint> = system
        .kinetic
        .iter()
        .filter(|b| match &b.kind {
            crate::constraint::KineticKind::Instantaneous { owner } => {
                active_names.contains(owner.as_str()) && !broken.contains(&b.name)
            }
            _ => false,
        })
        .cloned()
        .collect();
    let mut ctx = ImpactContext::new(
        point.clone(),
        system.metric.clone(),
        positional,
        permanent,
        instantaneous,
        system.config.tangency_tol,
        system.contact_tol(),
    )?;
    if let Some(force) = &system.force {
        ctx = ctx.with_force_value(force.value_along(p_left)?);
    }
    if let ConstitutiveLaw::RestFrameFriction { frame, .. } = law {
        ctx = ctx.with_rest_frame(frame.clone(), system.frame(frame)?.clone());
    }
    Ok(ctx)
}

fn diagnostics(
    system: &System,
    p_left: &TimelikeVelocity,
    p_right: &TimelikeVelocity,
    first_constraint: Option<&PositionalConstraint>,
) -> Result<(BTreeMap<String, FrameEnergy>, BTreeMap<String, f64>)> {
    let mut frames = BTreeMap::new();
    for name in &system.energy_frames {
        frames.insert(name.clone(), system.frame(name)?.clone());
    }
    let energy = energy_restitution_table(p_left, p_right, &frames, &system.metric)?;
    let mut commutation = BTreeMap::new();
    if let Some(s) = first_constraint {
        for (name, h) in &frames {
            commutation.insert(
                name.clone(),
                split_commutation_residual(p_left, h, s, &system.metric)?,
            );
        }
    }
    Ok((energy, commutation))
}

#[allow(clippy::too_many_arguments)]
fn finish_event(
    system: &System,
    index: usize,
    p_left: &TimelikeVelocity,
    i_act: Option<SpacelikeVector>,
    res: ImpactResolution,
    law_tag: String,
    constraints: Vec<String>,
    first_constraint: Option<&PositionalConstraint>,
) -> Result<ImpactEvent> {
    let (energy, commutation) = diagnostics(system, p_left, &res.p_right, first_constraint)?;
    Ok(ImpactEvent {
        index,
        time: p_left.base.t,
        point: p_left.base.clone(),
        p_left: p_left.clone(),
        i_act,
        i_react: res.impulse,
        p_right: res.p_right,
        law: law_tag,
        constraints,
        broken: res.broken,
        vperp_norm: res.vperp_norm,
        energy,
        commutation,
    })
}

/// Check that the resolved right velocity respects the unbroken permanent
/// kinetic equality rows.
fn check_post_kinetic(
    system: &System,
    broken_after: &BTreeSet<String>,
    p_right: &TimelikeVelocity,
    law_tag: &str,
) -> Result<()> {
    for a in system
        .kinetic
        .iter()
        .filter(|a| a.kind == crate::constraint::KineticKind::Permanent && !broken_after.contains(&a.name))
    {
        for row in a.equality_rows_at(&p_right.base)? {
            let r = row.residual(&p_right.spatial);
            if r.abs() > 1e3 * system.config.drift_tol {
                return Err(Error::LawContract {
                    law: law_tag.into(),
                    msg: format!(
                        "right velocity violates `{}` (residual {r:.3e})",
                        a.name
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Resolve an impact of `p_left` against the named positional constraints
/// (plus whatever kinetic constraints are active) using the configured laws.
pub fn resolve_positional_event(
    system: &System,
    broken: &BTreeSet<String>,
    p_left: &TimelikeVelocity,
    active_positional: &[usize],
    i_act: Option<SpacelikeVector>,
    index: usize,
) -> Result<ImpactEvent> {
    let law = if active_positional.len() == 1 {
        system.law_for(&system.positional[active_positional[0]].name)
    } else {
        system.multiple_law()
    };
    let mut ctx = build_context(system, broken, &p_left.base, active_positional, &law, p_left)?;
    if let Some(ia) = &i_act {
        ctx = ctx.with_active_impulse(ia.clone())?;
    }
    let res = law.apply(p_left, &ctx)?;
    validate_resolution(law.tag(), p_left, &res, &ctx)?;
    let mut broken_after = broken.clone();
    broken_after.extend(res.broken.iter().cloned());
    check_post_kinetic(system, &broken_after, &res.p_right, law.tag())?;
    let names: Vec<String> = active_positional
        .iter()
        .map(|&i| system.positional[i].name.clone())
        .collect();
    let first = Some(&system.positional[active_positional[0]]);
    finish_event(system, index, p_left, i_act, res, law.tag().into(), names, first)
}

fn resolve_kinetic_event(
    system: &System,
    broken: &BTreeSet<String>,
    p_left: &TimelikeVelocity,
    constraint_idx: usize,
    index: usize,
) -> Result<ImpactEvent> {
    let name = system.kinetic[constraint_idx].name.clone();
    let law = system.law_for(&name);
    let ctx = build_context(system, broken, &p_left.base, &[], &law, p_left)?;
    let res = law.apply(p_left, &ctx)?;
    validate_resolution(law.tag(), p_left, &res, &ctx)?;
    // the clamp must land on the admissible set
    for a in &ctx.permanent {
        let (ok, margins) = a.satisfies(&res.p_right, 10.0 * system.config.tangency_tol)?;
        if !ok {
            return Err(Error::LawContract {
                law: law.tag().into(),
                msg: format!("right velocity violates `{}` (margins {margins:?})", a.name),
            });
        }
    }
    finish_event(system, index, p_left, None, res, law.tag().into(), vec![name], None)
}

fn resolve_impulse_event(
    system: &System,
    broken: &BTreeSet<String>,
    p_left: &TimelikeVelocity,
    impulse: &ScriptedImpulse,
    index: usize,
) -> Result<ImpactEvent> {
    let i_act = SpacelikeVector::new(p_left.base.clone(), impulse.components.clone());
    // active contacts participate in the resolution
    let mut active = Vec::new();
    for (i, s) in system.positional.iter().enumerate() {
        if !broken.contains(&s.name) && s.contact(&p_left.base, system.contact_tol())?.0 {
            active.push(i);
        }
    }
    if !active.is_empty() {
        return resolve_positional_event(system, broken, p_left, &active, Some(i_act), index);
    }
    let has_permanent = system.kinetic.iter().any(|a| {
        a.kind == crate::constraint::KineticKind::Permanent && !broken.contains(&a.name)
    });
    let law = match (&impulse.law, has_permanent) {
        (Some(key), _) => Some(system.laws.get(key).cloned().ok_or_else(|| {
            Error::schema(format!("impulses.law = {key}"), "law key is not defined")
        })?),
        (None, true) => Some(ConstitutiveLaw::KineticIdeal {
            target: crate::constitutive::ActiveIdealTarget::Kinetic,
        }),
        (None, false) => None,
    };
    match law {
        Some(law) => {
            let ctx = build_context(system, broken, &p_left.base, &[], &law, p_left)?
                .with_active_impulse(i_act.clone())?;
            let res = law.apply(p_left, &ctx)?;
            validate_resolution(law.tag(), p_left, &res, &ctx)?;
            let mut broken_after = broken.clone();
            broken_after.extend(res.broken.iter().cloned());
            check_post_kinetic(system, &broken_after, &res.p_right, law.tag())?;
            finish_event(system, index, p_left, Some(i_act), res, law.tag().into(), vec![], None)
        }
        None => {
            // free impulsive balance: p_R = p_L + I_act
            let p_right = p_left.shift(&i_act)?;
            let res = ImpactResolution {
                impulse: SpacelikeVector::zero(p_left.base.clone()),
                p_right,
                broken: BTreeSet::new(),
                vperp_norm: 0.0,
            };
            finish_event(system, index, p_left, Some(i_act), res, "free".into(), vec![], None)
        }
    }
}

/// Resolve one impact at an explicit state, against whatever constraints are
/// active there (the single-event entry point behind the `impact` command).
pub fn single_impact(
    system: &System,
    p_left: &TimelikeVelocity,
    i_act: Option<DVector<f64>>,
) -> Result<ImpactEvent> {
    let broken = BTreeSet::new();
    let mut active = Vec::new();
    for (i, s) in system.positional.iter().enumerate() {
        if s.contact(&p_left.base, system.contact_tol())?.0 {
            active.push(i);
        }
    }
    if !active.is_empty() {
        let ia = i_act.map(|c| SpacelikeVector::new(p_left.base.clone(), c));
        return resolve_positional_event(system, &broken, p_left, &active, ia, 0);
    }
    let violated = system
        .kinetic
        .iter()
        .position(|a| {
            a.kind == crate::constraint::KineticKind::Permanent
                && !a
                    .violated_rows(p_left, system.config.tangency_tol)
                    .map(|v| v.is_empty())
                    .unwrap_or(true)
        });
    if let Some(ci) = violated {
        return resolve_kinetic_event(system, &broken, p_left, ci, 0);
    }
    if let Some(components) = i_act {
        let imp = ScriptedImpulse {
            time: p_left.base.t,
            components,
            law: None,
        };
        return resolve_impulse_event(system, &broken, p_left, &imp, 0);
    }
    let nearest = system
        .positional
        .iter()
        .map(|s| Ok((s.name.clone(), s.max_violation(&p_left.base)?)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1));
    match nearest {
        Some((constraint, residual)) => Err(Error::NotOnConstraint {
            constraint,
            residual,
        }),
        None => Err(Error::Precondition {
            law: "impact".into(),
            msg: "the scenario declares no constraints and no impulse was supplied".into(),
        }),
    }
}

// ---------------------------------------------------------------------------
// The run loop
// ---------------------------------------------------------------------------

fn sample_of(state: &SimState) -> Sample {
    Sample {
        t: state.velocity.base.t,
        x: state.velocity.base.x.clone(),
        xdot: state.velocity.spatial.clone(),
    }
}

/// Smallest oriented unilateral margin over the unbroken positional rows.
fn min_positional_margin(
    system: &System,
    broken: &BTreeSet<String>,
    pt: &SpacetimePoint,
) -> Result<f64> {
    let mut min = f64::INFINITY;
    for s in system.positional.iter().filter(|s| !broken.contains(&s.name)) {
        for rho in 0..s.codim() {
            if s.unilateral[rho] && s.orientations[rho].is_some() {
                min = min.min(oriented_margin(s, rho, pt)?);
            }
        }
    }
    Ok(min)
}

/// Run the event-driven simulation to the configured end time.
pub fn run(system: &System) -> Result<RunResult> {
    let cfg = system.config.clone();
    cfg.validate()?;
    let mut state = SimState {
        velocity: system.initial.clone(),
        broken: BTreeSet::new(),
        step: 0,
    };
    let mut events: Vec<ImpactEvent> = Vec::new();
    let mut samples = vec![sample_of(&state)];
    let mut max_drift: f64 = 0.0;
    let mut min_margin = min_positional_margin(system, &state.broken, &state.velocity.base)?;
    let mut fired = vec![false; system.impulses.len()];

    let apply_event = |ev: ImpactEvent, state: &mut SimState| {
        state.broken.extend(ev.broken.iter().cloned());
        state.velocity = ev.p_right.clone();
        ev
    };

    // impacts already present in the initial data
    for ci in 0..system.kinetic.len() {
        if events.len() >= cfg.max_events {
            break;
        }
        let a = &system.kinetic[ci];
        if a.kind != crate::constraint::KineticKind::Permanent || state.broken.contains(&a.name) {
            continue;
        }
        if !a.violated_rows(&state.velocity, cfg.tangency_tol)?.is_empty() {
            let ev = resolve_kinetic_event(system, &state.broken, &state.velocity, ci, events.len())?;
            events.push(apply_event(ev, &mut state));
        }
    }
    let mut initial_contacts = Vec::new();
    for (i, s) in system.positional.iter().enumerate() {
        if !state.broken.contains(&s.name) && s.contact(&state.velocity.base, cfg.tangency_tol)?.0 {
            initial_contacts.push(i);
        }
    }
    if !initial_contacts.is_empty() && events.len() < cfg.max_events {
        let refs: Vec<&PositionalConstraint> = initial_contacts
            .iter()
            .map(|&i| &system.positional[i])
            .collect();
        let class = classify_multiple(&state.velocity, &refs, &system.metric, cfg.tangency_tol)?;
        if class.class == VelocityClass::Left {
            let ev = resolve_positional_event(
                system,
                &state.broken,
                &state.velocity,
                &initial_contacts,
                None,
                events.len(),
            )?;
            events.push(apply_event(ev, &mut state));
        }
    }

    let mut end = EndReason::TimeReached;
    loop {
        let t0 = state.velocity.base.t;
        if t0 >= cfg.t_end - 1e-12 {
            break;
        }
        if events.len() >= cfg.max_events {
            end = EndReason::MaxEvents;
            break;
        }

        // scripted impulses due at the current instant
        if let Some(i) = (0..system.impulses.len())
            .find(|&i| !fired[i] && system.impulses[i].time <= t0 + 1e-12)
        {
            fired[i] = true;
            let ev = resolve_impulse_event(
                system,
                &state.broken,
                &state.velocity,
                &system.impulses[i],
                events.len(),
            )?;
            events.push(apply_event(ev, &mut state));
            continue;
        }

        let mut h = cfg.h_step.min(cfg.t_end - t0);
        for (i, imp) in system.impulses.iter().enumerate() {
            if !fired[i] && imp.time > t0 + 1e-12 {
                h = h.min(imp.time - t0);
            }
        }

        let (candidate, drift) = smooth_step(system, &state, h)?;
        max_drift = max_drift.max(drift);

        let interp = Interpolant {
            t0,
            t1: candidate.velocity.base.t,
            x0: &state.velocity.base.x,
            x1: &candidate.velocity.base.x,
            v0: &state.velocity.spatial,
            v1: &candidate.velocity.spatial,
        };
        let crossings = locate_crossings(system, &state.broken, &interp)?;

        if crossings.is_empty() {
            min_margin = min_margin.min(min_positional_margin(
                system,
                &candidate.broken,
                &candidate.velocity.base,
            )?);
            let step = candidate.step;
            state = candidate;
            if step % system_sample_every(system) == 0 {
                samples.push(sample_of(&state));
            }
            continue;
        }

        let tau = crossings
            .iter()
            .map(|c| c.time)
            .fold(f64::INFINITY, f64::min);
        let (x_tau, v_tau_raw) = interp.at(tau);
        let pt_tau = SpacetimePoint::new(tau, x_tau);
        let (v_tau, _) = stabilize(system, &state.broken, &pt_tau, &v_tau_raw)?;
        let p_left = TimelikeVelocity::new(pt_tau, v_tau);

        let positional_hits: Vec<usize> = crossings
            .iter()
            .filter_map(|c| match c.kind {
                CrossKind::Positional(ci) => Some(ci),
                _ => None,
            })
            .collect();

        if !positional_hits.is_empty() {
            let refs: Vec<&PositionalConstraint> = positional_hits
                .iter()
                .map(|&i| &system.positional[i])
                .collect();
            let class = classify_multiple(&p_left, &refs, &system.metric, cfg.tangency_tol)?;
            if class.class == VelocityClass::Left {
                let ev = resolve_positional_event(
                    system,
                    &state.broken,
                    &p_left,
                    &positional_hits,
                    None,
                    events.len(),
                )?;
                let ev = apply_event(ev, &mut state);
                min_margin = min_margin.min(min_positional_margin(
                    system,
                    &state.broken,
                    &state.velocity.base,
                )?);
                events.push(ev);
                continue;
            }
            // tangent arrival: slide on, monitoring the row as a guard
            min_margin = min_margin.min(min_positional_margin(
                system,
                &candidate.broken,
                &candidate.velocity.base,
            )?);
            let step = candidate.step;
            state = candidate;
            if step % system_sample_every(system) == 0 {
                samples.push(sample_of(&state));
            }
            continue;
        }

        // kinetic unilateral row crossing
        let ci = crossings
            .iter()
            .find_map(|c| match c.kind {
                CrossKind::KineticRow(ci, _) => Some(ci),
                _ => None,
            })
            .expect("kinetic crossing present");
        let ev = resolve_kinetic_event(system, &state.broken, &p_left, ci, events.len())?;
        events.push(apply_event(ev, &mut state));
    }

    Ok(RunResult {
        samples,
        events,
        end,
        max_drift,
        min_margin,
    })
}

fn system_sample_every(system: &System) -> usize {
    system.sample_every.max(1)
}
