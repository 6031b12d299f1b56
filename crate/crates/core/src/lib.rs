//! Event-driven impulsive mechanics on a fibred configuration space-time.
//!
//! The configuration space-time is a bundle over absolute time with a
//! positive-definite vertical metric (the mass matrix). Absolute velocities
//! are time-like vectors, impulses are space-like vectors, and every impact
//! is resolved algebraically by a constitutive law through the balance
//! `p_R = p_L + I_act + I_react`. Positional and kinetic constraints, both
//! bilateral and unilateral, classify velocities into entering / tangent /
//! exiting and supply the metric-orthogonal components the laws act on.
//!
//! Crate layout:
//! - [`geometry`], [`chart`]: points, velocities, the mass metric, frames of
//!   reference, coordinate changes and push-forwards;
//! - [`constraint`], [`split`]: constraint descriptions, orthogonal
//!   splittings, classification, rest frames;
//! - [`constitutive`]: the library of impact laws;
//! - [`engine`]: smooth integration, impact location, the run loop;
//! - [`expr`], [`fields`], [`scenario`], [`writers`]: the scenario expression
//!   language, evaluable fields, scenario files and deterministic logs.

pub mod chart;
pub mod constitutive;
pub mod constraint;
pub mod engine;
pub mod error;
pub mod expr;
pub mod fields;
pub mod geometry;
pub mod scenario;
pub mod split;
pub mod writers;

pub use chart::CoordinateChange;
pub use constitutive::{
    energy_restitution_table, ActiveIdealTarget, ConstitutiveLaw, FrameEnergy, ImpactContext,
    ImpactResolution, LawParam, ReflectionTarget,
};
pub use constraint::{
    sample_rest_frames, ActiveRowSet, KineticConstraint, KineticKind, KineticRow,
    PositionalConstraint, RowRelation, DEFAULT_TOL,
};
pub use engine::{
    run, single_impact, smooth_step, EndReason, ImpactEvent, IntegratorConfig, RunResult, Sample,
    ScriptedImpulse, SimState, System,
};
pub use error::{Error, Result};
pub use fields::{MatrixField, ScalarField, VectorField, VelocityField};
pub use geometry::{
    kinetic_energy, ForceSection, FrameField, MassMetric, SpacelikeVector, SpacetimePoint,
    TimelikeVelocity,
};
pub use scenario::{builtin, load_scenario, load_scenario_str, OutputConfig, Scenario, ScenarioDoc};
pub use split::{
    classify, classify_multiple, normal_basis, orthogonal_split, split_commutation_residual,
    split_joint, split_kinetic, split_positional, vertical_split, AffineRow, Classification,
    Splitting, VelocityClass,
};
