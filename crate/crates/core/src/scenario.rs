//! Scenario files: a structured TOML tree describing the chart, the mass
//! metric, constraints, constitutive laws, frames, forces, the initial state
//! and integrator/output settings.
//!
//! Loading parses the document, compiles every expression, cross-checks all
//! references, and verifies the metric and constraints at the initial point.
//! The parsed document round-trips through [`Scenario::canonical_toml`] for
//! reproducible logging.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::constitutive::{
    ActiveIdealTarget, ConstitutiveLaw, LawParam, ReflectionTarget, KNOWN_TAGS, LAW_EXTRAS,
};
use crate::constraint::{
    KineticConstraint, KineticKind, KineticRow, PositionalConstraint, RowRelation,
};
use crate::engine::{IntegratorConfig, ScriptedImpulse, System};
use crate::error::{Error, Result};
use crate::expr::{compile, BindContext, BoundExpr, Expr, Node, Span};
use crate::fields::{MatrixField, ScalarField, VectorField, VelocityField};
use crate::geometry::{ForceSection, FrameField, MassMetric, SpacetimePoint, TimelikeVelocity};
use crate::split::normal_basis;

// ---------------------------------------------------------------------------
// Document schema
// ---------------------------------------------------------------------------

/// A literal number or an expression string.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumOrExpr {
    Num(f64),
    Expr(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub chart: ChartDoc,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    pub metric: MetricDoc,
    #[serde(default, skip_serializing_if = "ConstraintsDoc::is_empty")]
    pub constraints: ConstraintsDoc,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub laws: BTreeMap<String, LawDoc>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub frames: BTreeMap<String, FrameDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forces: Option<ForcesDoc>,
    pub initial: InitialDoc,
    #[serde(default)]
    pub integrator: IntegratorDoc,
    #[serde(default)]
    pub outputs: OutputsDoc,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub impulses: Vec<ImpulseDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartDoc {
    pub coords: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diag: Option<Vec<NumOrExpr>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full: Option<Vec<Vec<NumOrExpr>>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsDoc {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub positional: Vec<PositionalDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kinetic: Vec<KineticDoc>,
}

impl ConstraintsDoc {
    pub fn is_empty(&self) -> bool {
        self.positional.is_empty() && self.kinetic.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionalDoc {
    pub name: String,
    /// Level-set expressions `f_ρ(t, x)`.
    pub f: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unilateral: Option<Vec<bool>>,
    /// Exit-side signs (±1) per row; defaults to +1 on unilateral rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<Vec<f64>>,
    /// Unit tangent direction field (component expressions).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anisotropy: Option<Vec<NumOrExpr>>,
    /// Per-row override of the orthogonal reference vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_perp: Option<Vec<Vec<NumOrExpr>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticDoc {
    pub name: String,
    /// `"permanent"` or `"instantaneous"`.
    #[serde(default = "default_kind")]
    pub kind: String,
    /// Owning positional constraint (instantaneous rows only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<String>,
    pub rows: Vec<RowDoc>,
    /// Frame the rows are authored in (metadata).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
}

fn default_kind() -> String {
    "permanent".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowDoc {
    /// Covector components of `a(t, x)`.
    pub a: Vec<NumOrExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<NumOrExpr>,
    /// `"eq"` (default) or `"ge"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawDoc {
    pub law: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<NumOrExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_contact: Option<NumOrExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_break: Option<NumOrExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<NumOrExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<NumOrExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<NumOrExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anisotropy_gain: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameDoc {
    pub components: Vec<NumOrExpr>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcesDoc {
    /// Force components `Zⁱ(t, x, ẋ)`.
    pub z: Vec<NumOrExpr>,
    /// When true, `z` is a covector and is raised by the inverse mass matrix.
    #[serde(default)]
    pub covector: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDoc {
    #[serde(default)]
    pub t: f64,
    pub x: Vec<f64>,
    pub xdot: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorDoc {
    #[serde(default = "d_h_step")]
    pub h_step: f64,
    #[serde(default = "d_t_end")]
    pub t_end: f64,
    #[serde(default = "d_t_tol")]
    pub t_tol: f64,
    #[serde(default = "d_max_events")]
    pub max_events: usize,
    #[serde(default = "d_drift_tol")]
    pub drift_tol: f64,
    #[serde(default = "d_penetration_tol")]
    pub penetration_tol: f64,
    #[serde(default = "d_tangency_tol")]
    pub tangency_tol: f64,
}

fn d_h_step() -> f64 {
    1e-3
}
fn d_t_end() -> f64 {
    1.0
}
fn d_t_tol() -> f64 {
    1e-10
}
fn d_max_events() -> usize {
    1000
}
fn d_drift_tol() -> f64 {
    1e-9
}
fn d_penetration_tol() -> f64 {
    1e-8
}
fn d_tangency_tol() -> f64 {
    1e-9
}

impl Default for IntegratorDoc {
    fn default() -> Self {
        IntegratorDoc {
            h_step: d_h_step(),
            t_end: d_t_end(),
            t_tol: d_t_tol(),
            max_events: d_max_events(),
            drift_tol: d_drift_tol(),
            penetration_tol: d_penetration_tol(),
            tangency_tol: d_tangency_tol(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<String>,
    #[serde(default = "d_sample_every")]
    pub sample_every: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub energy_frames: Vec<String>,
}

fn d_sample_every() -> usize {
    1
}

impl Default for OutputsDoc {
    fn default() -> Self {
        OutputsDoc {
            trajectory: None,
            events: None,
            sample_every: 1,
            energy_frames: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseDoc {
    pub time: f64,
    pub components: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<String>,
}

// ---------------------------------------------------------------------------
// Compiled scenario
// ---------------------------------------------------------------------------

/// Output paths and diagnostics settings.
#[derive(Debug, Clone)]
pub struct OutputConfig {
    pub trajectory: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub sample_every: usize,
    pub energy_frames: Vec<String>,
}

/// A validated scenario: the runtime system plus output settings and the
/// original document for canonical re-serialization.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: System,
    pub outputs: OutputConfig,
    pub doc: ScenarioDoc,
}

impl Scenario {
    /// Deterministic canonical form of the scenario document.
    pub fn canonical_toml(&self) -> Result<String> {
        toml::to_string_pretty(&self.doc).map_err(|e| Error::Toml(e.to_string()))
    }
}

/// Built-in scenario files, compiled into the library.
pub const BUILTIN_SCENARIOS: &[(&str, &str)] = &[
    ("rod", include_str!("../../../scenarios/rod.scn")),
    ("rod_inelastic", include_str!("../../../scenarios/rod_inelastic.scn")),
    ("ball", include_str!("../../../scenarios/ball.scn")),
    ("corner", include_str!("../../../scenarios/corner.scn")),
    ("disk_wall", include_str!("../../../scenarios/disk_wall.scn")),
    ("sphere", include_str!("../../../scenarios/sphere.scn")),
    ("coaster", include_str!("../../../scenarios/coaster.scn")),
    ("glass", include_str!("../../../scenarios/glass.scn")),
];

/// Look up a built-in scenario by name (`rod` or `rod.scn`).
pub fn builtin(name: &str) -> Option<&'static str> {
    let stem = name.strip_suffix(".scn").unwrap_or(name);
    BUILTIN_SCENARIOS
        .iter()
        .find(|(n, _)| *n == stem)
        .map(|(_, text)| *text)
}

/// Load a scenario from a file path, falling back to the built-in catalogue
/// for bare names.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    if path.exists() {
        let text = std::fs::read_to_string(path)?;
        return load_scenario_str(&text);
    }
    if path.components().count() == 1 {
        if let Some(text) = path.to_str().and_then(builtin) {
            return load_scenario_str(text);
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("scenario `{}` not found (and not a built-in)", path.display()),
    )))
}

/// Parse and validate a scenario from TOML text.
pub fn load_scenario_str(text: &str) -> Result<Scenario> {
    let doc: ScenarioDoc = toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))?;
    build(doc)
}

// ---------------------------------------------------------------------------
// Building
// ---------------------------------------------------------------------------

fn is_ident(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn constant_expr(v: f64) -> BoundExpr {
    Expr {
        node: Node::Num(v),
        span: Span { start: 0, end: 0 },
    }
}

fn bind_num_or_expr(ne: &NumOrExpr, ctx: &BindContext, path: &str) -> Result<BoundExpr> {
    match ne {
        NumOrExpr::Num(v) => Ok(constant_expr(*v)),
        NumOrExpr::Expr(src) => {
            compile(src, ctx).map_err(|e| Error::schema(path, e.to_string()))
        }
    }
}

fn bind_str(src: &str, ctx: &BindContext, path: &str) -> Result<BoundExpr> {
    compile(src, ctx).map_err(|e| Error::schema(path, e.to_string()))
}

fn law_param(ne: &NumOrExpr, ctx: &BindContext, path: &str) -> Result<LawParam> {
    Ok(match ne {
        NumOrExpr::Num(v) => LawParam::Const(*v),
        NumOrExpr::Expr(src) => LawParam::Expr(bind_str(src, ctx, path)?),
    })
}

fn build_law(key: &str, doc: &LawDoc, ctx: &BindContext) -> Result<ConstitutiveLaw> {
    let path = |field: &str| format!("laws.{key}.{field}");
    let require = |field: &str, v: &Option<NumOrExpr>| -> Result<LawParam> {
        match v {
            Some(ne) => law_param(ne, ctx, &path(field)),
            None => Err(Error::schema(
                path(field),
                format!("law `{}` requires `{field}`", doc.law),
            )),
        }
    };
    match doc.law.as_str() {
        "ideal_reflection" => {
            let target = match doc.target.as_deref() {
                None | Some("s") => ReflectionTarget::Positional,
                Some("s_and_a") => ReflectionTarget::WithPermanent,
                Some("s_and_b") => ReflectionTarget::WithInstantaneous,
                Some(other) => {
                    return Err(Error::schema(
                        path("target"),
                        format!("unknown target `{other}` (expected s, s_and_a, s_and_b)"),
                    ))
                }
            };
            Ok(ConstitutiveLaw::IdealReflection { target })
        }
        "newton" => Ok(ConstitutiveLaw::NewtonRestitution {
            eps: require("eps", &doc.eps)?,
        }),
        "totally_inelastic" => Ok(ConstitutiveLaw::TotallyInelastic),
        "friction" => {
            let frame = doc.frame.clone().ok_or_else(|| {
                Error::schema(path("frame"), "friction requires a rest frame name")
            })?;
            let alpha = match (&doc.alpha, &doc.eps) {
                (Some(a), _) => law_param(a, ctx, &path("alpha"))?,
                (None, Some(NumOrExpr::Num(eps))) => LawParam::Const(-(1.0 + eps)),
                (None, Some(NumOrExpr::Expr(_))) => {
                    return Err(Error::schema(
                        path("eps"),
                        "give `alpha` directly when `eps` is an expression",
                    ))
                }
                (None, None) => LawParam::Const(-2.0),
            };
            let beta = match (&doc.beta, doc.mu) {
                (Some(b), _) => law_param(b, ctx, &path("beta"))?,
                (None, Some(mu)) => LawParam::Const(-mu),
                (None, None) => LawParam::Const(0.0),
            };
            Ok(ConstitutiveLaw::RestFrameFriction {
                alpha,
                beta,
                frame,
                anisotropy_gain: doc.anisotropy_gain,
            })
        }
        "kinetic_ideal" => {
            let target = match doc.target.as_deref() {
                None | Some("a") => ActiveIdealTarget::Kinetic,
                Some("s") => ActiveIdealTarget::Positional,
                Some(other) => {
                    return Err(Error::schema(
                        path("target"),
                        format!("unknown target `{other}` (expected a or s)"),
                    ))
                }
            };
            Ok(ConstitutiveLaw::KineticIdeal { target })
        }
        "breakable_saturating" => Ok(ConstitutiveLaw::BreakableSaturating {
            threshold: require("xi", &doc.xi)?,
        }),
        "breakable_lowspeed" => Ok(ConstitutiveLaw::BreakableLowSpeed {
            threshold: require("xi", &doc.xi)?,
        }),
        "disk_wall_breakable" => Ok(ConstitutiveLaw::DiskWallBreakable {
            eps_contact: require("eps_contact", &doc.eps_contact)?,
            eps_break: require("eps_break", &doc.eps_break)?,
            threshold: require("xi", &doc.xi)?,
        }),
        "inelastic_clamp" => Ok(ConstitutiveLaw::InelasticClamp),
        other => Err(Error::UnknownLaw {
            tag: other.to_string(),
            known: KNOWN_TAGS.join(", "),
        }),
    }
}

fn build(doc: ScenarioDoc) -> Result<Scenario> {
    // chart
    let coords = doc.chart.coords.clone();
    let n = coords.len();
    if n == 0 {
        return Err(Error::schema("chart.coords", "at least one coordinate"));
    }
    for (i, c) in coords.iter().enumerate() {
        if !is_ident(c) || c == "t" || c.ends_with("dot") {
            return Err(Error::schema(
                format!("chart.coords[{i}]"),
                format!("`{c}` is not a usable coordinate name"),
            ));
        }
        if coords[..i].contains(c) {
            return Err(Error::schema(
                format!("chart.coords[{i}]"),
                format!("duplicate coordinate `{c}`"),
            ));
        }
    }
    for key in doc.params.keys() {
        if !is_ident(key) || key == "t" || coords.contains(key) {
            return Err(Error::schema(
                format!("params.{key}"),
                "parameter name collides with a coordinate or is invalid",
            ));
        }
    }

    let static_ctx = BindContext::new(&coords).with_params(&doc.params);
    let dotted_ctx = BindContext::new(&coords)
        .with_dots()
        .with_params(&doc.params);
    let law_ctx = BindContext::new(&coords)
        .with_dots()
        .with_params(&doc.params)
        .with_extras(&LAW_EXTRAS);

    // metric
    let metric_field = match (&doc.metric.diag, &doc.metric.full) {
        (Some(diag), None) => {
            if diag.len() != n {
                return Err(Error::schema("metric.diag", format!("expected {n} entries")));
            }
            let mut entries = vec![constant_expr(0.0); n * n];
            for (i, ne) in diag.iter().enumerate() {
                entries[i * n + i] = bind_num_or_expr(ne, &static_ctx, &format!("metric.diag[{i}]"))?;
            }
            MatrixField::from_exprs(entries, n)
        }
        (None, Some(full)) => {
            if full.len() != n || full.iter().any(|row| row.len() != n) {
                return Err(Error::schema("metric.full", format!("expected {n}x{n} entries")));
            }
            let mut entries = Vec::with_capacity(n * n);
            for (i, row) in full.iter().enumerate() {
                for (j, ne) in row.iter().enumerate() {
                    entries.push(bind_num_or_expr(
                        ne,
                        &static_ctx,
                        &format!("metric.full[{i}][{j}]"),
                    )?);
                }
            }
            MatrixField::from_exprs(entries, n)
        }
        _ => {
            return Err(Error::schema(
                "metric",
                "give exactly one of `diag` or `full`",
            ))
        }
    };
    let metric = MassMetric::new(metric_field);

    // constraints
    let mut names_seen = std::collections::BTreeSet::new();
    let mut positional = Vec::new();
    for (i, pd) in doc.constraints.positional.iter().enumerate() {
        let base = format!("constraints.positional[{i}]");
        if !names_seen.insert(pd.name.clone()) || pd.name == "multiple" {
            return Err(Error::schema(
                format!("{base}.name"),
                format!("duplicate or reserved name `{}`", pd.name),
            ));
        }
        let k = pd.f.len();
        if k == 0 {
            return Err(Error::schema(format!("{base}.f"), "at least one level set"));
        }
        let mut funcs = Vec::with_capacity(k);
        for (r, src) in pd.f.iter().enumerate() {
            funcs.push(ScalarField::from_expr(
                bind_str(src, &static_ctx, &format!("{base}.f[{r}]"))?,
                n,
            ));
        }
        let unilateral = match &pd.unilateral {
            Some(v) if v.len() == k => v.clone(),
            Some(_) => {
                return Err(Error::schema(
                    format!("{base}.unilateral"),
                    format!("expected {k} flags"),
                ))
            }
            None => vec![true; k],
        };
        let orientations = match &pd.orientation {
            Some(v) if v.len() == k => {
                for (r, s) in v.iter().enumerate() {
                    if *s != 1.0 && *s != -1.0 {
                        return Err(Error::schema(
                            format!("{base}.orientation[{r}]"),
                            "orientation must be +1 or -1",
                        ));
                    }
                }
                v.iter().map(|s| Some(*s)).collect()
            }
            Some(_) => {
                return Err(Error::schema(
                    format!("{base}.orientation"),
                    format!("expected {k} signs"),
                ))
            }
            None => unilateral
                .iter()
                .map(|&u| if u { Some(1.0) } else { None })
                .collect(),
        };
        let anisotropy = match &pd.anisotropy {
            Some(comps) if comps.len() == n => {
                let mut bound = Vec::with_capacity(n);
                for (j, ne) in comps.iter().enumerate() {
                    bound.push(bind_num_or_expr(
                        ne,
                        &static_ctx,
                        &format!("{base}.anisotropy[{j}]"),
                    )?);
                }
                Some(VectorField::from_exprs(bound))
            }
            Some(_) => {
                return Err(Error::schema(
                    format!("{base}.anisotropy"),
                    format!("expected {n} components"),
                ))
            }
            None => None,
        };
        let normal_overrides = match &pd.u_perp {
            Some(rows) if rows.len() == k => {
                let mut out = Vec::with_capacity(k);
                for (r, comps) in rows.iter().enumerate() {
                    if comps.len() != n {
                        return Err(Error::schema(
                            format!("{base}.u_perp[{r}]"),
                            format!("expected {n} components"),
                        ));
                    }
                    let mut bound = Vec::with_capacity(n);
                    for (j, ne) in comps.iter().enumerate() {
                        bound.push(bind_num_or_expr(
                            ne,
                            &static_ctx,
                            &format!("{base}.u_perp[{r}][{j}]"),
                        )?);
                    }
                    out.push(Some(VectorField::from_exprs(bound)));
                }
                out
            }
            Some(_) => {
                return Err(Error::schema(
                    format!("{base}.u_perp"),
                    format!("expected {k} rows"),
                ))
            }
            None => vec![None; k],
        };
        positional.push(PositionalConstraint {
            name: pd.name.clone(),
            funcs,
            orientations,
            unilateral,
            anisotropy,
            normal_overrides,
        });
    }

    let mut kinetic = Vec::new();
    for (i, kd) in doc.constraints.kinetic.iter().enumerate() {
        let base = format!("constraints.kinetic[{i}]");
        if !names_seen.insert(kd.name.clone()) || kd.name == "multiple" {
            return Err(Error::schema(
                format!("{base}.name"),
                format!("duplicate or reserved name `{}`", kd.name),
            ));
        }
        let kind = match kd.kind.as_str() {
            "permanent" => {
                if kd.owner.is_some() {
                    return Err(Error::schema(
                        format!("{base}.owner"),
                        "permanent constraints have no owner",
                    ));
                }
                KineticKind::Permanent
            }
            "instantaneous" => {
                let owner = kd.owner.clone().ok_or_else(|| {
                    Error::schema(format!("{base}.owner"), "instantaneous constraints need an owner")
                })?;
                if !positional.iter().any(|s| s.name == owner) {
                    return Err(Error::schema(
                        format!("{base}.owner"),
                        format!("`{owner}` does not name a positional constraint"),
                    ));
                }
                KineticKind::Instantaneous { owner }
            }
            other => {
                return Err(Error::schema(
                    format!("{base}.kind"),
                    format!("unknown kind `{other}` (expected permanent or instantaneous)"),
                ))
            }
        };
        if kd.rows.is_empty() {
            return Err(Error::schema(format!("{base}.rows"), "at least one row"));
        }
        let mut rows = Vec::with_capacity(kd.rows.len());
        for (r, rd) in kd.rows.iter().enumerate() {
            if rd.a.len() != n {
                return Err(Error::schema(
                    format!("{base}.rows[{r}].a"),
                    format!("expected {n} components"),
                ));
            }
            let mut comps = Vec::with_capacity(n);
            for (j, ne) in rd.a.iter().enumerate() {
                comps.push(bind_num_or_expr(
                    ne,
                    &static_ctx,
                    &format!("{base}.rows[{r}].a[{j}]"),
                )?);
            }
            let b = match &rd.b {
                Some(ne) => ScalarField::from_expr(
                    bind_num_or_expr(ne, &static_ctx, &format!("{base}.rows[{r}].b"))?,
                    n,
                ),
                None => ScalarField::constant(0.0),
            };
            let relation = match rd.relation.as_deref() {
                None | Some("eq") => RowRelation::Equality,
                Some("ge") => RowRelation::NonNegative,
                Some(other) => {
                    return Err(Error::schema(
                        format!("{base}.rows[{r}].relation"),
                        format!("unknown relation `{other}` (expected eq or ge)"),
                    ))
                }
            };
            rows.push(KineticRow {
                a: VectorField::from_exprs(comps),
                b,
                relation,
            });
        }
        kinetic.push(KineticConstraint {
            name: kd.name.clone(),
            rows,
            kind,
            authoring_frame: kd.frame.clone(),
        });
    }

    // frames
    let mut frames = BTreeMap::new();
    for (name, fd) in &doc.frames {
        if fd.components.len() != n {
            return Err(Error::schema(
                format!("frames.{name}.components"),
                format!("expected {n} components"),
            ));
        }
        let mut comps = Vec::with_capacity(n);
        for (j, ne) in fd.components.iter().enumerate() {
            comps.push(bind_num_or_expr(
                ne,
                &static_ctx,
                &format!("frames.{name}.components[{j}]"),
            )?);
        }
        frames.insert(name.clone(), FrameField::new(VectorField::from_exprs(comps)));
    }

    // laws
    let mut laws = BTreeMap::new();
    for (key, ld) in &doc.laws {
        let law = build_law(key, ld, &law_ctx)?;
        if let ConstitutiveLaw::RestFrameFriction { frame, .. } = &law {
            if !frames.contains_key(frame) {
                return Err(Error::schema(
                    format!("laws.{key}.frame"),
                    format!("`{frame}` does not name a frame"),
                ));
            }
        }
        let impulse_keys: Vec<&str> = doc
            .impulses
            .iter()
            .filter_map(|i| i.law.as_deref())
            .collect();
        let known_name =
            names_seen.contains(key) || key == "multiple" || impulse_keys.contains(&key.as_str());
        if !known_name {
            return Err(Error::schema(
                format!("laws.{key}"),
                "key names no constraint, `multiple`, or scripted impulse law",
            ));
        }
        laws.insert(key.clone(), law);
    }

    // forces
    let force = match &doc.forces {
        Some(fd) => {
            if fd.z.len() != n {
                return Err(Error::schema("forces.z", format!("expected {n} components")));
            }
            let mut comps = Vec::with_capacity(n);
            for (j, ne) in fd.z.iter().enumerate() {
                comps.push(bind_num_or_expr(ne, &dotted_ctx, &format!("forces.z[{j}]"))?);
            }
            let field = VelocityField::from_exprs(comps);
            if fd.covector {
                // raise the covector force through the inverse mass matrix
                let metric = metric.clone();
                Some(ForceSection::from_fn(move |pt, xdot| {
                    let z = field.value(pt, xdot)?;
                    Ok(metric.inverse_at(pt)? * z)
                }))
            } else {
                Some(ForceSection::new(field))
            }
        }
        None => None,
    };

    // initial state
    if doc.initial.x.len() != n || doc.initial.xdot.len() != n {
        return Err(Error::schema("initial", format!("x and xdot need {n} entries")));
    }
    let initial_pt = SpacetimePoint::new(doc.initial.t, DVector::from_row_slice(&doc.initial.x));
    let initial = TimelikeVelocity::new(initial_pt, DVector::from_row_slice(&doc.initial.xdot));
    if !initial.base.is_finite() || !initial.spatial.iter().all(|c| c.is_finite()) {
        return Err(Error::schema("initial", "state must be finite"));
    }

    let config = IntegratorConfig {
        h_step: doc.integrator.h_step,
        t_end: doc.integrator.t_end,
        t_tol: doc.integrator.t_tol,
        max_events: doc.integrator.max_events,
        drift_tol: doc.integrator.drift_tol,
        penetration_tol: doc.integrator.penetration_tol,
        tangency_tol: doc.integrator.tangency_tol,
    };
    config.validate()?;

    for name in &doc.outputs.energy_frames {
        if !frames.contains_key(name) {
            return Err(Error::schema(
                "outputs.energy_frames",
                format!("`{name}` does not name a frame"),
            ));
        }
    }

    let mut impulses = Vec::new();
    for (i, imp) in doc.impulses.iter().enumerate() {
        if imp.components.len() != n {
            return Err(Error::schema(
                format!("impulses[{i}].components"),
                format!("expected {n} components"),
            ));
        }
        if let Some(key) = &imp.law {
            if !laws.contains_key(key) {
                return Err(Error::schema(
                    format!("impulses[{i}].law"),
                    format!("`{key}` does not name a law"),
                ));
            }
        }
        impulses.push(ScriptedImpulse {
            time: imp.time,
            components: DVector::from_row_slice(&imp.components),
            law: imp.law.clone(),
        });
    }

    let system = System {
        coords: coords.clone(),
        metric,
        positional,
        kinetic,
        laws,
        frames,
        energy_frames: doc.outputs.energy_frames.clone(),
        force,
        initial,
        config,
        impulses,
        sample_every: doc.outputs.sample_every.max(1),
    };

    validate_initial(&system)?;

    let outputs = OutputConfig {
        trajectory: doc.outputs.trajectory.as_ref().map(PathBuf::from),
        events: doc.outputs.events.as_ref().map(PathBuf::from),
        sample_every: doc.outputs.sample_every.max(1),
        energy_frames: doc.outputs.energy_frames.clone(),
    };

    Ok(Scenario {
        system,
        outputs,
        doc,
    })
}

/// Point checks at the initial state: SPD metric, admissible unilateral
/// margins, satisfied permanent kinetic equality rows, regular contact.
fn validate_initial(system: &System) -> Result<()> {
    let pt = &system.initial.base;
    system
        .metric
        .check_spd(pt, 1e-9)
        .map_err(|_| Error::schema("metric", format!("not symmetric positive definite at {pt}")))?;

    for s in &system.positional {
        for rho in 0..s.codim() {
            if s.unilateral[rho] {
                if let Some(sign) = s.orientations[rho] {
                    let v = sign * s.funcs[rho].value(pt)?;
                    if v < -system.config.penetration_tol {
                        return Err(Error::schema(
                            "initial",
                            format!(
                                "state starts {v:.3e} inside unilateral constraint `{}`",
                                s.name
                            ),
                        ));
                    }
                }
            }
        }
        // regularity where the initial point touches the constraint
        if s.contact(pt, system.config.tangency_tol)?.0 {
            normal_basis(pt, s, &system.metric)?;
        }
    }

    for a in &system.kinetic {
        if a.kind != KineticKind::Permanent {
            continue;
        }
        for (r, row) in a.rows.iter().enumerate() {
            if row.relation == RowRelation::Equality {
                let res = row.at(pt)?.residual(&system.initial.spatial);
                if res.abs() > 1e3 * system.config.drift_tol {
                    return Err(Error::schema(
                        "initial",
                        format!(
                            "xdot violates equality row {r} of `{}` (residual {res:.3e})",
                            a.name
                        ),
                    ));
                }
            }
        }
    }
    Ok(())
}
