//! Command-line driver: run scenarios, resolve single impacts, classify
//! velocities, test rest frames, validate files.
//!
//! Exit codes: 0 success, 1 usage, 2 scenario validation, 3 runtime.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use impulsive_core::engine::{run, single_impact, EndReason, ImpactEvent};
use impulsive_core::error::Error;
use impulsive_core::geometry::{kinetic_energy, SpacetimePoint, TimelikeVelocity};
use impulsive_core::scenario::{load_scenario, Scenario};
use impulsive_core::split::classify_multiple;
use impulsive_core::writers::{write_event_log, write_trajectory_csv};
use impulsive_core::{constraint::sample_rest_frames, KineticKind};
use rand_chacha::rand_core::SeedableRng;

#[derive(Parser)]
#[command(
    name = "impulsive",
    about = "Event-driven impulsive mechanics on a fibred configuration space-time",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one or more scenarios and write their logs.
    Run(RunArgs),
    /// Resolve a single impact at a given left velocity.
    Impact(ImpactArgs),
    /// Classify a velocity against the scenario's positional constraints.
    Classify(ClassifyArgs),
    /// Test whether a named frame is a rest frame of each constraint.
    CheckFrame(CheckFrameArgs),
    /// Load and validate a scenario file.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario files or built-in names.
    #[arg(required = true)]
    scenarios: Vec<PathBuf>,
    /// Override the trajectory output path (single scenario only).
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Override the event-log output path (single scenario only).
    #[arg(long)]
    events: Option<PathBuf>,
    /// Print the trajectory table to stdout.
    #[arg(long)]
    plot: bool,
    /// Run independent scenarios in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct ImpactArgs {
    scenario: PathBuf,
    /// Spatial components of the left velocity, comma-separated.
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    p_left: VectorArg,
    /// Impact point as t,x1,...,xn (defaults to the scenario's initial point).
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    at: Option<VectorArg>,
    /// Active impulse components, comma-separated.
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    i_act: Option<VectorArg>,
    /// Audit the resolution against this many sampled rest frames.
    #[arg(long, default_value_t = 0)]
    audit_frames: usize,
    /// Seed for the randomized rest-frame sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ClassifyArgs {
    scenario: PathBuf,
    /// Spatial components of the velocity, comma-separated.
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    p: VectorArg,
    /// Point as t,x1,...,xn (defaults to the scenario's initial point).
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    at: Option<VectorArg>,
}

#[derive(Args)]
struct CheckFrameArgs {
    scenario: PathBuf,
    /// Name of a frame declared in the scenario.
    #[arg(long)]
    frame: String,
}

#[derive(Args)]
struct ValidateArgs {
    scenario: PathBuf,
}

#[derive(Clone, Debug)]
struct VectorArg(Vec<f64>);

fn parse_vector(s: &str) -> Result<VectorArg, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<Vec<_>, _>>()
        .map(VectorArg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Impact(args) => cmd_impact(args),
        Command::Classify(args) => cmd_classify(args),
        Command::CheckFrame(args) => cmd_check_frame(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError { code, error }) => {
            eprintln!("error: {error}");
            ExitCode::from(code)
        }
    }
}

struct CmdError {
    code: u8,
    error: Error,
}

fn validation(error: Error) -> CmdError {
    CmdError { code: 2, error }
}

fn runtime(error: Error) -> CmdError {
    CmdError { code: 3, error }
}

fn load(path: &Path) -> Result<Scenario, CmdError> {
    load_scenario(path).map_err(validation)
}

fn fmt_components(c: &DVector<f64>) -> String {
    let mut s = String::new();
    for (i, v) in c.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v}");
    }
    s
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn cmd_run(args: RunArgs) -> Result<(), CmdError> {
    if args.scenarios.len() > 1 && (args.trajectory.is_some() || args.events.is_some()) {
        return Err(CmdError {
            code: 1,
            error: Error::schema(
                "run",
                "--trajectory/--events overrides need a single scenario",
            ),
        });
    }
    if args.jobs <= 1 || args.scenarios.len() == 1 {
        for path in &args.scenarios {
            run_one(path, &args)?;
        }
        return Ok(());
    }
    let jobs = args.jobs.min(args.scenarios.len());
    let queue = std::sync::Mutex::new(args.scenarios.clone().into_iter());
    let failures: std::sync::Mutex<Vec<CmdError>> = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let next = queue.lock().unwrap().next();
                match next {
                    Some(path) => {
                        if let Err(e) = run_one(&path, &args) {
                            failures.lock().unwrap().push(e);
                        }
                    }
                    None => break,
                }
            });
        }
    });
    match failures.into_inner().unwrap().into_iter().next() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn run_one(path: &Path, args: &RunArgs) -> Result<(), CmdError> {
    let scenario = load(path)?;
    let result = run(&scenario.system).map_err(runtime)?;

    let trajectory_path = args
        .trajectory
        .clone()
        .or_else(|| scenario.outputs.trajectory.clone());
    let events_path = args.events.clone().or_else(|| scenario.outputs.events.clone());

    if let Some(p) = &trajectory_path {
        let mut file = std::fs::File::create(p).map_err(|e| runtime(e.into()))?;
        write_trajectory_csv(&result, &scenario.system.coords, &mut file).map_err(runtime)?;
    }
    if let Some(p) = &events_path {
        let mut file = std::fs::File::create(p).map_err(|e| runtime(e.into()))?;
        write_event_log(
            &result.events,
            &scenario.system.coords,
            &scenario.outputs.energy_frames,
            &mut file,
        )
        .map_err(runtime)?;
    }
    if args.plot {
        let mut out = Vec::new();
        write_trajectory_csv(&result, &scenario.system.coords, &mut out).map_err(runtime)?;
        print!("{}", String::from_utf8(out).expect("utf8 csv"));
    }

    println!("scenario = {}", path.display());
    println!("events = {}", result.events.len());
    println!(
        "end = {}",
        match result.end {
            EndReason::TimeReached => "time-reached",
            EndReason::MaxEvents => "max-events",
        }
    );
    println!("samples = {}", result.samples.len());
    println!("max_drift = {}", result.max_drift);
    println!("min_margin = {}", result.min_margin);
    if let Some(p) = &trajectory_path {
        println!("trajectory -> {}", p.display());
    }
    if let Some(p) = &events_path {
        println!("events -> {}", p.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// impact
// ---------------------------------------------------------------------------

fn state_at(
    scenario: &Scenario,
    at: &Option<VectorArg>,
    spatial: &[f64],
) -> Result<TimelikeVelocity, CmdError> {
    let n = scenario.system.coords.len();
    let base = match at {
        Some(VectorArg(v)) => {
            if v.len() != n + 1 {
                return Err(CmdError {
                    code: 1,
                    error: Error::schema("--at", format!("expected t plus {n} coordinates")),
                });
            }
            SpacetimePoint::new(v[0], DVector::from_row_slice(&v[1..]))
        }
        None => scenario.system.initial.base.clone(),
    };
    if spatial.len() != n {
        return Err(CmdError {
            code: 1,
            error: Error::schema("velocity", format!("expected {n} components")),
        });
    }
    Ok(TimelikeVelocity::new(base, DVector::from_row_slice(spatial)))
}

fn print_event(ev: &ImpactEvent) {
    println!("time = {}", ev.time);
    println!(
        "point = {},{}",
        ev.point.t,
        fmt_components(&ev.point.x)
    );
    println!("law = {}", ev.law);
    println!("constraints = {}", ev.constraints.join(","));
    println!("p_L = {}", fmt_components(&ev.p_left.spatial));
    match &ev.i_act {
        Some(ia) => println!("I_act = {}", fmt_components(&ia.components)),
        None => println!("I_act = none"),
    }
    println!("I_react = {}", fmt_components(&ev.i_react.components));
    println!("p_R = {}", fmt_components(&ev.p_right.spatial));
    println!(
        "broken = {}",
        if ev.broken.is_empty() {
            "none".to_string()
        } else {
            ev.broken.iter().cloned().collect::<Vec<_>>().join(",")
        }
    );
    println!("vperp_norm = {}", ev.vperp_norm);
    for (frame, e) in &ev.energy {
        let ratio = match e.ratio {
            Some(r) => format!("{r}"),
            None => "undefined".to_string(),
        };
        println!(
            "energy[{frame}]: K_L = {}, K_R = {}, ratio = {ratio}",
            e.left, e.right
        );
    }
    for (frame, r) in &ev.commutation {
        println!("commutation[{frame}] = {r}");
    }
}

fn cmd_impact(args: ImpactArgs) -> Result<(), CmdError> {
    let scenario = load(&args.scenario)?;
    let p_left = state_at(&scenario, &args.at, &args.p_left.0)?;
    let i_act = args
        .i_act
        .as_ref()
        .map(|v| DVector::from_row_slice(&v.0));
    let event = single_impact(&scenario.system, &p_left, i_act).map_err(runtime)?;
    print_event(&event);

    if args.audit_frames > 0 {
        let Some(&first) = event
            .constraints
            .first()
            .and_then(|name| {
                scenario
                    .system
                    .positional
                    .iter()
                    .position(|s| &s.name == name)
            })
            .as_ref()
        else {
            return Err(runtime(Error::schema(
                "--audit-frames",
                "the event involves no positional constraint",
            )));
        };
        let s = &scenario.system.positional[first];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
        let frames = sample_rest_frames(s, &p_left.base, args.audit_frames, 2.0, &mut rng)
            .map_err(runtime)?;
        let mut worst: f64 = 0.0;
        for h in &frames {
            let kl = kinetic_energy(&event.p_left, h, &scenario.system.metric).map_err(runtime)?;
            let kr = kinetic_energy(&event.p_right, h, &scenario.system.metric).map_err(runtime)?;
            if kl > 0.0 {
                worst = worst.max((kr / kl - 1.0).abs());
            }
        }
        println!("audit: frames = {}, seed = {}", frames.len(), args.seed);
        println!("audit: max |ratio - 1| = {worst}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// classify
// ---------------------------------------------------------------------------

fn cmd_classify(args: ClassifyArgs) -> Result<(), CmdError> {
    let scenario = load(&args.scenario)?;
    let p = state_at(&scenario, &args.at, &args.p.0)?;
    let system = &scenario.system;
    let tol = system.config.tangency_tol;
    let mut active = Vec::new();
    for s in &system.positional {
        let (on, _) = s.contact(&p.base, tol.max(1e-7)).map_err(runtime)?;
        if on {
            active.push(s);
        }
    }
    if active.is_empty() {
        return Err(runtime(Error::schema(
            "classify",
            "the point lies on no positional constraint",
        )));
    }
    let c = classify_multiple(&p, &active, &system.metric, tol).map_err(runtime)?;
    println!("class = {}", c.class);
    println!(
        "margins = {}",
        c.margins
            .iter()
            .map(|m| format!("{m}"))
            .collect::<Vec<_>>()
            .join(",")
    );
    for a in &system.kinetic {
        let (ok, margins) = a.satisfies(&p, tol).map_err(runtime)?;
        println!(
            "kinetic[{}]: satisfied = {}, margins = {}",
            a.name,
            if ok { "yes" } else { "no" },
            margins
                .iter()
                .map(|m| format!("{m}"))
                .collect::<Vec<_>>()
                .join(",")
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// check-frame
// ---------------------------------------------------------------------------

fn cmd_check_frame(args: CheckFrameArgs) -> Result<(), CmdError> {
    let scenario = load(&args.scenario)?;
    let system = &scenario.system;
    let Some(frame) = system.frames.get(&args.frame) else {
        return Err(validation(Error::schema(
            format!("frames.{}", args.frame),
            "frame is not defined",
        )));
    };
    let samples = [system.initial.base.clone()];
    let tol = 1e-9;
    for s in &system.positional {
        let yes = s.is_rest_frame(frame, &samples, tol).map_err(runtime)?;
        println!(
            "rest frame of S ({}): {}",
            s.name,
            if yes { "yes" } else { "no" }
        );
    }
    for a in &system.kinetic {
        let yes = a.is_rest_frame(frame, &samples, tol).map_err(runtime)?;
        let tag = match a.kind {
            KineticKind::Permanent => "A",
            KineticKind::Instantaneous { .. } => "B",
        };
        println!(
            "rest frame of {tag} ({}): {}",
            a.name,
            if yes { "yes" } else { "no" }
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

fn cmd_validate(args: ValidateArgs) -> Result<(), CmdError> {
    let scenario = load(&args.scenario)?;
    println!("ok: {}", args.scenario.display());
    println!("coords = {}", scenario.system.coords.join(","));
    println!(
        "constraints = {} positional, {} kinetic",
        scenario.system.positional.len(),
        scenario.system.kinetic.len()
    );
    Ok(())
}
