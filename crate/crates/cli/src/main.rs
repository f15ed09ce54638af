//! Command-line driver, binary name `tol`.
//!
//! Verdict-style subcommands exit 0 for a found dip, 1 for a proven
//! absence, 2 for inconclusive; any failure exits above 2 with the
//! category encoded (64 usage, 65 bad data, 66 missing input, 70
//! runtime). With `--json` every command prints exactly one JSON object
//! on stdout; diagnostics always go to stderr. Each run echoes its
//! fully resolved configuration (including defaulted values and seeds)
//! so the output alone is enough to reproduce it.

mod render;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use std::path::{Path, PathBuf};
use tolerance_core::estimates::{
    decompose_segments, example2_tolerance_condition, passage_time_bounds, y_peak,
    ConditionOutcome, SegmentDecomposition,
};
use tolerance_core::geometry::{classify_excitable, Classifier, ExcursionRegion, StripAboveExcursion};
use tolerance_core::integrate::{
    in_basin, integrate, integrate_backward_to_axis, Direction, IntegrateError,
    IntegrationOptions, Trajectory,
};
use tolerance_core::linalg::{Eigen2, Mat2, Vec2};
use tolerance_core::linear::{analyze, tolerance_region, verdict_linear, LinearOutcome};
use tolerance_core::scan::{scan_grid, GridSpec, ToleranceMap};
use tolerance_core::system::{FixedPointClass, FixedPointReport, PlanarSystem, BUILTIN_NAMES};
use tolerance_core::tolerance::{
    robustness_balls, Outcome, PairContext, ToleranceError, ToleranceOptions,
};

const EX_USAGE: i32 = 64;
const EX_DATA: i32 = 65;
const EX_NOINPUT: i32 = 66;
const EX_SOFTWARE: i32 = 70;

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(m: impl Into<String>) -> Failure {
        Failure { code: EX_USAGE, message: m.into() }
    }
    fn data(m: impl Into<String>) -> Failure {
        Failure { code: EX_DATA, message: m.into() }
    }
    fn noinput(m: impl Into<String>) -> Failure {
        Failure { code: EX_NOINPUT, message: m.into() }
    }
    fn internal(m: impl Into<String>) -> Failure {
        Failure { code: EX_SOFTWARE, message: m.into() }
    }
}

impl From<ToleranceError> for Failure {
    fn from(e: ToleranceError) -> Failure {
        match e {
            ToleranceError::Integrate(i) => Failure::internal(i.to_string()),
            other => Failure::data(other.to_string()),
        }
    }
}

impl From<IntegrateError> for Failure {
    fn from(e: IntegrateError) -> Failure {
        Failure::internal(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "tol",
    version,
    about = "Transient-overtaking (tolerance) analysis for planar ODE systems",
    disable_help_subcommand = true
)]
struct Cli {
    /// Print one JSON object on stdout instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a system, locate its fixed points, and check the standing
    /// assumptions (stable attracting node; optional start in its basin).
    Check(CheckArgs),
    /// Integrate one trajectory and print sampled states.
    Simulate(SimulateArgs),
    /// Decide whether a perturbed start ever drops below the reference.
    Verdict(VerdictArgs),
    /// Pulse classification and the guarantee regions of one reference.
    Regions(RegionsArgs),
    /// Evaluate a grid of perturbed starts against one reference.
    Scan(ScanArgs),
    /// Closed-form analysis of a constant-coefficient system.
    Linear(LinearArgs),
    /// Passage-time bounds and the saturating-system dip condition.
    Estimate(EstimateArgs),
    /// Static SVG phase portrait (trajectories, isoclines, regions, maps).
    Render(RenderArgs),
}

/// `--system NAME|PATH`: builtin name or key=value definition file.
#[derive(Args)]
struct SystemArg {
    /// Builtin name (ex1, ex2, ex3) or path to a definition file with
    /// `f = ...` / `g = ...` (or `A = a,b,c,d`) lines.
    #[arg(long)]
    system: String,
}

impl SystemArg {
    fn resolve(&self) -> Result<(PlanarSystem, serde_json::Value), Failure> {
        if BUILTIN_NAMES.contains(&self.system.as_str()) {
            let sys = PlanarSystem::builtin(&self.system).map_err(|e| Failure::data(e.to_string()))?;
            return Ok((sys, json!({ "builtin": self.system })));
        }
        let path = Path::new(&self.system);
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Failure::noinput(format!(
                    "`{}` is neither a builtin ({}) nor a readable file",
                    self.system,
                    BUILTIN_NAMES.join(", ")
                ))
            } else {
                Failure::internal(format!("reading {}: {e}", self.system))
            }
        })?;
        let sys = PlanarSystem::from_definition(&text)
            .map_err(|e| Failure::data(format!("{}: {e}", self.system)))?;
        Ok((
            sys,
            json!({ "file": self.system, "name": sys.name() }),
        ))
    }
}

/// Shared integrator and verdict knobs.
#[derive(Args)]
struct NumericsArgs {
    /// Relative step tolerance.
    #[arg(long)]
    rel_tol: Option<f64>,
    /// Absolute step tolerance.
    #[arg(long)]
    abs_tol: Option<f64>,
    /// Integration horizon in time units.
    #[arg(long)]
    horizon: Option<f64>,
    /// Step budget.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Dip significance threshold.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Asymptotic tie threshold.
    #[arg(long)]
    tie: Option<f64>,
    /// Try the backward-orbit shortcut before integrating the pair.
    #[arg(long)]
    group_shortcut: bool,
}

impl NumericsArgs {
    fn tolerance_options(&self) -> Result<ToleranceOptions, Failure> {
        let mut opts = ToleranceOptions::default();
        if let Some(v) = self.rel_tol {
            require(v > 0.0 && v.is_finite(), "--rel-tol must be positive")?;
            opts.integration.rel_tol = v;
        }
        if let Some(v) = self.abs_tol {
            require(v > 0.0 && v.is_finite(), "--abs-tol must be positive")?;
            opts.integration.abs_tol = v;
        }
        if let Some(v) = self.horizon {
            require(v > 0.0 && v.is_finite(), "--horizon must be positive")?;
            opts.integration.horizon = v;
        }
        if let Some(v) = self.max_steps {
            require(v > 0, "--max-steps must be positive")?;
            opts.integration.max_steps = v;
        }
        if let Some(v) = self.epsilon {
            require(v > 0.0 && v.is_finite(), "--epsilon must be positive")?;
            opts.epsilon_tol = v;
        }
        if let Some(v) = self.tie {
            require(v > 0.0 && v.is_finite(), "--tie must be positive")?;
            opts.tie_threshold = v;
        }
        opts.group_shortcut = self.group_shortcut;
        Ok(opts)
    }

    fn echo(&self, opts: &ToleranceOptions) -> serde_json::Value {
        json!({
            "rel_tol": opts.integration.rel_tol,
            "abs_tol": opts.integration.abs_tol,
            "horizon": opts.integration.horizon,
            "max_steps": opts.integration.max_steps,
            "epsilon": opts.epsilon_tol,
            "tie": opts.tie_threshold,
            "group_shortcut": opts.group_shortcut,
        })
    }
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    system: SystemArg,
    /// Fixed-point search box, `x0,x1,y0,y1`.
    #[arg(long, value_parser = parse_box, default_value = "-0.5,5,-0.5,5", allow_hyphen_values = true)]
    r#box: (f64, f64, f64, f64),
    /// Newton seeds per axis.
    #[arg(long, default_value_t = 9)]
    seeds: usize,
    /// Also check that this start lies in the node's basin.
    #[arg(long, value_parser = parse_point)]
    start: Option<Vec2>,
    #[command(flatten)]
    numerics: NumericsArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    system: SystemArg,
    /// Starting state `x,y`.
    #[arg(long, value_parser = parse_point)]
    start: Vec2,
    /// Integrate in reverse time.
    #[arg(long, conflicts_with = "until_axis")]
    backward: bool,
    /// Integrate in reverse time until the orbit reaches an axis.
    #[arg(long)]
    until_axis: bool,
    /// Number of uniformly spaced output samples.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    numerics: NumericsArgs,
}

#[derive(Args)]
struct VerdictArgs {
    #[command(flatten)]
    system: SystemArg,
    /// Reference start `x,y`.
    #[arg(long = "ref", value_parser = parse_point)]
    reference: Vec2,
    /// Perturbed start `x,y`.
    #[arg(long = "pert", value_parser = parse_point)]
    perturbed: Vec2,
    /// Also sample this many perturbed pairs in balls around both
    /// starts and report the fraction preserving the dip.
    #[arg(long, default_value_t = 0)]
    robustness: usize,
    /// Initial ball radius for the robustness sample.
    #[arg(long, default_value_t = 1e-3)]
    ball_radius: f64,
    /// Seed for the robustness sample.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[command(flatten)]
    numerics: NumericsArgs,
}

#[derive(Args)]
struct RegionsArgs {
    #[command(flatten)]
    system: SystemArg,
    /// Reference start `x,y`.
    #[arg(long = "ref", value_parser = parse_point)]
    reference: Vec2,
    /// Box for tracing the inhibition boundary, `x0,x1,y0,y1`
    /// (defaults to a box spanning the excursion).
    #[arg(long, value_parser = parse_box, allow_hyphen_values = true)]
    r#box: Option<(f64, f64, f64, f64)>,
    #[command(flatten)]
    numerics: NumericsArgs,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    system: SystemArg,
    /// Reference start `x,y`.
    #[arg(long = "ref", value_parser = parse_point)]
    reference: Vec2,
    /// Grid box `x0,x1,y0,y1`.
    #[arg(long, value_parser = parse_box, allow_hyphen_values = true)]
    r#box: (f64, f64, f64, f64),
    /// Cells per axis, `N` or `NX,NY`.
    #[arg(long, value_parser = parse_res, default_value = "10")]
    res: (usize, usize),
    /// Write per-cell CSV to this path (`-` for stdout).
    #[arg(long)]
    csv: Option<String>,
    /// Write an SVG heat map to this path.
    #[arg(long)]
    svg: Option<PathBuf>,
    #[command(flatten)]
    numerics: NumericsArgs,
}

#[derive(Args)]
struct LinearArgs {
    /// Row-major coefficients `a,b,c,d` of the system matrix.
    #[arg(long, value_parser = parse_matrix, allow_hyphen_values = true)]
    matrix: Mat2,
    /// Reference start `x,y`.
    #[arg(long = "ref", value_parser = parse_point)]
    reference: Vec2,
    /// Perturbed start `x,y`.
    #[arg(long = "pert", value_parser = parse_point)]
    perturbed: Vec2,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    system: SystemArg,
    /// Reference start `x,y`.
    #[arg(long = "ref", value_parser = parse_point)]
    reference: Vec2,
    /// Perturbed start `x,y`.
    #[arg(long = "pert", value_parser = parse_point)]
    perturbed: Vec2,
    /// Terminal first-component level for the passage-time bounds
    /// (default: where the reference's second component peaks).
    #[arg(long)]
    x_f: Option<f64>,
    #[command(flatten)]
    numerics: NumericsArgs,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    system: SystemArg,
    /// Reference start: drawn in red, with its guarantee regions.
    #[arg(long = "ref", value_parser = parse_point)]
    reference: Option<Vec2>,
    /// Extra trajectory start `x,y`; repeatable.
    #[arg(long = "traj", value_parser = parse_point)]
    trajectories: Vec<Vec2>,
    /// Isocline levels: `lo:hi:count` or a comma-separated list.
    #[arg(long, allow_hyphen_values = true)]
    isoclines: Option<String>,
    /// Viewport `x0,x1,y0,y1` (default: fit the drawn content).
    #[arg(long, value_parser = parse_box, allow_hyphen_values = true)]
    r#box: Option<(f64, f64, f64, f64)>,
    /// Verdict heat map resolution (cells per axis); needs --ref.
    #[arg(long)]
    map_res: Option<usize>,
    /// Canvas size in pixels, `W,H`.
    #[arg(long, value_parser = parse_size, default_value = "800,600")]
    size: (f64, f64),
    /// Output path (default stdout). With --frames, the stem for the
    /// numbered files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit this many SVGs with trajectories truncated to growing
    /// prefixes; requires --out.
    #[arg(long)]
    frames: Option<usize>,
    #[command(flatten)]
    numerics: NumericsArgs,
}

fn require(ok: bool, msg: &str) -> Result<(), Failure> {
    if ok {
        Ok(())
    } else {
        Err(Failure::usage(msg))
    }
}

fn parse_point(s: &str) -> Result<Vec2, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(format!("expected `x,y`, got `{s}`"));
    }
    let x: f64 = parts[0].parse().map_err(|_| format!("bad number `{}`", parts[0]))?;
    let y: f64 = parts[1].parse().map_err(|_| format!("bad number `{}`", parts[1]))?;
    if !(x.is_finite() && y.is_finite()) {
        return Err(format!("coordinates must be finite, got `{s}`"));
    }
    Ok(Vec2::new(x, y))
}

fn parse_matrix(s: &str) -> Result<Mat2, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(format!("expected `a,b,c,d`, got `{s}`"));
    }
    let mut v = [0.0f64; 4];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| format!("bad number `{p}`"))?;
    }
    Ok(Mat2::new(v[0], v[1], v[2], v[3]))
}

fn parse_box(s: &str) -> Result<(f64, f64, f64, f64), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(format!("expected `x0,x1,y0,y1`, got `{s}`"));
    }
    let mut v = [0.0f64; 4];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| format!("bad number `{p}`"))?;
    }
    if !(v[0] < v[1] && v[2] < v[3]) {
        return Err(format!("box must satisfy x0 < x1 and y0 < y1, got `{s}`"));
    }
    Ok((v[0], v[1], v[2], v[3]))
}

fn parse_res(s: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = |p: &str| format!("bad cell count `{p}`");
    match parts.as_slice() {
        [n] => {
            let n: usize = n.parse().map_err(|_| bad(n))?;
            Ok((n, n))
        }
        [nx, ny] => Ok((
            nx.parse().map_err(|_| bad(nx))?,
            ny.parse().map_err(|_| bad(ny))?,
        )),
        _ => Err(format!("expected `N` or `NX,NY`, got `{s}`")),
    }
}

fn parse_size(s: &str) -> Result<(f64, f64), String> {
    let p = parse_point(s)?;
    if !(p.x >= 100.0 && p.y >= 100.0) {
        return Err("canvas must be at least 100x100 pixels".to_string());
    }
    Ok((p.x, p.y))
}

fn pt_json(p: Vec2) -> serde_json::Value {
    json!([p.x, p.y])
}

fn eigen_json(e: &Eigen2) -> serde_json::Value {
    match e {
        Eigen2::RealDistinct { first, second, .. } => {
            json!({ "kind": "real-distinct", "values": [first, second] })
        }
        Eigen2::RealRepeatedDiagonal { lambda } => {
            json!({ "kind": "repeated-diagonal", "values": [lambda, lambda] })
        }
        Eigen2::RealRepeatedDefective { lambda, .. } => {
            json!({ "kind": "repeated-defective", "values": [lambda, lambda] })
        }
        Eigen2::Complex { re, im } => {
            json!({ "kind": "complex", "real": re, "imaginary": im })
        }
    }
}

fn fixed_point_json(r: &FixedPointReport) -> serde_json::Value {
    json!({
        "location": pt_json(r.location),
        "class": r.class.to_string(),
        "eigen": eigen_json(&r.eigen),
        "residual": r.residual,
        "stable_node": r.satisfies_stable_node_assumption,
    })
}

/// Print the single output object (JSON mode) or the rendered text with
/// a one-line config echo.
fn emit(json_mode: bool, payload: &serde_json::Value, text: String) {
    if json_mode {
        println!("{}", serde_json::to_string_pretty(payload).expect("serializable payload"));
    } else {
        if let Some(cfg) = payload.get("config") {
            println!("config {cfg}");
        }
        print!("{text}");
    }
}

fn write_or_stdout(path: Option<&Path>, content: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, content)
            .map_err(|e| Failure::internal(format!("writing {}: {e}", p.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let threads = match init_threads() {
        Ok(t) => t,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return f.code;
        }
    };
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                eprint!("{e}");
                return EX_USAGE;
            }
            // --help / --version
            print!("{e}");
            return 0;
        }
    };
    let json = cli.json;
    let result = match cli.command {
        Command::Check(a) => cmd_check(a, json, threads),
        Command::Simulate(a) => cmd_simulate(a, json, threads),
        Command::Verdict(a) => cmd_verdict(a, json, threads),
        Command::Regions(a) => cmd_regions(a, json, threads),
        Command::Scan(a) => cmd_scan(a, json, threads),
        Command::Linear(a) => cmd_linear(a, json, threads),
        Command::Estimate(a) => cmd_estimate(a, json, threads),
        Command::Render(a) => cmd_render(a, json, threads),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// Configure the global worker pool from `TOL_THREADS`; echoes the
/// effective setting into every config block.
fn init_threads() -> Result<serde_json::Value, Failure> {
    match std::env::var("TOL_THREADS") {
        Ok(v) => {
            let n: usize = v
                .parse()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| Failure::usage(format!("TOL_THREADS must be a positive integer, got `{v}`")))?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Failure::internal(format!("thread pool: {e}")))?;
            Ok(json!(n))
        }
        Err(_) => Ok(json!("default")),
    }
}

fn cmd_check(a: CheckArgs, json_mode: bool, threads: serde_json::Value) -> Result<i32, Failure> {
    let (sys, sys_echo) = a.system.resolve()?;
    let opts = a.numerics.tolerance_options()?;
    let (x0, x1, y0, y1) = a.r#box;
    let points = sys
        .find_fixed_points((x0, x1), (y0, y1), a.seeds)
        .map_err(|e| Failure::data(e.to_string()))?;
    let nodes: Vec<&FixedPointReport> = points
        .iter()
        .filter(|r| r.satisfies_stable_node_assumption)
        .collect();
    let anchor = a.start.unwrap_or(Vec2::new(0.0, 0.0));
    let node = nodes
        .iter()
        .min_by(|a, b| {
            a.location
                .dist(anchor)
                .total_cmp(&b.location.dist(anchor))
        })
        .copied();

    let mut basin = json!(null);
    let mut code = if node.is_some() { 0 } else { 1 };
    if let (Some(start), Some(node)) = (a.start, node) {
        let status = in_basin(&sys, start, node.location, &opts.integration)?;
        basin = json!({
            "start": pt_json(start),
            "node": pt_json(node.location),
            "status": status.label(),
        });
        if !status.is_in() {
            code = if status.conclusive() { 1 } else { 2 };
        }
    }

    let config = json!({
        "command": "check",
        "system": sys_echo,
        "box": [x0, x1, y0, y1],
        "seeds": a.seeds,
        "start": a.start.map(pt_json),
        "numerics": a.numerics.echo(&opts),
        "threads": threads,
    });
    let payload = json!({
        "config": config,
        "fixed_points": points.iter().map(fixed_point_json).collect::<Vec<_>>(),
        "attracting_node": node.map(|n| pt_json(n.location)),
        "basin": basin,
    });
    let mut text = String::new();
    for p in &points {
        text.push_str(&format!(
            "fixed point ({:.6}, {:.6}): {}\n",
            p.location.x, p.location.y, p.class
        ));
    }
    match node {
        Some(n) => text.push_str(&format!(
            "attracting node at ({:.6}, {:.6})\n",
            n.location.x, n.location.y
        )),
        None => text.push_str("no attracting node found in the search box\n"),
    }
    if let Some(b) = basin.get("status") {
        text.push_str(&format!("basin status for the start: {b}\n"));
    }
    emit(json_mode, &payload, text);
    Ok(code)
}

fn cmd_simulate(a: SimulateArgs, json_mode: bool, threads: serde_json::Value) -> Result<i32, Failure> {
    let (sys, sys_echo) = a.system.resolve()?;
    let opts = a.numerics.tolerance_options()?;
    require(a.samples >= 2, "--samples must be at least 2")?;
    let traj = if a.until_axis {
        integrate_backward_to_axis(&sys, a.start, &opts.integration)?
    } else {
        let dir = if a.backward { Direction::Backward } else { Direction::Forward };
        integrate(&sys, a.start, dir, &opts.integration)?
    };
    let end = traj.end_time();
    let mut rows = Vec::with_capacity(a.samples + 1);
    for k in 0..=a.samples {
        let t = end * k as f64 / a.samples as f64;
        let s = traj.state_at(t);
        rows.push((t, s));
    }

    let config = json!({
        "command": "simulate",
        "system": sys_echo,
        "start": pt_json(a.start),
        "backward": a.backward,
        "until_axis": a.until_axis,
        "samples": a.samples,
        "numerics": a.numerics.echo(&opts),
        "threads": threads,
    });
    if json_mode {
        let payload = json!({
            "config": config,
            "end_time": end,
            "end_state": pt_json(traj.state_at(end)),
            "events": traj.events_json(),
            "samples": rows
                .iter()
                .map(|(t, s)| json!([t, s.x, s.y]))
                .collect::<Vec<_>>(),
        });
        emit(true, &payload, String::new());
        return Ok(0);
    }
    let mut csv = String::from("t,x,y\n");
    for (t, s) in &rows {
        csv.push_str(&format!("{t},{},{}\n", s.x, s.y));
    }
    if a.out.is_some() {
        println!("config {config}");
    }
    write_or_stdout(a.out.as_deref(), &csv)?;
    Ok(0)
}

fn outcome_exit(outcome: Outcome) -> i32 {
    match outcome {
        Outcome::Tolerance => 0,
        Outcome::NoTolerance => 1,
        Outcome::Inconclusive => 2,
    }
}

fn cmd_verdict(a: VerdictArgs, json_mode: bool, threads: serde_json::Value) -> Result<i32, Failure> {
    let (sys, sys_echo) = a.system.resolve()?;
    let opts = a.numerics.tolerance_options()?;
    require(
        a.ball_radius > 0.0 && a.ball_radius.is_finite(),
        "--ball-radius must be positive",
    )?;
    let ctx = PairContext::new(&sys, a.reference, &opts)?;
    let v = ctx.verdict(a.perturbed)?;

    let mut robustness = json!(null);
    if a.robustness > 0 {
        robustness = if v.outcome == Outcome::Tolerance {
            let r = robustness_balls(
                &sys,
                a.reference,
                a.perturbed,
                &v,
                a.robustness,
                a.ball_radius,
                a.seed,
                &opts,
            )?;
            json!({
                "n_samples": r.n_samples,
                "initial_radius": r.initial_radius,
                "final_radius": r.final_radius,
                "halvings": r.halvings,
                "fraction": r.fraction,
                "history": r.history,
                "seed": r.seed,
            })
        } else {
            json!({ "skipped": "the verdict is not a dip, so there is nothing to preserve" })
        };
    }

    let config = json!({
        "command": "verdict",
        "system": sys_echo,
        "ref": pt_json(a.reference),
        "pert": pt_json(a.perturbed),
        "robustness": a.robustness,
        "ball_radius": a.ball_radius,
        "seed": a.seed,
        "numerics": a.numerics.echo(&opts),
        "threads": threads,
    });
    let payload = json!({
        "config": config,
        "verdict": v.to_json(),
        "robustness": robustness,
    });
    let mut text = format!("outcome: {}\n", v.outcome.label());
    if let Some(j) = &v.justification {
        text.push_str(&format!("justification: {j}\n"));
    }
    if let (Some(t1), Some(tau)) = (v.t1, v.tau) {
        text.push_str(&format!("onset t1 = {t1:.9}, witness tau = {tau:.9}\n"));
    }
    if let Some(t2) = v.t2 {
        text.push_str(&format!("recovery t2 = {t2:.9}\n"));
    }
    text.push_str(&format!("margin = {:.3e} over horizon {:.3}\n", v.margin, v.horizon));
    if let Some(frac) = robustness.get("fraction") {
        text.push_str(&format!(
            "robustness: fraction {frac} at radius {}\n",
            robustness["final_radius"]
        ));
    }
    emit(json_mode, &payload, text);
    Ok(outcome_exit(v.outcome))
}

fn cmd_regions(a: RegionsArgs, json_mode: bool, threads: serde_json::Value) -> Result<i32, Failure> {
    let (sys, sys_echo) = a.system.resolve()?;
    let opts = a.numerics.tolerance_options()?;
    let report = classify_excitable(&sys, a.reference, &opts)?;

    let mut excursion = json!(null);
    let mut strip = json!(null);
    if report.n >= 1 {
        excursion = ExcursionRegion::new(&report)?.to_json();
        strip = StripAboveExcursion::new(&sys, &report, &opts)?.to_json();
    }
    let bounds = a.r#box.unwrap_or_else(|| {
        let pad = (report.max_x - report.start().x).max(1.0);
        (
            (report.start().x - 0.5 * pad).max(0.0),
            report.max_x + 0.5 * pad,
            0.0,
            (report.y_at_last_max.max(report.start().y) + pad).max(2.0),
        )
    });
    let inhibition = render::level_segments(
        &|p| sys.jacobian(p).ok().map(|j| j.b),
        bounds,
        96,
        96,
    );

    let config = json!({
        "command": "regions",
        "system": sys_echo,
        "ref": pt_json(a.reference),
        "box": [bounds.0, bounds.1, bounds.2, bounds.3],
        "numerics": a.numerics.echo(&opts),
        "threads": threads,
    });
    let payload = json!({
        "config": config,
        "excitability": report.to_json(),
        "excursion": excursion,
        "strip": strip,
        "inhibition_boundary": inhibition
            .iter()
            .map(|(p, q)| json!([[p.x, p.y], [q.x, q.y]]))
            .collect::<Vec<_>>(),
    });
    let mut text = format!(
        "pulses n = {}, largest first component = {:.6}\n",
        report.n, report.max_x
    );
    if report.n >= 1 {
        text.push_str(&format!(
            "excursion: returns to x = {:.6} at height y = {:.6}\n",
            report.start().x,
            report.y_at_return.unwrap_or(f64::NAN)
        ));
        if let Some(f_ok) = strip.get("f_nonpositive") {
            text.push_str(&format!("strip above the excursion verified: {f_ok}\n"));
        }
    } else {
        text.push_str("not excitable: no guarantee regions\n");
    }
    text.push_str(&format!(
        "inhibition boundary segments in the box: {}\n",
        inhibition.len()
    ));
    emit(json_mode, &payload, text);
    Ok(0)
}

fn cmd_scan(a: ScanArgs, json_mode: bool, threads: serde_json::Value) -> Result<i32, Failure> {
    let (sys, sys_echo) = a.system.resolve()?;
    let opts = a.numerics.tolerance_options()?;
    let (x0, x1, y0, y1) = a.r#box;
    let grid = GridSpec::new((x0, x1), (y0, y1), a.res.0, a.res.1)
        .map_err(|e| Failure::usage(e.to_string()))?;
    let map = scan_grid(&sys, a.reference, grid, &opts)?;

    if let Some(csv) = &a.csv {
        let content = map.to_csv();
        if csv == "-" {
            if !json_mode {
                print!("{content}");
            }
        } else {
            std::fs::write(csv, &content)
                .map_err(|e| Failure::internal(format!("writing {csv}: {e}")))?;
        }
    }
    if let Some(svg) = &a.svg {
        let doc = render_map(&map, (800.0, 600.0));
        std::fs::write(svg, &doc)
            .map_err(|e| Failure::internal(format!("writing {}: {e}", svg.display())))?;
    }

    let config = json!({
        "command": "scan",
        "system": sys_echo,
        "ref": pt_json(a.reference),
        "box": [x0, x1, y0, y1],
        "res": [a.res.0, a.res.1],
        "csv": a.csv,
        "svg": a.svg.as_ref().map(|p| p.display().to_string()),
        "numerics": a.numerics.echo(&opts),
        "threads": threads,
    });
    let payload = json!({
        "config": config,
        "map": map.to_json(),
        "sound": map.sound(),
    });
    let s = &map.summary;
    let text = format!(
        concat!(
            "{} cells: {} evaluated ({} dip, {} no-dip, {} inconclusive), ",
            "{} left of the reference, {} outside the basin, {} errors\n",
            "predictions: {} guaranteed, {} impossible, {} open; soundness violations: {}\n"
        ),
        map.grid.cell_count(),
        s.evaluated,
        s.tolerance,
        s.no_tolerance,
        s.inconclusive,
        s.left_of_reference,
        s.outside_basin,
        s.errors,
        s.guaranteed,
        s.impossible,
        s.possible,
        s.prediction_violations,
    );
    emit(json_mode, &payload, text);
    Ok(0)
}

fn cmd_linear(a: LinearArgs, json_mode: bool, threads: serde_json::Value) -> Result<i32, Failure> {
    let an = analyze(a.matrix).map_err(|e| Failure::data(e.to_string()))?;
    let v = verdict_linear(&an, a.reference, a.perturbed)?;
    let region = match tolerance_region(&an, a.reference) {
        Ok(r) => r.to_json(),
        Err(e) => json!({ "unavailable": e.to_string() }),
    };

    let config = json!({
        "command": "linear",
        "matrix": [a.matrix.a, a.matrix.b, a.matrix.c, a.matrix.d],
        "ref": pt_json(a.reference),
        "pert": pt_json(a.perturbed),
        "threads": threads,
    });
    let payload = json!({
        "config": config,
        "analysis": an.to_json(),
        "verdict": v.to_json(),
        "region": region,
    });
    let mut text = format!(
        "eigenvalues: slow {:.9}, fast {:.9}\noutcome: {} (rule: {})\n",
        an.lambda_slow,
        an.lambda_fast,
        v.outcome.label(),
        v.rule
    );
    if let LinearOutcome::YesAfter(t) = v.outcome {
        text.push_str(&format!("first-component crossing at t = {t:.9}\n"));
    }
    if let (Some(d), Some(td)) = (v.max_depth, v.depth_time) {
        text.push_str(&format!("deepest possible dip {d:.9} at t = {td:.9}\n"));
    }
    emit(json_mode, &payload, text);
    Ok(match v.outcome {
        LinearOutcome::YesAfter(_) => 0,
        LinearOutcome::No => 1,
        LinearOutcome::DegenerateTie => 2,
    })
}

fn dec_json(d: &SegmentDecomposition) -> serde_json::Value {
    json!({
        "segments": d
            .segments
            .iter()
            .map(|s| json!({
                "t": [s.t_from, s.t_to],
                "x": [s.x_from, s.x_to],
                "y": [s.y_from, s.y_to],
                "sup_speed": s.sup_speed,
                "inf_speed": s.inf_speed,
            }))
            .collect::<Vec<_>>(),
        "breakpoints": d.breakpoints,
        "x_terminal": d.x_terminal,
        "y_terminal": d.y_terminal,
        "t_terminal": d.t_terminal,
        "x_max": d.x_max(),
    })
}

fn cmd_estimate(a: EstimateArgs, json_mode: bool, threads: serde_json::Value) -> Result<i32, Failure> {
    let (sys, sys_echo) = a.system.resolve()?;
    let opts = a.numerics.tolerance_options()?;
    let ctx_r = PairContext::new(&sys, a.reference, &opts)?;
    let ctx_p = PairContext::new(&sys, a.perturbed, &opts)?;
    let (_, peak) = y_peak(ctx_r.reference());
    let x_f = a.x_f.unwrap_or(peak.x);
    let report = classify_excitable(&sys, a.reference, &opts)?;
    let x_m = if report.n >= 1 { report.max_x } else { a.reference.x };

    let dec_r = decompose_segments(&sys, ctx_r.reference(), x_f)?;
    let dec_p = decompose_segments(&sys, ctx_p.reference(), x_f)?;
    let bounds = passage_time_bounds(&dec_r, &dec_p)?;

    let condition = match example2_tolerance_condition(
        &sys,
        a.reference,
        a.perturbed,
        x_m,
        dec_r.x_terminal,
        dec_r.y_terminal,
    ) {
        Ok(ConditionOutcome::Holds) => json!({ "status": "holds" }),
        Ok(ConditionOutcome::Fails) => json!({ "status": "fails" }),
        Ok(ConditionOutcome::Inapplicable { reason }) => {
            json!({ "status": "inapplicable", "reason": reason })
        }
        Err(e) => json!({ "status": "unavailable", "reason": e.to_string() }),
    };

    let config = json!({
        "command": "estimate",
        "system": sys_echo,
        "ref": pt_json(a.reference),
        "pert": pt_json(a.perturbed),
        "x_f": x_f,
        "numerics": a.numerics.echo(&opts),
        "threads": threads,
    });
    let payload = json!({
        "config": config,
        "reference_decomposition": dec_json(&dec_r),
        "perturbed_decomposition": dec_json(&dec_p),
        "bounds": bounds.to_json(),
        "condition": condition,
    });
    let upper = if bounds.upper_perturbed_time.is_finite() {
        format!("{:.6}", bounds.upper_perturbed_time)
    } else {
        "unbounded".to_string()
    };
    let text = format!(
        concat!(
            "terminal level x_f = {:.6}\n",
            "reference needs at least {:.6} time units; perturbed needs at most {}\n",
            "ordering condition: {}\n",
            "closed-form dip condition: {}\n"
        ),
        x_f,
        bounds.lower_reference_time,
        upper,
        if bounds.condition { "holds (dip guaranteed)" } else { "does not hold" },
        condition["status"].as_str().unwrap_or("?"),
    );
    emit(json_mode, &payload, text);
    Ok(0)
}

fn parse_isoclines(spec: &str) -> Result<Vec<f64>, Failure> {
    let bad = |s: &str| Failure::usage(format!("bad isocline list `{s}`"));
    if let Some((range, count)) = spec.rsplit_once(':').and_then(|(lohi, n)| {
        lohi.split_once(':').map(|(lo, hi)| ((lo, hi), n))
    }) {
        let lo: f64 = range.0.trim().parse().map_err(|_| bad(spec))?;
        let hi: f64 = range.1.trim().parse().map_err(|_| bad(spec))?;
        let n: usize = count.trim().parse().map_err(|_| bad(spec))?;
        if n < 1 || !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(bad(spec));
        }
        if n == 1 {
            return Ok(vec![lo]);
        }
        return Ok((0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect());
    }
    spec.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad(spec)))
        .collect()
}

fn render_map(map: &ToleranceMap, size: (f64, f64)) -> String {
    let vp = render::Viewport::new(
        (map.grid.x_min, map.grid.x_max, map.grid.y_min, map.grid.y_max),
        size.0,
        size.1,
    );
    let mut doc = render::Document::new(size.0, size.1);
    let (dx, dy) = (map.grid.dx(), map.grid.dy());
    for cell in &map.cells {
        let (cx, cy) = (cell.center.x, cell.center.y);
        doc.cell(
            &vp,
            cx - 0.5 * dx,
            cx + 0.5 * dx,
            cy - 0.5 * dy,
            cy + 0.5 * dy,
            render::map_color(&heat_label(cell.outcome_label(), &cell.prediction_label())),
        );
    }
    doc.axes(&vp);
    doc.marker(&vp, map.reference, 4.0, render::REFERENCE_COLOR, "reference start");
    let legend: Vec<(String, String)> = render::MAP_COLORS
        .iter()
        .map(|(k, c)| (c.to_string(), k.to_string()))
        .collect();
    doc.legend(&vp, &legend);
    doc.finish()
}

/// Cell fill: verdicts where available, otherwise the skip reason.
fn heat_label(outcome: &str, prediction: &str) -> String {
    if outcome != "none" {
        return outcome.to_string();
    }
    if prediction == "left-of-reference" || prediction == "outside-basin" || prediction == "error" {
        return prediction.to_string();
    }
    "error".to_string()
}

fn cmd_render(a: RenderArgs, json_mode: bool, threads: serde_json::Value) -> Result<i32, Failure> {
    let (sys, sys_echo) = a.system.resolve()?;
    let opts = a.numerics.tolerance_options()?;
    if a.frames.is_some() && a.out.is_none() {
        return Err(Failure::usage("--frames needs --out to name the files"));
    }
    if a.map_res.is_some() && a.reference.is_none() {
        return Err(Failure::usage("--map-res needs --ref"));
    }

    // Integrate every requested curve once; frames reuse the samples.
    let mut curves: Vec<(Vec<(f64, Vec2)>, &str)> = Vec::new();
    if let Some(r0) = a.reference {
        let traj = trajectory_for_render(&sys, r0, &opts)?;
        curves.push((traj.dense_samples(4), render::REFERENCE_COLOR));
    }
    for (k, &start) in a.trajectories.iter().enumerate() {
        let traj = trajectory_for_render(&sys, start, &opts)?;
        let color = render::TRAJECTORY_COLORS[k % render::TRAJECTORY_COLORS.len()];
        curves.push((traj.dense_samples(4), color));
    }

    let bounds = match a.r#box {
        Some(b) => b,
        None => fit_bounds(&curves).ok_or_else(|| {
            Failure::usage("nothing to draw and no --box given; pass --ref, --traj, or --box")
        })?,
    };

    let levels = a
        .isoclines
        .as_deref()
        .map(parse_isoclines)
        .transpose()?
        .unwrap_or_default();

    let map = match a.map_res {
        Some(res) => {
            let grid = GridSpec::new(
                (bounds.0, bounds.1),
                (bounds.2, bounds.3),
                res.max(2),
                res.max(2),
            )
            .map_err(|e| Failure::usage(e.to_string()))?;
            Some(scan_grid(&sys, a.reference.unwrap(), grid, &opts)?)
        }
        None => None,
    };

    let frames = a.frames.unwrap_or(1).max(1);
    let mut outputs = Vec::new();
    for frame in 0..frames {
        let fraction = if frames == 1 {
            1.0
        } else {
            frame as f64 / (frames - 1) as f64
        };
        let doc = render_scene(&sys, &a, &opts, bounds, &levels, map.as_ref(), &curves, fraction)?;
        if frames == 1 {
            if a.out.is_some() || !json_mode {
                write_or_stdout(a.out.as_deref(), &doc)?;
            }
            if json_mode {
                let payload = json!({
                    "config": render_config(&a, &sys_echo, bounds, &opts, &threads),
                    "out": a.out.as_ref().map(|p| p.display().to_string()),
                    "svg": if a.out.is_some() { json!(null) } else { json!(doc) },
                });
                emit(true, &payload, String::new());
            }
            return Ok(0);
        }
        let base = a.out.as_ref().unwrap();
        let path = frame_path(base, frame);
        std::fs::write(&path, &doc)
            .map_err(|e| Failure::internal(format!("writing {}: {e}", path.display())))?;
        outputs.push(path.display().to_string());
    }
    let payload = json!({
        "config": render_config(&a, &sys_echo, bounds, &opts, &threads),
        "frames": outputs,
    });
    emit(json_mode, &payload, format!("wrote {} frames\n", outputs.len()));
    Ok(0)
}

fn render_config(
    a: &RenderArgs,
    sys_echo: &serde_json::Value,
    bounds: (f64, f64, f64, f64),
    opts: &ToleranceOptions,
    threads: &serde_json::Value,
) -> serde_json::Value {
    json!({
        "command": "render",
        "system": sys_echo,
        "ref": a.reference.map(pt_json),
        "traj": a.trajectories.iter().map(|p| pt_json(*p)).collect::<Vec<_>>(),
        "isoclines": a.isoclines,
        "box": [bounds.0, bounds.1, bounds.2, bounds.3],
        "map_res": a.map_res,
        "size": [a.size.0, a.size.1],
        "frames": a.frames,
        "out": a.out.as_ref().map(|p| p.display().to_string()),
        "numerics": a.numerics.echo(opts),
        "threads": threads,
    })
}

fn trajectory_for_render(
    sys: &PlanarSystem,
    start: Vec2,
    opts: &ToleranceOptions,
) -> Result<Trajectory, Failure> {
    let mut io = opts.integration.clone();
    io.allow_partial = true;
    Ok(integrate(sys, start, Direction::Forward, &io)?)
}

fn fit_bounds(curves: &[(Vec<(f64, Vec2)>, &str)]) -> Option<(f64, f64, f64, f64)> {
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (samples, _) in curves {
        for (_, p) in samples {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
    }
    if !(lo.x.is_finite() && hi.x > lo.x - f64::INFINITY) || curves.is_empty() {
        return None;
    }
    let pad_x = (hi.x - lo.x).max(1e-3) * 0.08;
    let pad_y = (hi.y - lo.y).max(1e-3) * 0.08;
    Some((lo.x - pad_x, hi.x + pad_x, lo.y - pad_y, hi.y + pad_y))
}

fn frame_path(base: &Path, frame: usize) -> PathBuf {
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "frame".to_string());
    let ext = base
        .extension()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "svg".to_string());
    base.with_file_name(format!("{stem}-{frame:03}.{ext}"))
}

#[allow(clippy::too_many_arguments)]
fn render_scene(
    sys: &PlanarSystem,
    a: &RenderArgs,
    opts: &ToleranceOptions,
    bounds: (f64, f64, f64, f64),
    levels: &[f64],
    map: Option<&ToleranceMap>,
    curves: &[(Vec<(f64, Vec2)>, &str)],
    fraction: f64,
) -> Result<String, Failure> {
    let vp = render::Viewport::new(bounds, a.size.0, a.size.1);
    let mut doc = render::Document::new(a.size.0, a.size.1);
    let mut legend: Vec<(String, String)> = Vec::new();

    if let Some(map) = map {
        let (dx, dy) = (map.grid.dx(), map.grid.dy());
        for cell in &map.cells {
            let (cx, cy) = (cell.center.x, cell.center.y);
            doc.cell(
                &vp,
                cx - 0.5 * dx,
                cx + 0.5 * dx,
                cy - 0.5 * dy,
                cy + 0.5 * dy,
                render::map_color(&heat_label(cell.outcome_label(), &cell.prediction_label())),
            );
        }
        for (k, c) in render::MAP_COLORS {
            legend.push((c.to_string(), k.to_string()));
        }
    }

    for &c in levels {
        let segs = render::level_segments(
            &|p| sys.f(p).ok().map(|v| v - c),
            bounds,
            160,
            120,
        );
        doc.segments(&vp, &segs, render::ISOCLINE_COLOR, None);
    }
    if !levels.is_empty() {
        legend.push((render::ISOCLINE_COLOR.to_string(), "speed isoclines".to_string()));
    }

    if let Some(r0) = a.reference {
        if let Ok(cls) = Classifier::new(sys, r0, opts) {
            let report = cls.report();
            if report.n >= 1 {
                if let Ok(exc) = ExcursionRegion::new(report) {
                    doc.polygon(&vp, exc.boundary(), render::REGION_COLOR, 0.12, render::REGION_COLOR);
                    legend.push((render::REGION_COLOR.to_string(), "excursion region".to_string()));
                }
                if let Ok(strip) = StripAboveExcursion::new(sys, report, opts) {
                    if strip.f_nonpositive {
                        doc.rect_outline(
                            &vp,
                            strip.x_lo,
                            strip.x_hi,
                            strip.y_floor,
                            bounds.3,
                            render::REGION_COLOR,
                            Some("6 4"),
                        );
                    }
                }
            }
        }
        let inhib = render::level_segments(
            &|p| sys.jacobian(p).ok().map(|j| j.b),
            bounds,
            96,
            96,
        );
        doc.segments(&vp, &inhib, render::INHIBITION_COLOR, Some("2 3"));
        if !inhib.is_empty() {
            legend.push((render::INHIBITION_COLOR.to_string(), "inhibition boundary".to_string()));
        }
    }

    let mut drew_any = map.is_some() || !levels.is_empty();
    for (samples, color) in curves {
        let end = samples.last().map(|(t, _)| *t).unwrap_or(0.0);
        let cut = end * fraction;
        let pts: Vec<Vec2> = samples
            .iter()
            .take_while(|(t, _)| *t <= cut || fraction >= 1.0)
            .map(|(_, p)| *p)
            .collect();
        doc.polyline(&vp, &pts, color, 1.6, None);
        if let Some(first) = pts.first() {
            doc.marker(&vp, *first, 3.0, color, "start");
        }
        drew_any = true;
    }

    if let Ok(points) = sys.find_fixed_points((bounds.0, bounds.1), (bounds.2, bounds.3), 7) {
        for p in &points {
            let fill = if p.class == FixedPointClass::StableNode {
                "#000000"
            } else {
                "#ffffff"
            };
            doc.marker(&vp, p.location, 4.0, fill, &p.class.to_string());
        }
    }

    doc.axes(&vp);
    doc.legend(&vp, &legend);
    if !drew_any {
        doc.text(
            a.size.0 / 2.0,
            a.size.1 / 2.0,
            14.0,
            "middle",
            "nothing to draw: pass --ref, --traj, --isoclines, or --map-res",
        );
    }
    Ok(doc.finish())
}
