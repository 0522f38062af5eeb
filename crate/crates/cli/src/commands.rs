//! Subcommands and their argument parsing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use thinline::eval::evaluate;
use thinline::geometry::project_onto_line;
use thinline::pipelines::{
    detect_edges_2d, detect_vessels_3d, fit_point_cloud, fit_tangents_fixed_q, pixel_position, CloudParams, EdgeParams,
    RidgeParams, Tier, VesselParams,
};
use thinline::raster::Image;
use thinline::synth::{self, RenderParams, TubeShape};

use crate::config::{resolve, Overrides};
use crate::error::CliError;
use crate::io::{self, Pgm, Table, Volume};

#[derive(Debug, Parser)]
#[command(name = "thinline", version, about = "Thin-structure detection with curvature regularization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for synthetic generators.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect edges in a grayscale PGM image.
    Edges2d(EdgesArgs),
    /// Detect vessel center-lines in a vfield volume.
    Vessels3d(VesselsArgs),
    /// Fit tangents to an unordered point cloud (CSV).
    FitPoints(FitPointsArgs),
    /// Fit tangents on hysteresis ridges of a vfield volume.
    FitRidges(RidgesArgs),
    /// Write synthetic inputs with ground truth.
    Synth(SynthArgs),
    /// Score a probability mask against a ground-truth mask.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CurvatureArg {
    Squared,
    Abs,
}

impl CurvatureArg {
    fn name(self) -> &'static str {
        match self {
            CurvatureArg::Squared => "squared",
            CurvatureArg::Abs => "absolute",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NormalizeArg {
    Std,
    Variance,
    None,
}

impl NormalizeArg {
    fn name(self) -> &'static str {
        match self {
            NormalizeArg::Std => "std",
            NormalizeArg::Variance => "variance",
            NormalizeArg::None => "none",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Perpendicular,
    PaperLiteral,
}

#[derive(Debug, Clone, Args)]
pub struct CurvatureArgs {
    /// Curvature regularizer.
    #[arg(long, value_enum)]
    pub curvature: Option<CurvatureArg>,
    /// Reweighting scale of the absolute mode, in pixels.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

impl CurvatureArgs {
    fn apply(&self, o: &mut Overrides, prefix: &str) {
        let path = |leaf: &str| if prefix.is_empty() { leaf.to_string() } else { format!("{prefix}.{leaf}") };
        o.set(&path("curvature.kind"), self.curvature.map(CurvatureArg::name));
        o.set(&path("curvature.epsilon"), self.epsilon);
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Maximum outer (tangent / indicator) iterations.
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// Maximum Levenberg-Marquardt iterations per tangent solve.
    #[arg(long)]
    pub max_lm_iters: Option<usize>,
    /// Maximum conjugate-gradient iterations per linear solve.
    #[arg(long)]
    pub max_cg_iters: Option<usize>,
}

impl SolverArgs {
    fn apply(&self, o: &mut Overrides, trust_region: &str, outer: Option<&str>) {
        if let Some(outer) = outer {
            o.set(&format!("{outer}.max_outer"), self.max_outer);
        }
        o.set(&format!("{trust_region}.max_iters"), self.max_lm_iters);
        o.set(&format!("{trust_region}.max_cg_iters"), self.max_cg_iters);
    }
}

#[derive(Debug, Clone, Args)]
pub struct LikelihoodArgs {
    /// Detection cost at zero feature strength.
    #[arg(long)]
    pub lambda_offset: Option<f64>,
    /// Decrease of the detection cost per unit feature strength.
    #[arg(long)]
    pub lambda_slope: Option<f64>,
    /// How feature magnitudes are made dimensionless.
    #[arg(long, value_enum)]
    pub normalize: Option<NormalizeArg>,
}

impl LikelihoodArgs {
    fn apply(&self, o: &mut Overrides) {
        o.set("likelihood.offset", self.lambda_offset);
        o.set("likelihood.slope", self.lambda_slope);
        o.set("normalization", self.normalize.map(NormalizeArg::name));
    }
}

#[derive(Debug, Args)]
pub struct EdgesArgs {
    /// Grayscale PGM (P2 or P5).
    pub input: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Reward for each active neighbor pair.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Noise scale of the distance constraint, in pixels.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Free band of the distance constraint, in pixels.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Weight of the alignment with gradient-derived directions.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Upsampling factor of the sub-pixel mask.
    #[arg(long)]
    pub scale: Option<usize>,
    /// Sites below this marginal are left out of the mask.
    #[arg(long)]
    pub q_min: Option<f64>,
    /// Initial tangent direction relative to the gradient.
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    #[command(flatten)]
    pub curvature: CurvatureArgs,
    #[command(flatten)]
    pub likelihood: LikelihoodArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct VesselsArgs {
    /// vfield volume with planes v, gx, gy, gz, sigma.
    pub input: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Weight of the alignment with filter directions.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Multiplier of the per-voxel scale in the distance constraint.
    #[arg(long)]
    pub k: Option<f64>,
    /// Fraction of voxels with the highest vesselness kept as sites.
    #[arg(long)]
    pub keep: Option<f64>,
    /// Reward for each active neighbor pair.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Exponent of the misalignment penalty (1 or 2).
    #[arg(long)]
    pub alignment_power: Option<u8>,
    #[command(flatten)]
    pub curvature: CurvatureArgs,
    #[command(flatten)]
    pub likelihood: LikelihoodArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct FitPointsArgs {
    /// CSV with columns x,y or x,y,z (header optional).
    pub input: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Neighbors per point.
    #[arg(long)]
    pub knn: Option<usize>,
    /// Noise scale of the samples.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Point dimension; inferred from the columns when omitted.
    #[arg(long, value_parser = clap::value_parser!(u8).range(2..=3))]
    pub dim: Option<u8>,
    #[command(flatten)]
    pub curvature: CurvatureArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct RidgesArgs {
    /// vfield volume with planes v, gx, gy, gz, sigma.
    pub input: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Vesselness that ridges may grow through.
    #[arg(long)]
    pub low: Option<f64>,
    /// Vesselness that seeds a ridge.
    #[arg(long)]
    pub high: Option<f64>,
    /// Weight of the alignment with filter directions.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Multiplier of the per-voxel scale in the distance constraint.
    #[arg(long)]
    pub k: Option<f64>,
    #[command(flatten)]
    pub curvature: CurvatureArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Circle,
    Line,
    RoundedSquare,
    Disk,
    StepEdge,
    Polygon,
    GapImage,
    EdgeBenchmark,
    Tube3d,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ShapeArg {
    Straight,
    Helix,
    YJunction,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    pub kind: SynthKind,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Circle or disk radius; polygon circumradius; tube radius.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Number of curve samples.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Standard deviation of the noise (coordinates for curves, intensity
    /// units for images).
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Line length or gap-image length.
    #[arg(long)]
    pub length: Option<f64>,
    /// Gap length in pixels.
    #[arg(long)]
    pub gap: Option<usize>,
    /// Bar thickness of the gap image.
    #[arg(long)]
    pub thickness: Option<f64>,
    /// Side of square images and volumes.
    #[arg(long)]
    pub size: Option<usize>,
    /// Side of the rounded square.
    #[arg(long)]
    pub side: Option<f64>,
    /// Corner radius of the rounded square.
    #[arg(long)]
    pub corner_radius: Option<f64>,
    /// Polygon side count.
    #[arg(long)]
    pub sides: Option<usize>,
    /// Rotation in radians (polygon) or direction angle in degrees (line).
    #[arg(long)]
    pub rotation: Option<f64>,
    /// Step-edge image width.
    #[arg(long)]
    pub width: Option<usize>,
    /// Step-edge image height.
    #[arg(long)]
    pub height: Option<usize>,
    /// Step-edge position along x.
    #[arg(long)]
    pub edge: Option<f64>,
    /// Tube center-line shape.
    #[arg(long, value_enum, default_value = "helix")]
    pub shape: ShapeArg,
    /// Distance beyond which tube vesselness is zero.
    #[arg(long)]
    pub cutoff: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted probability mask (PGM; values scaled by maxval).
    pub prediction: PathBuf,
    /// Ground-truth mask (PGM; nonzero pixels are boundary).
    pub truth: PathBuf,
    /// Matching tolerance in pixels.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Also write the precision-recall curve and report here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub tolerance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { tolerance: 2.0 }
    }
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))
}

fn seconds(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn check_finite(values: impl IntoIterator<Item = f64>, what: &str) -> Result<(), CliError> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("{what} contains non-finite values")))
    }
}

/// Runs the parsed command; returns the JSON report.
pub fn run(cli: &Cli) -> Result<Value, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::input("--threads must be positive"));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Edges2d(a) => cmd_edges2d(a, config),
        Command::Vessels3d(a) => cmd_vessels3d(a, config),
        Command::FitPoints(a) => cmd_fit_points(a, config),
        Command::FitRidges(a) => cmd_fit_ridges(a, config),
        Command::Synth(a) => cmd_synth(a, cli.seed),
        Command::Eval(a) => cmd_eval(a, config),
    }
}

pub fn cmd_edges2d(a: &EdgesArgs, config: Option<&Path>) -> Result<Value, CliError> {
    let mut o = Overrides::new();
    o.set("spec.gamma", a.gamma);
    o.set("spec.sigma", a.sigma.map(|s| json!({"kind": "global", "sigma": s})));
    o.set("spec.distance", a.tau.map(|t| json!({"kind": "truncated", "tau": t})));
    o.set("spec.beta", a.beta);
    o.set("scale", a.scale);
    o.set("q_min", a.q_min);
    o.set(
        "init",
        a.init.map(|i| match i {
            InitArg::Perpendicular => "perpendicular",
            InitArg::PaperLiteral => "paper-literal",
        }),
    );
    a.curvature.apply(&mut o, "spec");
    a.likelihood.apply(&mut o);
    a.solver.apply(&mut o, "inference.trust_region", Some("inference"));
    let params: EdgeParams<f64> = resolve(config, o)?;

    let start = Instant::now();
    let pgm = io::read_pgm(&a.input)?;
    let det = detect_edges_2d(&pgm.to_image(), &params)?;
    let w = pgm.width;
    let projected = det.projected();
    let mut table = Table::new(&["id", "x", "y", "px", "py", "dx", "dy", "q"]);
    for (i, (l, p)) in det.state.lines.iter().zip(&projected).enumerate() {
        let anchor: [f64; 2] = pixel_position(i, w);
        table.push(vec![i as f64, anchor[0], anchor[1], p[0], p[1], l.direction[0], l.direction[1], det.state.q[i]]);
    }
    check_finite(table.rows.iter().flatten().copied(), "tangent output")?;
    prepare_dir(&a.out_dir)?;
    io::write_table(&a.out_dir.join("tangents.csv"), &table)?;
    io::write_pgm(&a.out_dir.join("mask.pgm"), &Pgm::from_probabilities(&det.mask.image))?;
    let strong = det.state.q.iter().filter(|&&q| Tier::of(q) == Tier::Strong).count();
    let weak = det.state.q.iter().filter(|&&q| Tier::of(q) == Tier::Weak).count();
    let report = json!({
        "command": "edges2d",
        "input": a.input,
        "config": params,
        "image": {"width": pgm.width, "height": pgm.height, "maxval": pgm.maxval},
        "sites": det.state.q.len(),
        "tiers": {"strong": strong, "weak": weak},
        "mask": {"scale": det.mask.scale, "dropped": det.mask.dropped},
        "outer_iterations": det.state.outer_iterations,
        "converged": det.state.converged,
        "trace": det.state.trace,
        "lm": det.state.lm,
        "seconds": seconds(start),
    });
    io::write_json(&a.out_dir.join("report.json"), &report)?;
    Ok(report)
}

pub fn cmd_vessels3d(a: &VesselsArgs, config: Option<&Path>) -> Result<Value, CliError> {
    let mut o = Overrides::new();
    o.set("spec.beta", a.beta);
    o.set("spec.sigma", a.k.map(|k| json!({"kind": "per_site", "k": k})));
    o.set("spec.gamma", a.gamma);
    o.set("spec.alignment_power", a.alignment_power);
    o.set("keep_fraction", a.keep);
    a.curvature.apply(&mut o, "spec");
    a.likelihood.apply(&mut o);
    a.solver.apply(&mut o, "inference.trust_region", Some("inference"));
    let params: VesselParams<f64> = resolve(config, o)?;

    let start = Instant::now();
    let field = io::read_volume(&a.input)?.to_field()?;
    let det = detect_vessels_3d(&field, &params)?;
    let mut table = Table::new(&["id", "x", "y", "z", "dx", "dy", "dz", "q"]);
    for (s, (c, l)) in det.grid.voxels.iter().zip(&det.state.lines).enumerate() {
        let d = l.direction;
        table.push(vec![s as f64, c[0] as f64, c[1] as f64, c[2] as f64, d[0], d[1], d[2], det.state.q[s]]);
    }
    check_finite(table.rows.iter().flatten().copied(), "tangent output")?;
    prepare_dir(&a.out_dir)?;
    io::write_table(&a.out_dir.join("tangents.csv"), &table)?;
    let report = json!({
        "command": "vessels3d",
        "input": a.input,
        "config": params,
        "dims": field.dims,
        "sites": det.state.q.len(),
        "detected": det.state.q.iter().filter(|&&q| q >= 0.5).count(),
        "outer_iterations": det.state.outer_iterations,
        "converged": det.state.converged,
        "trace": det.state.trace,
        "lm": det.state.lm,
        "seconds": seconds(start),
    });
    io::write_json(&a.out_dir.join("report.json"), &report)?;
    Ok(report)
}

fn fit_points_dim<const D: usize>(
    table: &Table,
    params: &CloudParams<f64>,
) -> Result<(Table, thinline::solver::LmStats<f64>), CliError> {
    let points = io::points_from_table::<D>(table)?;
    let fit = fit_point_cloud(&points, params)?;
    let axes = ["x", "y", "z"];
    let mut header = vec!["id".to_string()];
    header.extend(axes[..D].iter().map(|a| a.to_string()));
    header.extend(axes[..D].iter().map(|a| format!("p{a}")));
    header.extend(axes[..D].iter().map(|a| format!("d{a}")));
    let mut out = Table { header, rows: Vec::new() };
    for (i, (p, l)) in points.iter().zip(&fit.lines).enumerate() {
        let proj = project_onto_line(l, p);
        let mut row = vec![i as f64];
        row.extend_from_slice(p);
        row.extend_from_slice(&proj);
        row.extend_from_slice(&l.direction);
        out.rows.push(row);
    }
    Ok((out, fit.stats))
}

pub fn cmd_fit_points(a: &FitPointsArgs, config: Option<&Path>) -> Result<Value, CliError> {
    let mut o = Overrides::new();
    o.set("k", a.knn);
    o.set("sigma", a.sigma);
    a.curvature.apply(&mut o, "");
    a.solver.apply(&mut o, "trust_region", None);
    let params: CloudParams<f64> = resolve(config, o)?;

    let start = Instant::now();
    let table = io::read_table(&a.input)?;
    let dim = match a.dim {
        Some(d) => d as usize,
        None if table.column("z").is_some() => 3,
        None if table.column("x").is_some() => 2,
        None => table.header.len().clamp(2, 3),
    };
    let (out, stats) = if dim == 2 { fit_points_dim::<2>(&table, &params)? } else { fit_points_dim::<3>(&table, &params)? };
    check_finite(out.rows.iter().flatten().copied(), "tangent output")?;
    prepare_dir(&a.out_dir)?;
    io::write_table(&a.out_dir.join("tangents.csv"), &out)?;
    let report = json!({
        "command": "fit-points",
        "input": a.input,
        "config": params,
        "dim": dim,
        "points": out.rows.len(),
        "lm": stats,
        "seconds": seconds(start),
    });
    io::write_json(&a.out_dir.join("report.json"), &report)?;
    Ok(report)
}

pub fn cmd_fit_ridges(a: &RidgesArgs, config: Option<&Path>) -> Result<Value, CliError> {
    let mut o = Overrides::new();
    o.set("low", a.low);
    o.set("high", a.high);
    o.set("spec.beta", a.beta);
    o.set("spec.sigma", a.k.map(|k| json!({"kind": "per_site", "k": k})));
    a.curvature.apply(&mut o, "spec");
    a.solver.apply(&mut o, "trust_region", None);
    let params: RidgeParams<f64> = resolve(config, o)?;

    let start = Instant::now();
    let field = io::read_volume(&a.input)?.to_field()?;
    let fit = fit_tangents_fixed_q(&field, &params)?;
    let mut table = Table::new(&["id", "x", "y", "z", "dx", "dy", "dz"]);
    for (s, (c, l)) in fit.voxels.iter().zip(&fit.lines).enumerate() {
        let d = l.direction;
        table.push(vec![s as f64, c[0] as f64, c[1] as f64, c[2] as f64, d[0], d[1], d[2]]);
    }
    check_finite(table.rows.iter().flatten().copied(), "tangent output")?;
    prepare_dir(&a.out_dir)?;
    io::write_table(&a.out_dir.join("tangents.csv"), &table)?;
    let ridge = Volume {
        dims: field.dims,
        planes: vec![("ridge".into(), fit.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())],
    };
    io::write_volume(&a.out_dir.join("ridges.vfield"), &ridge)?;
    let report = json!({
        "command": "fit-ridges",
        "input": a.input,
        "config": params,
        "dims": field.dims,
        "ridge_voxels": fit.voxels.len(),
        "lm": fit.stats,
        "seconds": seconds(start),
    });
    io::write_json(&a.out_dir.join("report.json"), &report)?;
    Ok(report)
}

fn write_curve(dir: &Path, s: &synth::CurveSamples<2>) -> Result<Vec<String>, CliError> {
    let mut points = Table::new(&["x", "y"]);
    let mut truth = Table::new(&["x", "y", "tx", "ty"]);
    for ((p, c), t) in s.points.iter().zip(&s.clean).zip(&s.tangents) {
        points.push(vec![p[0], p[1]]);
        truth.push(vec![c[0], c[1], t[0], t[1]]);
    }
    io::write_table(&dir.join("points.csv"), &points)?;
    io::write_table(&dir.join("truth.csv"), &truth)?;
    Ok(vec!["points.csv".into(), "truth.csv".into()])
}

fn write_image(dir: &Path, stem: &str, s: &synth::SynthImage) -> Result<Vec<String>, CliError> {
    let image = format!("{stem}.pgm");
    let truth = format!("{stem}_truth.pgm");
    let regions = format!("{stem}_regions.json");
    io::write_pgm(&dir.join(&image), &Pgm::from_image_u8(&s.image))?;
    io::write_pgm(&dir.join(&truth), &Pgm::from_mask(&s.truth))?;
    io::write_json(&dir.join(&regions), &s.regions)?;
    Ok(vec![image, truth, regions])
}

pub fn cmd_synth(a: &SynthArgs, seed: u64) -> Result<Value, CliError> {
    prepare_dir(&a.out_dir)?;
    let dir = a.out_dir.as_path();
    let render = RenderParams { noise: a.noise, seed, ..Default::default() };
    let files = match a.kind {
        SynthKind::Circle => {
            write_curve(dir, &synth::circle(a.radius.unwrap_or(20.0), a.samples.unwrap_or(64), a.noise, seed)?)?
        }
        SynthKind::Line => {
            let angle = a.rotation.unwrap_or(30.0).to_radians();
            let s = synth::line(a.length.unwrap_or(40.0), a.samples.unwrap_or(41), [angle.cos(), angle.sin()], a.noise, seed)?;
            write_curve(dir, &s)?
        }
        SynthKind::RoundedSquare => write_curve(
            dir,
            &synth::rounded_square(
                a.side.unwrap_or(40.0),
                a.corner_radius.unwrap_or(5.0),
                a.samples.unwrap_or(120),
                a.noise,
                seed,
            )?,
        )?,
        SynthKind::Disk => {
            write_image(dir, "disk", &synth::disk_image(a.size.unwrap_or(64), a.radius.unwrap_or(20.0), &render)?)?
        }
        SynthKind::StepEdge => write_image(
            dir,
            "step",
            &synth::step_edge_image(a.width.unwrap_or(24), a.height.unwrap_or(16), a.edge.unwrap_or(11.8), &render)?,
        )?,
        SynthKind::Polygon => write_image(
            dir,
            "polygon",
            &synth::polygon_image(
                a.size.unwrap_or(64),
                a.sides.unwrap_or(5),
                a.radius.unwrap_or(22.0),
                a.rotation.unwrap_or(0.0),
                &render,
            )?,
        )?,
        SynthKind::GapImage => {
            let length = a.length.unwrap_or(40.0);
            if !(length >= 1.0 && length.fract() == 0.0) {
                return Err(CliError::input(format!("gap-image length must be a positive integer, got {length}")));
            }
            let s = synth::gap_image(length as usize, a.gap.unwrap_or(8), a.thickness.unwrap_or(10.0), &render)?;
            write_image(dir, "gap", &s)?
        }
        SynthKind::EdgeBenchmark => {
            let mut files = Vec::new();
            for (name, s) in synth::edge_benchmark(a.noise, seed)? {
                files.extend(write_image(dir, &name, &s)?);
            }
            files
        }
        SynthKind::Tube3d => {
            let shape = match a.shape {
                ShapeArg::Straight => TubeShape::Straight,
                ShapeArg::Helix => TubeShape::Helix,
                ShapeArg::YJunction => TubeShape::YJunction,
            };
            let vol = synth::tube3d(shape, a.size.unwrap_or(32), a.radius.unwrap_or(1.5), a.cutoff.unwrap_or(2.5))?;
            io::write_volume(&dir.join("tube.vfield"), &Volume::from_field(&vol.field))?;
            let f = |k: usize| vol.truth.iter().map(|t| t[k] as f32).collect();
            let truth = Volume {
                dims: vol.field.dims,
                planes: vec![
                    ("tx".into(), f(0)),
                    ("ty".into(), f(1)),
                    ("tz".into(), f(2)),
                    ("distance".into(), vol.distance.iter().map(|&d| d as f32).collect()),
                ],
            };
            io::write_volume(&dir.join("tube_truth.vfield"), &truth)?;
            let mut line = Table::new(&["x", "y", "z"]);
            for p in &vol.centerline {
                line.push(p.to_vec());
            }
            io::write_table(&dir.join("centerline.csv"), &line)?;
            vec!["tube.vfield".into(), "tube_truth.vfield".into(), "centerline.csv".into()]
        }
    };
    let kind = a.kind.to_possible_value().expect("named kind").get_name().to_string();
    Ok(json!({"command": "synth", "kind": kind, "seed": seed, "noise": a.noise, "files": files}))
}

pub fn cmd_eval(a: &EvalArgs, config: Option<&Path>) -> Result<Value, CliError> {
    let mut o = Overrides::new();
    o.set("tolerance", a.tolerance);
    let cfg: EvalConfig = resolve(config, o)?;
    let pred = io::read_pgm(&a.prediction)?;
    let truth = io::read_pgm(&a.truth)?;
    let prediction: Image<f64> = pred.to_unit_image();
    let e = evaluate(&prediction, &truth.to_mask(), cfg.tolerance)?;
    let report = json!({
        "command": "eval",
        "prediction": a.prediction,
        "truth": a.truth,
        "config": cfg,
        "truth_pixels": e.truth,
        "best": e.best,
    });
    if let Some(dir) = &a.out_dir {
        prepare_dir(dir)?;
        let mut curve = Table::new(&["threshold", "predicted", "matched", "precision", "recall", "f"]);
        for p in &e.curve {
            curve.push(vec![p.threshold, p.predicted as f64, p.matched as f64, p.precision, p.recall, p.f]);
        }
        io::write_table(&dir.join("pr_curve.csv"), &curve)?;
        io::write_json(&dir.join("report.json"), &report)?;
    }
    Ok(report)
}
