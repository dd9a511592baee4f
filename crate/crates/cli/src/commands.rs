//! Subcommand definitions and handlers. Machine-readable JSON goes to the
//! writer handed to [`run`]; diagnostics go to stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use bevmotion::eval::{bucketed_errors, divergence_report, BucketedMetrics, DivergenceBin};
use bevmotion::gradcheck::{default_probes, run_gradcheck, GradcheckOptions, GradcheckReport};
use bevmotion::optimizer::{optimize_scene_with, run_suite, OptOptions, OptState, OptSummary, SuiteReport};
use bevmotion::transport::{labels_from_prepared, prepare_scene, LabelMode, StepDiagnostics};
use bevmotion::{recipe_suite, Config, Direction, Error, LossToggles, MotionStack, SceneRecipe};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::archive::{read_archive, write_archive};
use crate::formats::{decode_motion, encode_motion};
use crate::render::render_step;

#[derive(Debug, Parser)]
#[command(name = "bevmotion", version, about = "Self-supervised BEV motion fields from optimal-transport pseudo labels")]
pub struct Cli {
    /// JSON config with every key present; defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides `rng_seed`; `synth` also mixes it into recipe seeds.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads, 0 = one per core.
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scene archives.
    Synth(SynthArgs),
    /// Compute pseudo labels for one scene.
    Pseudo(PseudoArgs),
    /// Optimize motion fields for a scene archive or a built-in suite.
    Optimize(OptimizeArgs),
    /// Speed-bucketed errors of a predicted forward field.
    Eval(EvalArgs),
    /// Render a motion field to one PPM image per step.
    Render(RenderArgs),
    /// Finite-difference check of every loss gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["suite", "recipe"])))]
pub struct SynthArgs {
    /// Built-in suite: smoke, ablation or divergence.
    #[arg(long)]
    pub suite: Option<String>,
    /// JSON scene recipe.
    #[arg(long, value_name = "PATH")]
    pub recipe: Option<PathBuf>,
    /// Output directory; one archive per scene, named after the recipe.
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Forward,
    Backward,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Forward => Direction::Forward,
            DirectionArg::Backward => Direction::Backward,
        }
    }
}

#[derive(Debug, Args)]
pub struct PseudoArgs {
    pub scene: PathBuf,
    /// Label motion file to write.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "forward")]
    pub direction: DirectionArg,
    /// Motion file used to pre-warp the sources; zero when omitted.
    #[arg(long, value_name = "PATH")]
    pub init: Option<PathBuf>,
    /// Use the raw plan product instead of the barycentric projection.
    #[arg(long)]
    pub raw_product: bool,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["scene", "suite"])))]
pub struct OptimizeArgs {
    pub scene: Option<PathBuf>,
    /// Run a built-in suite instead of a single archive.
    #[arg(long)]
    pub suite: Option<String>,
    /// Comma-separated loss terms from {sup, c, f, b, knn}.
    #[arg(long, default_value = "sup,c,f,b", conflicts_with = "row")]
    pub losses: String,
    /// Ablation row 1..=8 (sup always on; c, f, b toggled).
    #[arg(long)]
    pub row: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Forward motion file.
    pub pred: PathBuf,
    pub scene: PathBuf,
    /// Backward motion file; adds the divergence analysis.
    #[arg(long, value_name = "PATH")]
    pub backward: Option<PathBuf>,
    /// Also write the metrics JSON here.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    pub field: PathBuf,
    /// Output directory for `step_XX.ppm` files.
    pub out: PathBuf,
    /// Magnitude (m) rendered at full saturation.
    #[arg(long, default_value_t = 10.0)]
    pub max_magnitude: f64,
    /// Render only this horizon (1-based).
    #[arg(long)]
    pub step: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    /// Finite-difference step, meters.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
}

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Config::from_json(&text).with_context(|| format!("config {}", p.display()))?
        }
        None => Config::default(),
    };
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    Ok(bevmotion::validate_config(cfg)?)
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_field(path: &Path) -> Result<MotionStack<f32>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_motion(&bytes).with_context(|| format!("decoding {}", path.display()))
}

fn write_field(path: &Path, stack: &MotionStack<f32>) -> Result<()> {
    fs::write(path, encode_motion(stack)).with_context(|| format!("writing {}", path.display()))
}

/// Runs a parsed command. `Ok(false)` means the command completed but
/// reports failure (gradcheck).
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<bool> {
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build()?;
    let mut buf = Vec::new();
    let result = pool.install(|| {
        let w: &mut dyn Write = &mut buf;
        match cli.command {
            Command::Synth(a) => cmd_synth(&a, &cfg, cli.seed, w).map(|_| true),
            Command::Pseudo(a) => cmd_pseudo(&a, &cfg, w).map(|_| true),
            Command::Optimize(a) => cmd_optimize(&a, &cfg, w).map(|_| true),
            Command::Eval(a) => cmd_eval(&a, &cfg, w).map(|_| true),
            Command::Render(a) => cmd_render(&a, w).map(|_| true),
            Command::Gradcheck(a) => cmd_gradcheck(&a, &cfg, w),
        }
    });
    out.write_all(&buf)?;
    result
}

#[derive(Debug, Serialize)]
struct SynthEntry {
    name: String,
    dir: String,
    frames: usize,
    current_points: usize,
    ground_truth_cells: usize,
}

pub fn cmd_synth(a: &SynthArgs, cfg: &Config, seed: Option<u64>, out: &mut dyn Write) -> Result<()> {
    let mut recipes: Vec<SceneRecipe> = match (&a.suite, &a.recipe) {
        (Some(s), _) => recipe_suite(s)?,
        (None, Some(p)) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            vec![serde_json::from_str(&text).with_context(|| format!("recipe {}", p.display()))?]
        }
        (None, None) => bail!("one of --suite or --recipe is required"),
    };
    if let Some(s) = seed {
        for r in &mut recipes {
            r.seed = r.seed.wrapping_add(s.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        }
    }
    let mut names: Vec<&str> = recipes.iter().map(|r| r.name.as_str()).collect();
    names.sort_unstable();
    ensure!(names.windows(2).all(|w| w[0] != w[1]), "recipe names must be unique");
    ensure!(
        recipes.iter().all(|r| !r.name.is_empty() && !r.name.contains(['/', '\\']) && r.name != "." && r.name != ".."),
        "recipe names must be plain directory names"
    );
    let entries: Vec<SynthEntry> = recipes
        .par_iter()
        .map(|r| {
            let seq = bevmotion::generate(r, cfg)?;
            let dir = a.out.join(&r.name);
            write_archive(&dir, &seq, Some(r))?;
            Ok(SynthEntry {
                name: r.name.clone(),
                dir: dir.display().to_string(),
                frames: seq.frames.len(),
                current_points: seq.current_frame().len(),
                ground_truth_cells: seq.ground_truth.as_ref().map_or(0, |g| g.len()),
            })
        })
        .collect::<Result<_>>()?;
    emit(out, &serde_json::json!({ "scenes": entries }))
}

#[derive(Debug, Serialize)]
struct PseudoReport {
    direction: Direction,
    out: String,
    valid_cells: usize,
    source_cells: usize,
    mean_label_magnitude: f64,
    unconverged_solves: usize,
    steps: Vec<StepDiagnostics>,
    /// Label error against ground truth per speed bucket.
    label_error: Option<BucketedMetrics>,
}

pub fn cmd_pseudo(a: &PseudoArgs, cfg: &Config, out: &mut dyn Write) -> Result<()> {
    let seq = read_archive(&a.scene)?;
    let direction: Direction = a.direction.into();
    seq.require_horizon(cfg, direction)?;
    let prep = prepare_scene(&seq, cfg)?;
    let init = match &a.init {
        Some(p) => {
            let m = read_field(p)?.cast::<f64>().with_direction(direction);
            ensure!(m.num_steps() == cfg.future_steps, "init field has {} steps, config T_prime is {}", m.num_steps(), cfg.future_steps);
            m
        }
        None => prep.zero_stack(direction, cfg.future_steps),
    };
    let mode = if a.raw_product { LabelMode::RawProduct } else { LabelMode::Barycentric };
    let labels = labels_from_prepared(&prep, &init, direction, cfg, mode)?;
    for d in &labels.diagnostics {
        if let Some(w) = &d.warning {
            eprintln!("warning: {w}");
        } else if !d.converged {
            eprintln!("warning: step {}: transport did not converge (marginal error {:.3e})", d.step, d.marginal_error);
        }
    }
    write_field(&a.out, &labels.labels.cast())?;
    let label_error = match &seq.ground_truth {
        Some(gt) => {
            let reference = match direction {
                Direction::Forward => gt.clone(),
                Direction::Backward => gt.negated(),
            };
            Some(bucketed_errors(&labels.labels, Some(&reference), cfg)?)
        }
        None => None,
    };
    let report = PseudoReport {
        direction,
        out: a.out.display().to_string(),
        valid_cells: labels.labels.len(),
        source_cells: prep.source.len(),
        mean_label_magnitude: labels.labels.mean_magnitude(),
        unconverged_solves: labels.unconverged(),
        steps: labels.diagnostics.clone(),
        label_error,
    };
    emit(out, &report)
}

#[derive(Debug, Serialize)]
struct DivergenceSummary {
    spearman: Option<f64>,
    bins: Vec<DivergenceBin>,
    samples: usize,
}

#[derive(Debug, Serialize)]
struct SceneOptReport {
    losses: String,
    state: OptSummary,
    metrics: Option<BucketedMetrics>,
    divergence: Option<DivergenceSummary>,
}

fn toggles_of(a: &OptimizeArgs) -> Result<LossToggles> {
    match a.row {
        Some(r) => LossToggles::ablation_row(r).with_context(|| format!("ablation row {r} outside 1..=8")),
        None => Ok(LossToggles::parse(&a.losses)?),
    }
}

pub fn cmd_optimize(a: &OptimizeArgs, cfg: &Config, out: &mut dyn Write) -> Result<()> {
    let toggles = toggles_of(a)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    if let Some(suite) = &a.suite {
        let recipes = recipe_suite(suite)?;
        let run = run_suite(&recipes, cfg, toggles)?;
        for (state, scene) in run.states.iter().zip(&run.report.scenes) {
            let dir = a.out.join(&scene.name);
            fs::create_dir_all(&dir)?;
            write_field(&dir.join("forward.mfld"), &state.forward.cast())?;
            write_field(&dir.join("backward.mfld"), &state.backward.cast())?;
        }
        let report: &SuiteReport = &run.report;
        write_json(&a.out.join("report.json"), report)?;
        return emit(out, report);
    }
    let scene = a.scene.as_ref().expect("clap requires scene or suite");
    let seq = read_archive(scene)?;
    let opts = OptOptions { toggles, ..OptOptions::default() };
    let state: OptState = optimize_scene_with(&seq, cfg, opts)?;
    for h in &state.history {
        for w in &h.warnings {
            eprintln!("warning: round {}: {w}", h.round);
        }
    }
    write_field(&a.out.join("forward.mfld"), &state.forward.cast())?;
    write_field(&a.out.join("backward.mfld"), &state.backward.cast())?;
    let gt = seq.ground_truth.as_ref();
    let metrics = gt.map(|g| bucketed_errors(&state.forward, Some(g), cfg)).transpose()?;
    let divergence = gt
        .map(|g| divergence_report(&state.forward, &state.backward, g))
        .transpose()?
        .map(|d| DivergenceSummary { spearman: d.spearman, bins: d.bins, samples: d.samples.len() });
    let report = SceneOptReport { losses: toggles.label(), state: state.summary(), metrics, divergence };
    write_json(&a.out.join("result.json"), &report)?;
    emit(out, &report)
}

#[derive(Debug, Serialize)]
struct EvalReport {
    metrics: BucketedMetrics,
    divergence: Option<DivergenceSummary>,
}

pub fn cmd_eval(a: &EvalArgs, cfg: &Config, out: &mut dyn Write) -> Result<()> {
    let pred = read_field(&a.pred)?;
    ensure!(pred.direction() == Direction::Forward, "{}: expected a forward field", a.pred.display());
    let seq = read_archive(&a.scene)?;
    let gt = seq.ground_truth.as_ref().ok_or(Error::MissingGroundTruth)?;
    ensure!(pred.grid() == gt.grid(), "prediction grid does not match scene grid");
    let pred = pred.cast::<f64>();
    let metrics = bucketed_errors(&pred, Some(gt), cfg)?;
    let divergence = match &a.backward {
        Some(p) => {
            let b = read_field(p)?.cast::<f64>();
            ensure!(b.direction() == Direction::Backward, "{}: expected a backward field", p.display());
            let d = divergence_report(&pred, &b, gt)?;
            Some(DivergenceSummary { spearman: d.spearman, bins: d.bins, samples: d.samples.len() })
        }
        None => None,
    };
    let report = EvalReport { metrics, divergence };
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    emit(out, &report)
}

pub fn cmd_render(a: &RenderArgs, out: &mut dyn Write) -> Result<()> {
    ensure!(a.max_magnitude > 0.0 && a.max_magnitude.is_finite(), "--max-magnitude must be > 0");
    let field = read_field(&a.field)?;
    let steps: Vec<usize> = match a.step {
        Some(t) => {
            ensure!(t >= 1 && t <= field.num_steps(), "step {t} outside 1..={}", field.num_steps());
            vec![t]
        }
        None => (1..=field.num_steps()).collect(),
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut files = Vec::new();
    for t in steps {
        let p = a.out.join(format!("step_{t:02}.ppm"));
        fs::write(&p, render_step(&field, t - 1, a.max_magnitude)).with_context(|| format!("writing {}", p.display()))?;
        files.push(p.display().to_string());
    }
    emit(out, &serde_json::json!({ "images": files }))
}

pub fn gradcheck_report(a: &GradcheckArgs, cfg: &Config) -> Result<GradcheckReport> {
    ensure!(a.points >= 1, "--points must be >= 1");
    ensure!(a.step > 0.0 && a.step.is_finite(), "--step must be > 0");
    let opts = GradcheckOptions { points: a.points, step: a.step, tolerance: a.tolerance, seed: cfg.rng_seed };
    Ok(run_gradcheck(&default_probes(), cfg, &opts)?)
}

pub fn cmd_gradcheck(a: &GradcheckArgs, cfg: &Config, out: &mut dyn Write) -> Result<bool> {
    let report = gradcheck_report(a, cfg)?;
    for t in report.failures() {
        if let Some(w) = &t.worst {
            eprintln!(
                "gradcheck failed: {} ({:?} stack) cell ({}, {}) step {} component {}: analytic {:.6e}, numeric {:.6e}, relative error {:.3e} >= {:.1e}",
                t.term, w.stack, w.row, w.col, w.step, w.component, w.analytic, w.numeric, w.relative_error, report.tolerance
            );
        }
    }
    emit(out, &report)?;
    Ok(report.passed)
}
