//! `lanegraph` — command-line front end for the lane-graph extraction
//! toolkit.
//!
//! The `pipeline` subcommand composes the three library stages — windowed
//! DDIM refinement, skeleton-based graph extraction, and GEO/TOPO evaluation
//! against ground truth — and emits a JSON report. The remaining subcommands
//! are thin wrappers over the individual stages so each can be driven and
//! inspected on its own.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors
//! (including unreadable input files; the message names the offending flag).

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use lanegraph::diffusion::{
    load_toy_denoiser, refine_mask, save_toy_denoiser, sigmoid_schedule, train_toy_denoiser,
    Denoiser, OracleDenoiser, SamplerConfig, StartMode, ToyDenoiser, VarianceSchedule,
    ZeroDenoiser,
};
use lanegraph::graph::{load_graph, save_graph, LaneGraph};
use lanegraph::metrics::{evaluate, EvalConfig, Evaluation, MatchStrategy};
use lanegraph::raster::{
    load_gray_png, mask_change_stats, render_graph_mask, resize_bilinear, save_gray_png,
    save_mask_png, stitch_average, threshold, window_plan, GrayRaster, MaskChangeStats,
};
use lanegraph::skeleton::{extract, ExtractionParams};
use lanegraph::synth::{corrupt_mask, gen_scene, make_dataset, SceneParams};

const TOOL_NAME: &str = "lanegraph";
const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pipeline(args) => cmd_pipeline(args),
        Command::Render(args) => cmd_render(args),
        Command::Extract(args) => cmd_extract(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Refine(args) => cmd_refine(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Train(args) => cmd_train(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

#[derive(Parser)]
#[command(
    name = TOOL_NAME,
    version,
    about = "Lane-graph toolkit: refine probability masks, extract graphs, score them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run refine -> extract -> evaluate against ground truth; write a report.
    Pipeline(PipelineArgs),
    /// Rasterize a graph JSON file to a binary mask PNG.
    Render(RenderArgs),
    /// Extract a lane graph from a probability mask PNG.
    Extract(ExtractArgs),
    /// Score a predicted graph against a ground-truth graph.
    Eval(EvalArgs),
    /// Refine a probability mask with the DDIM sampler.
    Refine(RefineArgs),
    /// Generate synthetic scenes (ground truth plus corrupted rasters).
    Synth(SynthArgs),
    /// Pixel-change statistics between two thresholded masks.
    Stats(StatsArgs),
    /// Train the toy convolutional denoiser on synthetic pairs.
    Train(TrainArgs),
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Failures are split by exit code: usage errors (bad flags or unreadable
/// inputs) exit 2, runtime failures (a stage erroring on valid inputs, or an
/// output that cannot be written) exit 1.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Runtime(msg) => f.write_str(msg),
        }
    }
}

fn read_gray(flag: &str, path: &Path) -> Result<GrayRaster, CliError> {
    load_gray_png(path)
        .map_err(|e| CliError::Usage(format!("{flag}: cannot read '{}': {e}", path.display())))
}

fn read_graph(flag: &str, path: &Path) -> Result<LaneGraph, CliError> {
    load_graph(path)
        .map_err(|e| CliError::Usage(format!("{flag}: cannot read '{}': {e}", path.display())))
}

fn write_failed(what: &str, path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Runtime(format!("cannot write {what} '{}': {e}", path.display()))
}

// ---------------------------------------------------------------------------
// Shared flag groups
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone, Serialize)]
struct ScheduleOpts {
    /// Diffusion horizon T (number of noise levels).
    #[arg(long = "T", default_value_t = 1000, value_name = "T")]
    t_max: usize,
    /// Sigmoid schedule start offset.
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    sched_start: f64,
    /// Sigmoid schedule end offset.
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    sched_end: f64,
    /// Sigmoid schedule temperature.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
}

impl ScheduleOpts {
    fn build(&self) -> Result<VarianceSchedule, CliError> {
        sigmoid_schedule(self.t_max, self.sched_start, self.sched_end, self.tau)
            .map_err(|e| CliError::Usage(format!("invalid schedule: {e}")))
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct SamplerOpts {
    /// Number of DDIM sampling steps S; T must be divisible by S.
    #[arg(long = "S", default_value_t = 25, value_name = "S")]
    steps: usize,
    /// Starting-latent mode: direct, gaussian_noise, or forward_steps.
    #[arg(long, default_value = "forward_steps", value_parser = parse_start_mode)]
    mode: StartMode,
    /// Forward steps FS for forward_steps mode (0 keeps the mask unchanged).
    #[arg(long, default_value_t = 500)]
    fs: usize,
    /// Seed for the starting-latent noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_start_mode(s: &str) -> Result<StartMode, String> {
    s.parse()
}

impl SamplerOpts {
    fn build(&self, sched: &VarianceSchedule) -> Result<SamplerConfig, CliError> {
        let cfg = SamplerConfig {
            steps: self.steps,
            mode: self.mode,
            forward_steps: self.fs,
            seed: self.seed,
        };
        cfg.validate(sched)
            .map_err(|e| CliError::Usage(format!("invalid sampler configuration: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct ExtractOpts {
    /// Binarization threshold, in (0, 1).
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Drop connected components with total length below this (px).
    #[arg(long, default_value_t = 50.0)]
    min_component_len: f64,
    /// Prune dead-end spurs at junctions shorter than this (px).
    #[arg(long, default_value_t = 30.0)]
    max_spur_len: f64,
    /// Douglas-Peucker simplification tolerance (px).
    #[arg(long, default_value_t = 2.0)]
    dp_epsilon: f64,
}

impl ExtractOpts {
    fn build(&self) -> Result<ExtractionParams, CliError> {
        let p = ExtractionParams {
            alpha: self.alpha,
            min_component_len_px: self.min_component_len,
            max_spur_len_px: self.max_spur_len,
            dp_epsilon_px: self.dp_epsilon,
        };
        p.validate()
            .map_err(|e| CliError::Usage(format!("invalid extraction parameters: {e}")))?;
        Ok(p)
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct EvalOpts {
    /// GEO node-matching radius r (px).
    #[arg(long, default_value_t = 8.0)]
    match_radius: f64,
    /// Node densification spacing before matching (px).
    #[arg(long, default_value_t = 2.0)]
    densify: f64,
    /// TOPO shortest-path subgraph radius (px).
    #[arg(long, default_value_t = 400.0)]
    topo_radius: f64,
    /// Ground sampling distance (cm per px).
    #[arg(long, default_value_t = 12.5)]
    gsd_cm: f64,
}

impl EvalOpts {
    fn build(&self) -> Result<EvalConfig, CliError> {
        let cfg = EvalConfig {
            densify_spacing_px: self.densify,
            match_radius_px: self.match_radius,
            topo_radius_px: self.topo_radius,
            gsd_cm: self.gsd_cm,
            strategy: MatchStrategy::Maximum,
        };
        cfg.validate()
            .map_err(|e| CliError::Usage(format!("invalid evaluation parameters: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct SceneOpts {
    /// Square canvas side length (px).
    #[arg(long, default_value_t = 256)]
    canvas: usize,
    /// Minimum lane count per scene.
    #[arg(long, default_value_t = 2)]
    lanes_min: usize,
    /// Maximum lane count per scene.
    #[arg(long, default_value_t = 4)]
    lanes_max: usize,
    /// Lower bound of the per-step heading change (rad).
    #[arg(long, default_value_t = -0.18, allow_hyphen_values = true)]
    curvature_lo: f64,
    /// Upper bound of the per-step heading change (rad).
    #[arg(long, default_value_t = 0.18, allow_hyphen_values = true)]
    curvature_hi: f64,
    /// Expected fraction of lane length wiped out by occlusion gaps.
    #[arg(long, default_value_t = 0.20)]
    gap_prob: f64,
    /// Minimum gap diameter (px).
    #[arg(long, default_value_t = 3.0)]
    gap_len_lo: f64,
    /// Maximum gap diameter (px).
    #[arg(long, default_value_t = 6.0)]
    gap_len_hi: f64,
    /// Gaussian blur radius (px); 0 disables blur.
    #[arg(long, default_value_t = 2)]
    blur_radius: usize,
    /// Per-pixel bright-speckle probability.
    #[arg(long, default_value_t = 0.01)]
    speckle_rate: f64,
}

impl SceneOpts {
    fn build(&self, seed: u64) -> Result<SceneParams, CliError> {
        let p = SceneParams {
            canvas: self.canvas,
            lanes_min: self.lanes_min,
            lanes_max: self.lanes_max,
            curvature_lo: self.curvature_lo,
            curvature_hi: self.curvature_hi,
            gap_prob: self.gap_prob,
            gap_len_lo: self.gap_len_lo,
            gap_len_hi: self.gap_len_hi,
            blur_radius: self.blur_radius,
            speckle_rate: self.speckle_rate,
            seed,
        };
        p.validate()
            .map_err(|e| CliError::Usage(format!("invalid scene parameters: {e}")))?;
        Ok(p)
    }
}

// ---------------------------------------------------------------------------
// Denoiser selection
// ---------------------------------------------------------------------------

enum DenoiserSpec {
    /// Oracle steered by the rendered ground-truth graph (pipeline only).
    OracleFromGt,
    /// Oracle steered by a clean raster loaded from a PNG.
    OraclePng(PathBuf),
    /// Trained toy network loaded from a weights file.
    Toy(PathBuf),
    /// Predicts zero noise everywhere (ablation baseline).
    Zero,
}

fn parse_denoiser(s: &str, gt_available: bool) -> Result<DenoiserSpec, CliError> {
    let spec = if s == "oracle" {
        if !gt_available {
            return Err(CliError::Usage(
                "--denoiser: plain 'oracle' needs a ground-truth graph; use \
                 oracle:<clean.png> here, or run the pipeline command"
                    .into(),
            ));
        }
        DenoiserSpec::OracleFromGt
    } else if let Some(p) = s.strip_prefix("oracle:") {
        DenoiserSpec::OraclePng(PathBuf::from(p))
    } else if let Some(p) = s.strip_prefix("toy:") {
        DenoiserSpec::Toy(PathBuf::from(p))
    } else if s == "zero" {
        DenoiserSpec::Zero
    } else {
        return Err(CliError::Usage(format!(
            "--denoiser: unknown denoiser '{s}'; expected oracle, oracle:<clean.png>, \
             toy:<weights.bin>, or zero"
        )));
    };
    Ok(spec)
}

/// A denoiser with its full-resolution oracle target materialized (the
/// target is cropped and resized per window).
enum LoadedDenoiser {
    Toy(ToyDenoiser),
    Zero,
    Oracle(GrayRaster),
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone, Serialize)]
struct PipelineArgs {
    /// Input probability mask PNG.
    #[arg(long)]
    mask: PathBuf,
    /// Ground-truth graph JSON.
    #[arg(long)]
    gt: PathBuf,
    /// Conditioning raster PNG; defaults to the input mask.
    #[arg(long)]
    cond: Option<PathBuf>,
    /// Output directory for refined.png, pred.json, and report.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Skip refinement; extract directly from the input mask.
    #[arg(long)]
    no_refine: bool,
    /// Denoiser: oracle (renders the GT), oracle:<clean.png>,
    /// toy:<weights.bin>, or zero.
    #[arg(long, default_value = "oracle")]
    denoiser: String,
    /// Sliding-window side length (px); clamped to the input size.
    #[arg(long, default_value_t = 1024)]
    window: usize,
    /// Sliding-window stride (px); clamped to the window.
    #[arg(long, default_value_t = 512)]
    stride: usize,
    /// Model resolution: windows are resized to this side for sampling.
    #[arg(long, default_value_t = 256)]
    model_size: usize,
    /// Line width when rendering the GT for the oracle denoiser (px).
    #[arg(long, default_value_t = 5)]
    line_width: u32,
    /// Worker threads for window-level parallelism (0 = one per core).
    /// Results are identical at any thread count.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Record per-stage wall-clock timings in the report. Off by default so
    /// that identical runs produce byte-identical reports.
    #[arg(long)]
    timings: bool,
    #[command(flatten)]
    #[serde(flatten)]
    sampler: SamplerOpts,
    #[command(flatten)]
    #[serde(flatten)]
    sched: ScheduleOpts,
    #[command(flatten)]
    #[serde(flatten)]
    extract: ExtractOpts,
    #[command(flatten)]
    #[serde(flatten)]
    eval: EvalOpts,
}

#[derive(Serialize)]
struct ToolInfo {
    name: &'static str,
    version: &'static str,
}

#[derive(Serialize)]
struct RefinementSummary {
    applied: bool,
    windows: usize,
    /// Window side actually used (the flag clamped to the input size).
    effective_window: usize,
    effective_stride: usize,
}

#[derive(Serialize)]
struct StageTiming {
    stage: &'static str,
    ms: u128,
}

#[derive(Serialize)]
struct PipelineReport<'a> {
    tool: ToolInfo,
    config: &'a PipelineArgs,
    refinement: RefinementSummary,
    scores: Evaluation,
    pixel_change: MaskChangeStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing_ms: Option<Vec<StageTiming>>,
}

fn cmd_pipeline(a: PipelineArgs) -> Result<(), CliError> {
    let sched = a.sched.build()?;
    let xp = a.extract.build()?;
    let ec = a.eval.build()?;
    let cfg = a.sampler.build(&sched)?;
    if a.model_size == 0 {
        return Err(CliError::Usage("--model-size must be >= 1".into()));
    }
    if a.window == 0 || a.stride == 0 {
        return Err(CliError::Usage("--window and --stride must be >= 1".into()));
    }
    let spec = parse_denoiser(&a.denoiser, true)?;

    let mask = read_gray("--mask", &a.mask)?;
    let gt = read_graph("--gt", &a.gt)?;
    let cond = match &a.cond {
        Some(p) => {
            let c = read_gray("--cond", p)?;
            if (c.width, c.height) != (mask.width, mask.height) {
                return Err(CliError::Usage(format!(
                    "--cond: dimensions {}x{} do not match --mask {}x{}",
                    c.width, c.height, mask.width, mask.height
                )));
            }
            c
        }
        None => mask.clone(),
    };

    let mut timings: Vec<StageTiming> = Vec::new();
    let (refined, refinement) = if a.no_refine {
        let summary = RefinementSummary {
            applied: false,
            windows: 0,
            effective_window: 0,
            effective_stride: 0,
        };
        (mask.clone(), summary)
    } else {
        let t0 = Instant::now();
        let loaded = load_denoiser(&spec, &gt, &mask, a.line_width, &sched)?;
        let eff_window = a.window.min(mask.width).min(mask.height);
        let eff_stride = a.stride.min(eff_window);
        let layout = window_plan(mask.width, mask.height, eff_window, eff_stride)
            .map_err(|e| CliError::Usage(format!("window planning: {e}")))?;

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(a.threads)
            .build()
            .map_err(|e| CliError::Runtime(format!("cannot build thread pool: {e}")))?;
        let origins = &layout.origins;
        // Indexed parallel collect keeps window order, so the stitch (and
        // with it every output byte) is independent of the thread count.
        let results: Vec<Result<GrayRaster, String>> = pool.install(|| {
            origins
                .par_iter()
                .enumerate()
                .map(|(i, &(ox, oy))| {
                    refine_window(
                        &mask, &cond, &loaded, &sched, &cfg, ox, oy, eff_window, i,
                        a.model_size,
                    )
                })
                .collect()
        });
        let mut windows = Vec::with_capacity(results.len());
        for (&origin, r) in origins.iter().zip(results) {
            let w = r.map_err(|e| CliError::Runtime(format!("refinement: {e}")))?;
            windows.push((origin, w));
        }
        let stitched = stitch_average(&windows, &layout)
            .map_err(|e| CliError::Runtime(format!("stitching: {e}")))?;
        timings.push(StageTiming {
            stage: "refine",
            ms: t0.elapsed().as_millis(),
        });
        let summary = RefinementSummary {
            applied: true,
            windows: layout.origins.len(),
            effective_window: eff_window,
            effective_stride: eff_stride,
        };
        (stitched, summary)
    };

    let t0 = Instant::now();
    let pred = extract(&refined, &xp).map_err(|e| CliError::Runtime(format!("extraction: {e}")))?;
    timings.push(StageTiming {
        stage: "extract",
        ms: t0.elapsed().as_millis(),
    });

    let t0 = Instant::now();
    let scores = evaluate(&pred, &gt, &ec).map_err(|e| CliError::Runtime(format!("evaluation: {e}")))?;
    timings.push(StageTiming {
        stage: "evaluate",
        ms: t0.elapsed().as_millis(),
    });

    let before = threshold(&mask, xp.alpha).map_err(|e| CliError::Runtime(e.to_string()))?;
    let after = threshold(&refined, xp.alpha).map_err(|e| CliError::Runtime(e.to_string()))?;
    let pixel_change =
        mask_change_stats(&before, &after).map_err(|e| CliError::Runtime(e.to_string()))?;

    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| write_failed("--out-dir", &a.out_dir, e))?;
    let refined_path = a.out_dir.join("refined.png");
    save_gray_png(&refined, &refined_path).map_err(|e| write_failed("PNG", &refined_path, e))?;
    let pred_path = a.out_dir.join("pred.json");
    save_graph(&pred, &pred_path).map_err(|e| write_failed("graph", &pred_path, e))?;

    let report = PipelineReport {
        tool: ToolInfo {
            name: TOOL_NAME,
            version: TOOL_VERSION,
        },
        config: &a,
        refinement,
        scores,
        pixel_change,
        timing_ms: if a.timings { Some(timings) } else { None },
    };
    let mut json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Runtime(format!("cannot serialize report: {e}")))?;
    json.push('\n');
    let report_path = a.out_dir.join("report.json");
    std::fs::write(&report_path, &json).map_err(|e| write_failed("report", &report_path, e))?;
    print!("{json}");
    Ok(())
}

fn load_denoiser(
    spec: &DenoiserSpec,
    gt: &LaneGraph,
    mask: &GrayRaster,
    line_width: u32,
    sched: &VarianceSchedule,
) -> Result<LoadedDenoiser, CliError> {
    let loaded = match spec {
        DenoiserSpec::Toy(p) => LoadedDenoiser::Toy(
            load_toy_denoiser(p, sched.clone()).map_err(|e| {
                CliError::Usage(format!(
                    "--denoiser: cannot load toy weights '{}': {e}",
                    p.display()
                ))
            })?,
        ),
        DenoiserSpec::Zero => LoadedDenoiser::Zero,
        DenoiserSpec::OracleFromGt => {
            let m = render_graph_mask(gt, mask.width, mask.height, line_width)
                .map_err(|e| CliError::Runtime(format!("rendering GT for the oracle: {e}")))?;
            LoadedDenoiser::Oracle(m.to_gray())
        }
        DenoiserSpec::OraclePng(p) => {
            let r = read_gray("--denoiser", p)?;
            if (r.width, r.height) != (mask.width, mask.height) {
                return Err(CliError::Usage(format!(
                    "--denoiser: oracle target dimensions {}x{} do not match --mask {}x{}",
                    r.width, r.height, mask.width, mask.height
                )));
            }
            LoadedDenoiser::Oracle(r)
        }
    };
    Ok(loaded)
}

/// Refines one window crop; the per-window seed offset keeps windows
/// independent yet deterministic for a fixed base seed.
#[allow(clippy::too_many_arguments)]
fn refine_window(
    mask: &GrayRaster,
    cond: &GrayRaster,
    loaded: &LoadedDenoiser,
    sched: &VarianceSchedule,
    cfg: &SamplerConfig,
    ox: usize,
    oy: usize,
    window: usize,
    index: usize,
    model_size: usize,
) -> Result<GrayRaster, String> {
    let m = mask
        .crop(ox, oy, window, window)
        .map_err(|e| e.to_string())?;
    let c = cond
        .crop(ox, oy, window, window)
        .map_err(|e| e.to_string())?;
    let wcfg = SamplerConfig {
        seed: cfg.seed.wrapping_add(index as u64),
        ..*cfg
    };
    let refined = match loaded {
        LoadedDenoiser::Toy(net) => refine_mask(&m, &c, net, &wcfg, sched, model_size),
        LoadedDenoiser::Zero => refine_mask(&m, &c, &ZeroDenoiser, &wcfg, sched, model_size),
        LoadedDenoiser::Oracle(full) => {
            let crop = full
                .crop(ox, oy, window, window)
                .map_err(|e| e.to_string())?;
            let target = resize_bilinear(&crop, model_size, model_size);
            let oracle = OracleDenoiser::new(&target, sched.clone());
            refine_mask(&m, &c, &oracle, &wcfg, sched, model_size)
        }
    };
    refined.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// render / extract / eval / refine
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone)]
struct RenderArgs {
    /// Input graph JSON.
    #[arg(long)]
    graph: PathBuf,
    /// Output canvas width (px).
    #[arg(long)]
    width: usize,
    /// Output canvas height (px).
    #[arg(long)]
    height: usize,
    /// Stroke width (px).
    #[arg(long, default_value_t = 5)]
    line_width: u32,
    /// Output PNG path.
    #[arg(long)]
    out: PathBuf,
}

fn cmd_render(a: RenderArgs) -> Result<(), CliError> {
    let g = read_graph("--graph", &a.graph)?;
    let m = render_graph_mask(&g, a.width, a.height, a.line_width)
        .map_err(|e| CliError::Usage(format!("rendering: {e}")))?;
    save_mask_png(&m, &a.out).map_err(|e| write_failed("PNG", &a.out, e))
}

#[derive(Args, Debug, Clone)]
struct ExtractArgs {
    /// Input probability mask PNG.
    #[arg(long)]
    mask: PathBuf,
    /// Output graph JSON path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    extract: ExtractOpts,
}

fn cmd_extract(a: ExtractArgs) -> Result<(), CliError> {
    let xp = a.extract.build()?;
    let mask = read_gray("--mask", &a.mask)?;
    let g = extract(&mask, &xp).map_err(|e| CliError::Runtime(format!("extraction: {e}")))?;
    save_graph(&g, &a.out).map_err(|e| write_failed("graph", &a.out, e))
}

#[derive(Args, Debug, Clone)]
struct EvalArgs {
    /// Predicted graph JSON.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth graph JSON.
    #[arg(long)]
    gt: PathBuf,
    /// Also write the scores JSON here (stdout always gets them).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    eval: EvalOpts,
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let ec = a.eval.build()?;
    let pred = read_graph("--pred", &a.pred)?;
    let gt = read_graph("--gt", &a.gt)?;
    let scores =
        evaluate(&pred, &gt, &ec).map_err(|e| CliError::Runtime(format!("evaluation: {e}")))?;
    let mut json = serde_json::to_string_pretty(&scores)
        .map_err(|e| CliError::Runtime(format!("cannot serialize scores: {e}")))?;
    json.push('\n');
    if let Some(out) = &a.out {
        std::fs::write(out, &json).map_err(|e| write_failed("scores", out, e))?;
    }
    print!("{json}");
    Ok(())
}

#[derive(Args, Debug, Clone)]
struct RefineArgs {
    /// Input probability mask PNG.
    #[arg(long)]
    mask: PathBuf,
    /// Conditioning raster PNG; defaults to the input mask.
    #[arg(long)]
    cond: Option<PathBuf>,
    /// Denoiser: oracle:<clean.png>, toy:<weights.bin>, or zero.
    #[arg(long)]
    denoiser: String,
    /// Model resolution the mask is resized to for sampling.
    #[arg(long, default_value_t = 256)]
    model_size: usize,
    /// Output PNG path for the refined mask.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    sampler: SamplerOpts,
    #[command(flatten)]
    sched: ScheduleOpts,
}

fn cmd_refine(a: RefineArgs) -> Result<(), CliError> {
    let sched = a.sched.build()?;
    let cfg = a.sampler.build(&sched)?;
    if a.model_size == 0 {
        return Err(CliError::Usage("--model-size must be >= 1".into()));
    }
    let spec = parse_denoiser(&a.denoiser, false)?;
    let mask = read_gray("--mask", &a.mask)?;
    let cond = match &a.cond {
        Some(p) => {
            let c = read_gray("--cond", p)?;
            if (c.width, c.height) != (mask.width, mask.height) {
                return Err(CliError::Usage(format!(
                    "--cond: dimensions {}x{} do not match --mask {}x{}",
                    c.width, c.height, mask.width, mask.height
                )));
            }
            c
        }
        None => mask.clone(),
    };
    // The whole raster is refined in one pass at the model resolution; use
    // the pipeline command for windowed refinement of large inputs.
    let denoiser: Box<dyn Denoiser> = match spec {
        DenoiserSpec::Toy(p) => Box::new(load_toy_denoiser(&p, sched.clone()).map_err(|e| {
            CliError::Usage(format!(
                "--denoiser: cannot load toy weights '{}': {e}",
                p.display()
            ))
        })?),
        DenoiserSpec::Zero => Box::new(ZeroDenoiser),
        DenoiserSpec::OraclePng(p) => {
            let r = read_gray("--denoiser", &p)?;
            if (r.width, r.height) != (mask.width, mask.height) {
                return Err(CliError::Usage(format!(
                    "--denoiser: oracle target dimensions {}x{} do not match --mask {}x{}",
                    r.width, r.height, mask.width, mask.height
                )));
            }
            let target = resize_bilinear(&r, a.model_size, a.model_size);
            Box::new(OracleDenoiser::new(&target, sched.clone()))
        }
        // parse_denoiser(_, false) already rejected the bare-oracle form.
        DenoiserSpec::OracleFromGt => unreachable!(),
    };
    let refined = refine_mask(&mask, &cond, denoiser.as_ref(), &cfg, &sched, a.model_size)
        .map_err(|e| CliError::Runtime(format!("refinement: {e}")))?;
    save_gray_png(&refined, &a.out).map_err(|e| write_failed("PNG", &a.out, e))
}

// ---------------------------------------------------------------------------
// synth / stats / train
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone)]
struct SynthArgs {
    /// Number of scenes to generate.
    #[arg(long, default_value_t = 1)]
    n: usize,
    /// Base seed; scene i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; each scene goes to scene_<i>/.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    scene: SceneOpts,
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be >= 1".into()));
    }
    // Validate once up front so bad flags fail before any scene is written.
    a.scene.build(a.seed)?;
    for i in 0..a.n {
        let params = a.scene.build(a.seed.wrapping_add(i as u64))?;
        let (gt, clean) = gen_scene(&params)
            .map_err(|e| CliError::Runtime(format!("scene {i}: {e}")))?;
        let corrupt = corrupt_mask(&clean, &params)
            .map_err(|e| CliError::Runtime(format!("scene {i}: {e}")))?;
        let dir = a.out_dir.join(format!("scene_{i:04}"));
        std::fs::create_dir_all(&dir).map_err(|e| write_failed("scene directory", &dir, e))?;
        save_graph(&gt, &dir.join("gt.json"))
            .map_err(|e| write_failed("graph", &dir.join("gt.json"), e))?;
        save_mask_png(&clean, &dir.join("clean.png"))
            .map_err(|e| write_failed("PNG", &dir.join("clean.png"), e))?;
        save_gray_png(&corrupt, &dir.join("corrupt.png"))
            .map_err(|e| write_failed("PNG", &dir.join("corrupt.png"), e))?;
        let mut params_json = serde_json::to_string_pretty(&params)
            .map_err(|e| CliError::Runtime(format!("cannot serialize params: {e}")))?;
        params_json.push('\n');
        std::fs::write(dir.join("params.json"), params_json)
            .map_err(|e| write_failed("params", &dir.join("params.json"), e))?;
    }
    println!("wrote {} scene(s) under '{}'", a.n, a.out_dir.display());
    Ok(())
}

#[derive(Args, Debug, Clone)]
struct StatsArgs {
    /// Mask PNG before the change.
    #[arg(long)]
    before: PathBuf,
    /// Mask PNG after the change.
    #[arg(long)]
    after: PathBuf,
    /// Binarization threshold applied to both inputs.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
}

fn cmd_stats(a: StatsArgs) -> Result<(), CliError> {
    let before = read_gray("--before", &a.before)?;
    let after = read_gray("--after", &a.after)?;
    let b = threshold(&before, a.alpha)
        .map_err(|e| CliError::Usage(format!("--alpha: {e}")))?;
    let c = threshold(&after, a.alpha)
        .map_err(|e| CliError::Usage(format!("--alpha: {e}")))?;
    let stats = mask_change_stats(&b, &c)
        .map_err(|e| CliError::Usage(format!("--after: {e}")))?;
    let mut json = serde_json::to_string_pretty(&stats)
        .map_err(|e| CliError::Runtime(format!("cannot serialize stats: {e}")))?;
    json.push('\n');
    print!("{json}");
    Ok(())
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    /// Number of synthetic training pairs.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Base seed for the synthetic training scenes.
    #[arg(long, default_value_t = 1001)]
    scene_seed: u64,
    /// Model resolution the pairs are resized to.
    #[arg(long, default_value_t = 256)]
    model_size: usize,
    /// SGD steps.
    #[arg(long, default_value_t = 20000)]
    steps: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 0.005)]
    lr: f64,
    /// Seed for weight initialization and training randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output weights file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    sched: ScheduleOpts,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    steps: usize,
    n_params: usize,
    /// Mean loss over the last (up to) 200 steps.
    final_loss: f64,
    out: &'a Path,
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let sched = a.sched.build()?;
    let params = SceneParams {
        seed: a.scene_seed,
        ..SceneParams::default()
    };
    let dataset = make_dataset(a.n, &params, a.model_size).map_err(|e| match e {
        lanegraph::synth::SynthError::InvalidParameter(_) => {
            CliError::Usage(format!("invalid dataset parameters: {e}"))
        }
        other => CliError::Runtime(format!("dataset generation: {other}")),
    })?;
    let (net, losses) = train_toy_denoiser(&dataset, &sched, a.steps, a.lr, a.seed)
        .map_err(|e| CliError::Usage(format!("training: {e}")))?;
    save_toy_denoiser(&net, &a.out).map_err(|e| write_failed("weights", &a.out, e))?;
    let tail = losses.len().min(200);
    let final_loss = if tail == 0 {
        f64::NAN
    } else {
        losses[losses.len() - tail..].iter().sum::<f64>() / tail as f64
    };
    let summary = TrainSummary {
        steps: a.steps,
        n_params: net.n_params(),
        final_loss,
        out: &a.out,
    };
    let mut json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Runtime(format!("cannot serialize summary: {e}")))?;
    json.push('\n');
    print!("{json}");
    Ok(())
}
