//! `acr`: command line front end for the two-hand reconstruction pipeline.
//! Subcommands generate synthetic scenes with oracle attention maps, run the
//! aggregation stage over a map stack, fit hand parameters by
//! finite-difference descent, export meshes/heatmaps, and score predictions.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use acr_core::aggregate::{aggregate_maps, AggregationHeads, InteractionConfig};
use acr_core::export::{atomic_write, write_obj, write_pgm};
use acr_core::fit::{fit_scene, FitConfig, FitResult};
use acr_core::hand::{regress_joints, skin_mesh, HandParams, Handedness};
use acr_core::loss::{joint_errors, pa_mpjpe_m};
use acr_core::maps::{render_center_map, CenterSpec, MapStack};
use acr_core::rig::HandRig;
use acr_core::synth::{
    load_scene, oracle_maps, perturb_params, sample_scene, save_scene, Scene, SceneConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "acr",
    about = "Two-hand reconstruction pipeline: synthetic scenes, attention \
             aggregation, parameter fitting, evaluation, export",
    version
)]
struct Cli {
    /// Log progress to standard error.
    #[arg(long, global = true)]
    verbose: bool,

    /// Worker threads for scene-parallel work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Hand rig JSON; the built-in rig when omitted.
    #[arg(long, global = true)]
    rig: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample scenes and write scene_{i}.json plus oracle maps_{i}.acrt.
    Synth(SynthArgs),
    /// Run attention aggregation over a map stack and decode both hands.
    Aggregate(AggregateArgs),
    /// Fit hand parameters to a scene from a perturbed start.
    Fit(FitArgs),
    /// Export ground-truth meshes (OBJ) and center heatmaps (PGM).
    Export(ExportArgs),
    /// Score predicted parameters against a scene's ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Base seed; scene i uses seed + i. Falls back to ACR_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of scenes.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Scene sampling config JSON (every field optional).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AggregateArgs {
    /// Map stack tensor file.
    #[arg(long)]
    maps: PathBuf,
    /// Interaction config JSON (alpha, gamma, lambda_clamp).
    #[arg(long)]
    interaction_config: Option<PathBuf>,
    /// Result JSON path; printed to standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Scene JSON.
    #[arg(long)]
    scene: PathBuf,
    /// Perturbation magnitude applied to the ground truth to form the start.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Fit config JSON (every field optional).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for fitted.json, trace.csv and metrics.json.
    #[arg(long)]
    out: PathBuf,
    /// Perturbation seed. Falls back to ACR_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExportArgs {
    /// Scene JSON.
    #[arg(long)]
    scene: PathBuf,
    /// Directory for {left,right}.obj meshes.
    #[arg(long)]
    obj: Option<PathBuf>,
    /// Directory for center_{left,right}.pgm heatmaps.
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted parameters: JSON with optional left/right entries
    /// (fitted.json from the fit command, or a scene JSON).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth scene JSON.
    #[arg(long)]
    gt: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("thread pool already initialized")?;
    }
    let rig = match &cli.rig {
        Some(path) => HandRig::load_json(path)
            .with_context(|| format!("loading rig from {}", path.display()))?,
        None => HandRig::toy(),
    };
    match &cli.cmd {
        Cmd::Synth(args) => cmd_synth(&cli, &rig, args),
        Cmd::Aggregate(args) => cmd_aggregate(&cli, args),
        Cmd::Fit(args) => cmd_fit(&cli, &rig, args),
        Cmd::Export(args) => cmd_export(&cli, &rig, args),
        Cmd::Eval(args) => cmd_eval(&cli, &rig, args),
    }
}

fn vlog(cli: &Cli, msg: impl AsRef<str>) {
    if cli.verbose {
        eprintln!("acr: {}", msg.as_ref());
    }
}

/// --seed flag, then the ACR_SEED environment variable, then 0.
fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("ACR_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .with_context(|| format!("ACR_SEED={v} is not an unsigned integer")),
        Err(_) => Ok(0),
    }
}

fn load_json_config<T: serde::de::DeserializeOwned + Default>(
    path: &Option<PathBuf>,
    what: &str,
) -> Result<T> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading {what} from {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {what}"))
        }
        None => Ok(T::default()),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    atomic_write(path, text.as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn cmd_synth(cli: &Cli, rig: &HandRig, args: &SynthArgs) -> Result<()> {
    let base = resolve_seed(args.seed)?;
    let cfg: SceneConfig = load_json_config(&args.config, "scene config")?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    (0..args.count)
        .into_par_iter()
        .map(|i| -> Result<()> {
            let seed = base + i as u64;
            let scene = sample_scene(rig, seed, &cfg)
                .with_context(|| format!("sampling scene {i} (seed {seed})"))?;
            let scene_path = args.out.join(format!("scene_{i}.json"));
            save_scene(&scene_path, &scene)?;
            let maps = oracle_maps(rig, &scene)?;
            maps.save(&args.out.join(format!("maps_{i}.acrt")))?;
            vlog(cli, format!("scene {i} (seed {seed}) written"));
            Ok(())
        })
        .collect::<Result<Vec<_>>>()?;
    vlog(
        cli,
        format!("{} scene(s) in {}", args.count, args.out.display()),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// aggregate
// ---------------------------------------------------------------------------

fn cmd_aggregate(cli: &Cli, args: &AggregateArgs) -> Result<()> {
    let maps = MapStack::load(&args.maps)
        .with_context(|| format!("loading map stack from {}", args.maps.display()))?;
    let icfg: InteractionConfig =
        load_json_config(&args.interaction_config, "interaction config")?;
    // identity heads: the configuration under which oracle map stacks decode
    // back to the exact scene parameters
    let heads = AggregationHeads::identity_init();
    let result = aggregate_maps(&maps, &heads, &icfg)?;
    vlog(
        cli,
        format!(
            "lambda {}, left present {}, right present {}",
            result.lambda, result.left.present, result.right.present
        ),
    );
    match &args.out {
        Some(path) => write_json(path, &result)?,
        None => println!("{}", serde_json::to_string_pretty(&result)?),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

/// Wire form of a fit outcome; eval accepts the same left/right layout.
#[derive(Serialize)]
struct FittedFile<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    left: &'a Option<HandParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    right: &'a Option<HandParams>,
    converged: bool,
    iterations: usize,
    initial_loss: f64,
    final_loss: f64,
}

#[derive(Serialize)]
struct FitMetricsFile {
    initial: EvalReport,
    #[serde(rename = "final")]
    final_: EvalReport,
}

fn trace_csv(result: &FitResult) -> String {
    let mut csv = String::from("iter,total");
    for t in &result.trace[0].terms {
        csv.push(',');
        csv.push_str(t.name);
    }
    csv.push('\n');
    for row in &result.trace {
        csv.push_str(&format!("{},{}", row.iter, row.total));
        for t in &row.terms {
            csv.push_str(&format!(",{}", t.weighted));
        }
        csv.push('\n');
    }
    csv
}

fn cmd_fit(cli: &Cli, rig: &HandRig, args: &FitArgs) -> Result<()> {
    if !(args.noise >= 0.0 && args.noise.is_finite()) {
        bail!("noise {} must be a finite non-negative number", args.noise);
    }
    let scene = load_scene(rig, &args.scene, &SceneConfig::default())
        .with_context(|| format!("loading scene from {}", args.scene.display()))?;
    let cfg: FitConfig = load_json_config(&args.config, "fit config")?;
    let seed = resolve_seed(args.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start_left = scene
        .params(Handedness::Left)
        .map(|p| perturb_params(p, args.noise, &mut rng));
    let start_right = scene
        .params(Handedness::Right)
        .map(|p| perturb_params(p, args.noise, &mut rng));

    let initial = evaluate_params(rig, &scene, start_left.as_ref(), start_right.as_ref())?;
    let result = fit_scene(rig, &scene, start_left.as_ref(), start_right.as_ref(), &cfg)?;
    let final_ = evaluate_params(rig, &scene, result.left.as_ref(), result.right.as_ref())?;
    vlog(
        cli,
        format!(
            "{} iterations, loss {} -> {}, joint error {} -> {} mm",
            result.iterations,
            result.initial_loss,
            result.final_loss,
            initial.mean_mpjpe_mm,
            final_.mean_mpjpe_mm
        ),
    );

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_json(
        &args.out.join("fitted.json"),
        &FittedFile {
            left: &result.left,
            right: &result.right,
            converged: result.converged,
            iterations: result.iterations,
            initial_loss: result.initial_loss,
            final_loss: result.final_loss,
        },
    )?;
    atomic_write(&args.out.join("trace.csv"), trace_csv(&result).as_bytes())?;
    write_json(
        &args.out.join("metrics.json"),
        &FitMetricsFile { initial, final_ },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// export
// ---------------------------------------------------------------------------

fn cmd_export(cli: &Cli, rig: &HandRig, args: &ExportArgs) -> Result<()> {
    if args.obj.is_none() && args.heatmap.is_none() {
        bail!("nothing to export: pass --obj and/or --heatmap");
    }
    let scene = load_scene(rig, &args.scene, &SceneConfig::default())
        .with_context(|| format!("loading scene from {}", args.scene.display()))?;

    if let Some(dir) = &args.obj {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for hand in scene.present_hands() {
            let truth = scene.truth(hand).expect("present hand has truth");
            let name = match hand {
                Handedness::Left => "left.obj",
                Handedness::Right => "right.obj",
            };
            write_obj(&dir.join(name), &truth.mesh, rig.faces())?;
            vlog(cli, format!("wrote {} ({} vertices)", name, truth.mesh.len()));
        }
    }

    if let Some(dir) = &args.heatmap {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let specs: [Option<CenterSpec>; 2] = std::array::from_fn(|i| {
            let hand = [Handedness::Left, Handedness::Right][i];
            let truth = scene.truth(hand)?;
            Some(CenterSpec {
                center: scene.centers_disentangled[i]?,
                kernel: truth.kernel,
            })
        });
        let center = render_center_map(scene.map_size, scene.map_size, &specs);
        for (i, name) in ["center_left.pgm", "center_right.pgm"].iter().enumerate() {
            if specs[i].is_none() {
                continue;
            }
            write_pgm(&dir.join(name), &center.index_axis(ndarray::Axis(0), i))?;
            vlog(cli, format!("wrote {name}"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// Per-hand joint and vertex errors, millimeters.
#[derive(Serialize)]
struct HandEval {
    hand: Handedness,
    mpjpe_mm: f64,
    pa_mpjpe_mm: f64,
    mpvpe_mm: f64,
    pa_mpvpe_mm: f64,
}

#[derive(Serialize)]
struct EvalReport {
    hands: Vec<HandEval>,
    mean_mpjpe_mm: f64,
    mean_pa_mpjpe_mm: f64,
    mean_mpvpe_mm: f64,
    mean_pa_mpvpe_mm: f64,
}

/// Joint and vertex error metrics of candidate parameters against scene
/// ground truth. Hand presence must match exactly.
fn evaluate_params(
    rig: &HandRig,
    scene: &Scene,
    left: Option<&HandParams>,
    right: Option<&HandParams>,
) -> Result<EvalReport> {
    let mut hands = Vec::new();
    for (hand, cand) in [(Handedness::Left, left), (Handedness::Right, right)] {
        let truth = scene.truth(hand);
        match (truth, cand) {
            (None, None) => continue,
            (Some(_), None) => bail!("prediction is missing the {hand:?} hand"),
            (None, Some(_)) => bail!("prediction has a {hand:?} hand the scene does not"),
            (Some(truth), Some(params)) => {
                let mesh = skin_mesh(rig, params)?;
                let joints = regress_joints(rig, &mesh)?;
                let je = joint_errors(&joints, &truth.joints3d)?;
                // vertex error, root-aligned like the joint metric
                let root_p = joints[0];
                let root_g = truth.joints3d[0];
                let mpvpe_mm = mesh
                    .iter()
                    .zip(&truth.mesh)
                    .map(|(p, g)| ((p - root_p) - (g - root_g)).norm())
                    .sum::<f64>()
                    / mesh.len() as f64
                    * 1000.0;
                let pa_mpvpe_mm = pa_mpjpe_m(&mesh, &truth.mesh)? * 1000.0;
                hands.push(HandEval {
                    hand,
                    mpjpe_mm: je.mpjpe_mm,
                    pa_mpjpe_mm: je.pa_mpjpe_mm,
                    mpvpe_mm,
                    pa_mpvpe_mm,
                });
            }
        }
    }
    if hands.is_empty() {
        bail!("no hands to evaluate");
    }
    let n = hands.len() as f64;
    Ok(EvalReport {
        mean_mpjpe_mm: hands.iter().map(|h| h.mpjpe_mm).sum::<f64>() / n,
        mean_pa_mpjpe_mm: hands.iter().map(|h| h.pa_mpjpe_mm).sum::<f64>() / n,
        mean_mpvpe_mm: hands.iter().map(|h| h.mpvpe_mm).sum::<f64>() / n,
        mean_pa_mpvpe_mm: hands.iter().map(|h| h.pa_mpvpe_mm).sum::<f64>() / n,
        hands,
    })
}

/// Any JSON object carrying optional left/right hand parameters.
#[derive(Deserialize)]
struct PredFile {
    #[serde(default)]
    left: Option<HandParams>,
    #[serde(default)]
    right: Option<HandParams>,
}

fn cmd_eval(cli: &Cli, rig: &HandRig, args: &EvalArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.pred)
        .with_context(|| format!("reading predictions from {}", args.pred.display()))?;
    let pred: PredFile = serde_json::from_str(&text).context("parsing predictions")?;
    let scene = load_scene(rig, &args.gt, &SceneConfig::default())
        .with_context(|| format!("loading scene from {}", args.gt.display()))?;
    let report = evaluate_params(rig, &scene, pred.left.as_ref(), pred.right.as_ref())?;
    vlog(cli, format!("{} hand(s) scored", report.hands.len()));
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
