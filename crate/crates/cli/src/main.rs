//! `relnav` — command-line front end for the pose estimation toolkit.
//!
//! Subcommands cover the offline training stage (`train`), silhouette
//! classification (`classify`, including k-fold cross-validation), the
//! M-estimator benchmark (`mest-bench`), closed-loop tracking on simulated
//! trajectories (`track`), and numerical self-checks against independent
//! oracles (`check`).
//!
//! Exit codes: 0 on success, 1 for check/assertion failures, 2 for
//! usage or input errors. Every run that writes artifacts also writes a
//! `manifest.json` recording the command, config paths, seed, and a content
//! hash of its inputs.

mod checks;
mod svg;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use relnav::mixture::{
    classify, fit_class_database, kfold_validate, ClassDatabase, ClassId, ConfusionStats,
};
use relnav::pipeline::{
    class_center, silhouette_feature, trace_csv, RunSummary,
};
use relnav::robust::{mest_benchmark, BenchConfig, BenchMethod, BenchResult};
use relnav::scene::{
    augment_training, build_keyframe, bundled_target, constant_twist_trajectory, load_obj,
    rasterize, sample_viewsphere, simulate_correspondences, viewsphere_pose, AugmentConfig,
    CorruptionModel, Keyframe, TrajectoryConfig, TriMesh,
};
use relnav::{BinaryMask, Frame, Intrinsics, Pipeline, PipelineConfig};

// ---------------------------------------------------------------------------
// CLI definition
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(name = "relnav", version, about = "Model-based monocular relative pose estimation")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// JSON configuration file (required by `track`, optional for `mest-bench`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Internal parallelism cap (commands are currently single-threaded).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

/// Pinhole camera shared by training, classification, and tracking. The same
/// values must be used when training a database and when tracking against it.
#[derive(Args, Clone)]
struct CameraArgs {
    #[arg(long, default_value_t = 300.0)]
    fx: f64,
    #[arg(long, default_value_t = 300.0)]
    fy: f64,
    #[arg(long, default_value_t = 160.0)]
    cx: f64,
    #[arg(long, default_value_t = 120.0)]
    cy: f64,
    #[arg(long, default_value_t = 320)]
    width: usize,
    #[arg(long, default_value_t = 240)]
    height: usize,
}

impl CameraArgs {
    fn intrinsics(&self) -> Intrinsics {
        Intrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

/// Viewsphere class-training parameters shared by `train` and the k-fold
/// mode of `classify`.
#[derive(Args, Clone)]
struct ClassTrainArgs {
    /// Azimuth class bin width in degrees (must divide 360).
    #[arg(long, default_value_t = 45.0)]
    class_az_bin: f64,
    /// Elevation class bin width in degrees (must divide 180).
    #[arg(long, default_value_t = 45.0)]
    class_el_bin: f64,
    /// Shape feature dimension (truncated Zernike magnitude vector).
    #[arg(long, default_value_t = 20)]
    feature_dim: usize,
    /// Initial mixture components per class.
    #[arg(long, default_value_t = 1)]
    components: usize,
    /// Morphological augmentation radius in pixels.
    #[arg(long, default_value_t = 2)]
    augment_morph: usize,
    /// Tilt augmentation magnitude in degrees.
    #[arg(long, default_value_t = 3.0)]
    augment_tilt: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Render the viewsphere and build keyframe + class databases.
    Train(TrainArgs),
    /// Rank view classes for silhouette masks, or cross-validate a database.
    Classify(ClassifyArgs),
    /// Run the M-estimator convergence benchmark.
    MestBench,
    /// Track a simulated constant-twist trajectory end to end.
    Track(TrackArgs),
    /// Run the numerical self-check suites.
    Check(CheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Target mesh: an OBJ path or `bundled` for the built-in test target.
    #[arg(long, default_value = "bundled")]
    mesh: String,
    /// Viewsphere azimuth step in degrees.
    #[arg(long, default_value_t = 9.0)]
    az_step: f64,
    /// Viewsphere elevation step in degrees.
    #[arg(long, default_value_t = 9.0)]
    el_step: f64,
    /// Camera-to-target distance for training renders, meters.
    #[arg(long, default_value_t = 50.0)]
    distance: f64,
    /// Interior feature catalog density (fraction of silhouette pixels).
    #[arg(long, default_value_t = 0.02)]
    density: f64,
    /// Skip the class-database stage and only write keyframes.
    #[arg(long)]
    skip_classes: bool,
    #[command(flatten)]
    camera: CameraArgs,
    #[command(flatten)]
    classes: ClassTrainArgs,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Class database JSON produced by `train`.
    #[arg(long, required_unless_present = "kfold")]
    db: Option<PathBuf>,
    /// Silhouette masks (binary PGM) to classify.
    masks: Vec<PathBuf>,
    /// Number of ranked classes to print per mask.
    #[arg(long, default_value_t = 5)]
    top: usize,
    /// Run k-fold cross-validation on a freshly rendered corpus instead.
    #[arg(long)]
    kfold: Option<usize>,
    /// Target mesh for k-fold mode.
    #[arg(long, default_value = "bundled")]
    mesh: String,
    /// Render distance for k-fold mode, meters.
    #[arg(long, default_value_t = 50.0)]
    distance: f64,
    #[command(flatten)]
    camera: CameraArgs,
    #[command(flatten)]
    classes: ClassTrainArgs,
}

#[derive(Args)]
struct TrackArgs {
    /// Directory holding `kf_*.{json,pgm,depth}` from `train`.
    #[arg(long)]
    keyframes: PathBuf,
    /// Class database JSON from `train`.
    #[arg(long)]
    class_db: PathBuf,
    /// Target mesh: an OBJ path or `bundled`.
    #[arg(long, default_value = "bundled")]
    mesh: String,
    /// Steady-state window start for summary statistics, seconds.
    #[arg(long, default_value_t = 20.0)]
    steady_after: f64,
    #[command(flatten)]
    camera: CameraArgs,
}

#[derive(Args)]
struct CheckArgs {
    /// Test hook: scale the closed-form process-noise matrix before it is
    /// compared against quadrature, to demonstrate the oracle failing.
    #[arg(long, hide = true, default_value_t = 1.0)]
    perturb_gamma: f64,
}

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

struct CliError {
    msg: String,
    code: u8,
}

impl CliError {
    fn input(msg: impl Into<String>) -> CliError {
        CliError { msg: msg.into(), code: 2 }
    }

    fn failure(msg: impl Into<String>) -> CliError {
        CliError { msg: msg.into(), code: 1 }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.msg.is_empty() {
                eprintln!("error: {}", e.msg);
            }
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.jobs == 0 {
        return Err(CliError::input("--jobs must be at least 1"));
    }
    match &cli.command {
        Command::Train(args) => cmd_train(&cli, args),
        Command::Classify(args) => cmd_classify(&cli, args),
        Command::MestBench => cmd_mest_bench(&cli),
        Command::Track(args) => cmd_track(&cli, args),
        Command::Check(args) => cmd_check(args),
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Provenance record written alongside every artifact set.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    config_paths: Vec<String>,
    seed: u64,
    input_hash: String,
    out_dir: String,
}

fn write_manifest(out: &Path, command: &str, configs: &[&Path], seed: u64) -> Result<()> {
    let mut hasher = Sha256::new();
    for p in configs {
        hasher.update(p.to_string_lossy().as_bytes());
        let bytes = std::fs::read(p)
            .map_err(|e| CliError::input(format!("cannot hash input {}: {e}", p.display())))?;
        hasher.update(&bytes);
    }
    let manifest = RunManifest {
        command: command.to_string(),
        config_paths: configs.iter().map(|p| p.display().to_string()).collect(),
        seed,
        input_hash: hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect(),
        out_dir: out.display().to_string(),
    };
    write_file(
        &out.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).unwrap(),
    )
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))
}

/// Loads `bundled` or an OBJ path; a missing or unreadable mesh is a usage
/// error (exit 2).
fn load_mesh(spec: &str) -> Result<(TriMesh, Option<PathBuf>)> {
    if spec == "bundled" {
        return Ok((bundled_target(), None));
    }
    let path = PathBuf::from(spec);
    let mesh = load_obj(&path)
        .map_err(|e| CliError::input(format!("cannot load mesh {}: {e}", path.display())))?;
    Ok((mesh, Some(path)))
}

fn bin_count(width: f64, span: f64, what: &str) -> Result<usize> {
    let n = span / width;
    if !(width > 0.0) || (n - n.round()).abs() > 1e-9 {
        return Err(CliError::input(format!(
            "{what} bin width {width} does not divide {span}"
        )));
    }
    Ok(n.round() as usize)
}

/// Renders the class-training corpus: for every viewsphere bin, nine views
/// around the bin center, each expanded by silhouette augmentation, reduced
/// to truncated Zernike feature vectors.
fn training_corpus(
    mesh: &TriMesh,
    k: &Intrinsics,
    distance: f64,
    args: &ClassTrainArgs,
) -> Result<Vec<(ClassId, Vec<DVector<f64>>)>> {
    let n_az = bin_count(args.class_az_bin, 360.0, "azimuth")?;
    let n_el = bin_count(args.class_el_bin, 180.0, "elevation")?;
    let aug = AugmentConfig {
        morph_radius: args.augment_morph,
        tilt_deg: args.augment_tilt,
    };
    let mut corpus = Vec::with_capacity(n_az * n_el);
    for ie in 0..n_el {
        for ia in 0..n_az {
            let id = ClassId { az_bin: ia, el_bin: ie };
            let (az_c, el_c) = class_center(id, args.class_az_bin, args.class_el_bin);
            let mut features = Vec::new();
            for da in [-args.class_az_bin / 4.0, 0.0, args.class_az_bin / 4.0] {
                for de in [-args.class_el_bin / 4.0, 0.0, args.class_el_bin / 4.0] {
                    let pose = viewsphere_pose(az_c + da, el_c + de, distance);
                    let (mask, _) = rasterize(mesh, k, &pose);
                    if mask.count() == 0 {
                        return Err(CliError::input(format!(
                            "empty silhouette at az {az_c} el {el_c}: target out of frame"
                        )));
                    }
                    for variant in augment_training(&mask, &aug) {
                        let f = silhouette_feature(&variant, args.feature_dim)
                            .map_err(|e| CliError::failure(format!("feature extraction: {e}")))?;
                        features.push(f);
                    }
                }
            }
            corpus.push((id, features));
        }
    }
    Ok(corpus)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let (mesh, mesh_path) = load_mesh(&args.mesh)?;
    let k = args.camera.intrinsics();
    ensure_out(&cli.out)?;
    let kf_dir = cli.out.join("keyframes");
    ensure_out(&kf_dir)?;

    let views = sample_viewsphere(args.az_step, args.el_step, args.distance);
    for (i, view) in views.iter().enumerate() {
        let kf = build_keyframe(&mesh, &k, view, i as u32, args.density)
            .map_err(|e| CliError::failure(format!("keyframe {i}: {e}")))?;
        kf.save_to_dir(&kf_dir)
            .map_err(|e| CliError::input(format!("writing keyframe {i}: {e}")))?;
    }
    println!("wrote {} keyframes to {}", views.len(), kf_dir.display());

    if !args.skip_classes {
        let corpus = training_corpus(&mesh, &k, args.distance, &args.classes)?;
        let mut rng = StdRng::seed_from_u64(cli.seed);
        let db = fit_class_database(
            &corpus,
            args.classes.components,
            args.classes.class_az_bin,
            args.classes.class_el_bin,
            &mut rng,
        )
        .map_err(|e| CliError::failure(format!("class database fit: {e}")))?;
        let db_path = cli.out.join("class_db.json");
        write_file(&db_path, &db.to_json())?;
        println!("wrote {} classes to {}", db.classes.len(), db_path.display());
    }

    let configs: Vec<&Path> = mesh_path.iter().map(|p| p.as_path()).collect();
    write_manifest(&cli.out, "train", &configs, cli.seed)
}

// ---------------------------------------------------------------------------
// classify
// ---------------------------------------------------------------------------

fn load_db(path: &Path) -> Result<ClassDatabase> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    ClassDatabase::from_json(&text)
        .map_err(|e| CliError::input(format!("bad class database {}: {e}", path.display())))
}

fn cmd_classify(cli: &Cli, args: &ClassifyArgs) -> Result<()> {
    if let Some(k) = args.kfold {
        return cmd_classify_kfold(cli, args, k);
    }
    let db = load_db(args.db.as_ref().unwrap())?;
    if args.masks.is_empty() {
        return Err(CliError::input("no mask files given"));
    }
    for path in &args.masks {
        let mut file = std::fs::File::open(path)
            .map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?;
        let mask = BinaryMask::read_pgm(&mut file)
            .map_err(|e| CliError::input(format!("bad PGM {}: {e}", path.display())))?;
        let feature = silhouette_feature(&mask, db.d)
            .map_err(|e| CliError::failure(format!("{}: {e}", path.display())))?;
        let ranked = classify(&db, &feature)
            .map_err(|e| CliError::failure(format!("{}: {e}", path.display())))?;
        let classes: Vec<serde_json::Value> = ranked
            .iter()
            .take(args.top)
            .map(|(id, p)| {
                serde_json::json!({"az_bin": id.az_bin, "el_bin": id.el_bin, "p": p})
            })
            .collect();
        let line = serde_json::json!({"file": path.display().to_string(), "classes": classes});
        println!("{line}");
    }
    Ok(())
}

fn cmd_classify_kfold(cli: &Cli, args: &ClassifyArgs, k: usize) -> Result<()> {
    if k < 2 {
        return Err(CliError::input("--kfold must be at least 2"));
    }
    let (mesh, mesh_path) = load_mesh(&args.mesh)?;
    let cam = args.camera.intrinsics();
    let corpus = training_corpus(&mesh, &cam, args.distance, &args.classes)?;
    let n_az = bin_count(args.classes.class_az_bin, 360.0, "azimuth")?;
    let components = args.classes.components;
    let azw = args.classes.class_az_bin;
    let elw = args.classes.class_el_bin;
    let fit_seed = cli.seed ^ 0x5eed_c1a5;
    let mut rng = StdRng::seed_from_u64(cli.seed);
    let stats = kfold_validate(&corpus, k, n_az, &mut rng, |train| {
        let mut fold_rng = StdRng::seed_from_u64(fit_seed);
        let db = fit_class_database(train, components, azw, elw, &mut fold_rng)?;
        Ok(move |y: &DVector<f64>| classify(&db, y).unwrap()[0].0)
    })
    .map_err(|e| CliError::failure(format!("k-fold validation: {e}")))?;

    ensure_out(&cli.out)?;
    write_hist_outputs(&cli.out, &stats)?;
    println!(
        "{}",
        serde_json::json!({
            "n_tested": stats.n_tested,
            "az_exact": stats.az_exact(),
            "az_within_1": stats.az_within(1),
            "el_exact": stats.el_exact(),
            "el_within_1": stats.el_within(1),
        })
    );
    let configs: Vec<&Path> = mesh_path.iter().map(|p| p.as_path()).collect();
    write_manifest(&cli.out, "classify --kfold", &configs, cli.seed)
}

/// Writes the bin-distance PMF/CDF histograms as CSV plus one SVG chart.
fn write_hist_outputs(out: &Path, stats: &ConfusionStats) -> Result<()> {
    let mut series = Vec::new();
    for (name, pmf) in [("azimuth", &stats.az_pmf), ("elevation", &stats.el_pmf)] {
        let mut csv = String::from("distance,pmf,cdf\n");
        let mut cdf = 0.0;
        let mut pmf_pts = Vec::new();
        let mut cdf_pts = Vec::new();
        for (d, &p) in pmf.iter().enumerate() {
            cdf += p;
            let _ = writeln!(csv, "{d},{p},{cdf}");
            pmf_pts.push((d as f64, p));
            cdf_pts.push((d as f64, cdf));
        }
        write_file(&out.join(format!("{name}_hist.csv")), &csv)?;
        series.push(svg::Series { name: format!("{name} PMF"), points: pmf_pts });
        series.push(svg::Series { name: format!("{name} CDF"), points: cdf_pts });
    }
    write_file(
        &out.join("kfold_hist.svg"),
        &svg::line_chart(
            "k-fold classification bin-distance histogram",
            "bin distance",
            "probability",
            &series,
        ),
    )
}

// ---------------------------------------------------------------------------
// mest-bench
// ---------------------------------------------------------------------------

/// On-disk benchmark configuration; a strict superset of the library
/// [`BenchConfig`] with the mandatory `version` field.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchConfigFile {
    version: u32,
    n_points: usize,
    cube_side: f64,
    depth: f64,
    noise_px: f64,
    perturb_rot: f64,
    perturb_trans: f64,
    outlier_fraction: f64,
    trials: usize,
    iterations: usize,
    seed: u64,
}

fn cmd_mest_bench(cli: &Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
            let f: BenchConfigFile = serde_json::from_str(&text)
                .map_err(|e| CliError::input(format!("bad config {}: {e}", path.display())))?;
            if f.version != 1 {
                return Err(CliError::input(format!(
                    "unsupported config version {}",
                    f.version
                )));
            }
            BenchConfig {
                n_points: f.n_points,
                cube_side: f.cube_side,
                depth: f.depth,
                noise_px: f.noise_px,
                perturb_rot: f.perturb_rot,
                perturb_trans: f.perturb_trans,
                outlier_fraction: f.outlier_fraction,
                trials: f.trials,
                iterations: f.iterations,
                seed: f.seed,
            }
        }
        None => BenchConfig { seed: cli.seed, ..BenchConfig::default() },
    };
    let result = mest_benchmark(&config);
    ensure_out(&cli.out)?;
    write_file(&cli.out.join("bench.csv"), &result.to_csv())?;
    write_bench_plots(&cli.out, &result)?;

    let mut summary = serde_json::Map::new();
    for method in BenchMethod::ALL {
        let (t, r) = result.final_errors(method);
        summary.insert(
            method.name().to_string(),
            serde_json::json!({"t_err_norm": t, "r_err_norm": r}),
        );
    }
    write_file(
        &cli.out.join("bench_summary.json"),
        &serde_json::to_string_pretty(&summary).unwrap(),
    )?;
    println!("{}", serde_json::Value::Object(summary));
    let configs: Vec<&Path> = cli.config.iter().map(|p| p.as_path()).collect();
    write_manifest(&cli.out, "mest-bench", &configs, config.seed)
}

fn write_bench_plots(out: &Path, result: &BenchResult) -> Result<()> {
    for (tag, pick) in [("translation", 0usize), ("rotation", 1usize)] {
        let series: Vec<svg::Series> = BenchMethod::ALL
            .iter()
            .map(|&m| svg::Series {
                name: m.name().to_string(),
                points: result
                    .mean_curve(m)
                    .iter()
                    .map(|&(it, t, r)| (it, if pick == 0 { t } else { r }))
                    .collect(),
            })
            .collect();
        write_file(
            &out.join(format!("bench_{tag}.svg")),
            &svg::line_chart(
                &format!("mean normalized {tag} error vs iteration"),
                "iteration",
                "normalized error",
                &series,
            ),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// track
// ---------------------------------------------------------------------------

fn load_keyframes(dir: &Path) -> Result<Vec<Keyframe>> {
    let mut ids = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::input(e.to_string()))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_prefix("kf_").and_then(|s| s.strip_suffix(".json")) {
            if let Ok(id) = stem.parse::<u32>() {
                ids.push(id);
            }
        }
    }
    if ids.is_empty() {
        return Err(CliError::input(format!(
            "no keyframes found in {}",
            dir.display()
        )));
    }
    ids.sort_unstable();
    ids.iter()
        .map(|&id| {
            Keyframe::load_from_dir(dir, id)
                .map_err(|e| CliError::input(format!("keyframe {id}: {e}")))
        })
        .collect()
}

fn cmd_track(cli: &Cli, args: &TrackArgs) -> Result<()> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::input("track requires --config <trajectory.json>"))?;
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", config_path.display())))?;
    let traj: TrajectoryConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::input(format!("bad config {}: {e}", config_path.display())))?;
    traj.validate().map_err(CliError::input)?;

    let (mesh, mesh_path) = load_mesh(&args.mesh)?;
    let k = args.camera.intrinsics();
    let keyframes = load_keyframes(&args.keyframes)?;
    let sim_keyframes = keyframes.clone();
    let db = load_db(&args.class_db)?;
    let mut pipeline = Pipeline::new(PipelineConfig::new(k), keyframes, Some(db));

    let model = CorruptionModel {
        noise_px: traj.noise_px,
        outlier_fraction: traj.outlier_fraction,
        confusion_rate: traj.confusion_rate,
        ..CorruptionModel::default()
    };
    let truth = constant_twist_trajectory(&traj);
    let mut results = Vec::with_capacity(truth.len());
    for (i, (t, pose)) in truth.iter().enumerate() {
        let frame_seed = traj.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let kf = &sim_keyframes[pipeline.current_keyframe()];
        let (mask, _) = rasterize(&mesh, &k, pose);
        let (points, _) = simulate_correspondences(kf, pose, &k, &model, frame_seed);
        let frame = Frame {
            t: *t,
            silhouette: (mask.count() > 0).then_some(mask),
            points,
        };
        let result = pipeline
            .step(&frame, Some(pose))
            .map_err(|e| CliError::failure(format!("frame {i} (t = {t} s): {e}")))?;
        results.push(result);
    }

    ensure_out(&cli.out)?;
    write_file(&cli.out.join("trace.csv"), &trace_csv(&results))?;
    let summary = RunSummary::from_results(&results, args.steady_after);
    let summary_json = serde_json::to_string_pretty(&summary).unwrap();
    write_file(&cli.out.join("summary.json"), &summary_json)?;
    println!("{}", serde_json::to_string(&summary).unwrap());

    let err_series = [
        svg::Series {
            name: "position error [m]".to_string(),
            points: results
                .iter()
                .filter_map(|r| r.truth_error.map(|(et, _)| (r.t, et)))
                .collect(),
        },
        svg::Series {
            name: "attitude error [deg]".to_string(),
            points: results
                .iter()
                .filter_map(|r| r.truth_error.map(|(_, er)| (r.t, er.to_degrees())))
                .collect(),
        },
    ];
    write_file(
        &cli.out.join("errors.svg"),
        &svg::line_chart("tracking error vs time", "t [s]", "error", &err_series),
    )?;
    let cov_series = [svg::Series {
        name: "covariance trace".to_string(),
        points: results
            .iter()
            .map(|r| (r.t, r.state.covariance.trace()))
            .collect(),
    }];
    write_file(
        &cli.out.join("covariance.svg"),
        &svg::line_chart("covariance trace vs time", "t [s]", "trace", &cov_series),
    )?;

    let mut configs: Vec<&Path> = vec![config_path.as_path()];
    configs.extend(mesh_path.iter().map(|p| p.as_path()));
    configs.push(args.class_db.as_path());
    write_manifest(&cli.out, "track", &configs, traj.seed)
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

fn cmd_check(args: &CheckArgs) -> Result<()> {
    let reports = checks::run_all(42, args.perturb_gamma);
    let mut failures = 0;
    for r in &reports {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {} (max error {:.3e}, tolerance {:.1e})",
            r.name, r.max_err, r.tol
        );
        if !r.passed() {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(CliError::failure(format!(
            "{failures} of {} checks failed",
            reports.len()
        )));
    }
    println!("all {} checks passed", reports.len());
    Ok(())
}
