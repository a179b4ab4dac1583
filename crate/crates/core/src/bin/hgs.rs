//! `hgs`: train, render, evaluate and verify half-Gaussian splatting scenes.
//!
//! Exit codes: 0 success, 1 a verification or numerical failure, 2 a usage
//! or input error. `HGS_THREADS` overrides the worker thread count.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use hgs_core::fixtures::{Fixture, FixtureKind};
use hgs_core::geometry::CameraModel;
use hgs_core::io::{
    find_initial_model, load_any_model, load_cameras, load_dataset, load_scene, save_scene, write_image, ModelKind, NormalInit,
};
use hgs_core::metrics::evaluate;
use hgs_core::raster::{depth_to_image, normals_to_image, render_depth_normalmap};
use hgs_core::trainer::{LogRow, TrainConfig, TrainMode, Trainer};
use hgs_core::verify::{closed_form_vs_quadrature, gradient_suite, sh_orthonormality, SuiteReport};
use hgs_core::{render_with, HgsError, Kernel};

const THREADS_ENV: &str = "HGS_THREADS";

#[derive(Parser)]
#[command(name = "hgs", version, about = "Half-Gaussian splatting toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a scene against a dataset's training views.
    Train(TrainArgs),
    /// Render a scene from a camera set or an orbit.
    Render(RenderArgs),
    /// Score a scene on a dataset split and write a CSV report.
    Eval(EvalArgs),
    /// Run the numerical oracle suites.
    Verify(VerifyArgs),
    /// Write a procedural fixture dataset.
    Fixture(FixtureArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Half,
    Full,
}

impl From<KernelArg> for Kernel {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Half => Kernel::HalfGaussian,
            KernelArg::Full => Kernel::FullGaussian,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Scratch,
    Finetune,
    FinetuneDensify,
    FinetuneSelective,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Scratch => TrainMode::FromScratch,
            ModeArg::Finetune => TrainMode::FinetuneAll,
            ModeArg::FinetuneDensify => TrainMode::FinetuneAllWithDensify,
            ModeArg::FinetuneSelective => TrainMode::FinetuneNormalsOpacities,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NormalInitArg {
    Jitter,
    Random,
}

impl From<NormalInitArg> for NormalInit {
    fn from(n: NormalInitArg) -> Self {
        match n {
            NormalInitArg::Jitter => NormalInit::ZeroPlusJitter,
            NormalInitArg::Random => NormalInit::RandomUnit,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureArg {
    Edge,
    Corner,
    Sphere,
}

impl From<FixtureArg> for FixtureKind {
    fn from(f: FixtureArg) -> Self {
        match f {
            FixtureArg::Edge => FixtureKind::Edge,
            FixtureArg::Corner => FixtureKind::Corner,
            FixtureArg::Sphere => FixtureKind::Sphere,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset: a directory with `cameras.json` or a COLMAP text model, or a
    /// camera JSON file.
    #[arg(required_unless_present = "manifest")]
    data: Option<PathBuf>,
    /// Output directory for the scene, checkpoints, metrics and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Initial model: colored points, a Gaussian model or a half-Gaussian
    /// scene. Defaults to the dataset's `points.ply`.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Replay a previous run; every other training flag is ignored.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 30_000)]
    iters: u32,
    #[arg(long, default_value_t = 0.2)]
    lambda_ssim: f64,
    /// Learning rate of the splitting normals; 0 freezes them.
    #[arg(long, default_value_t = 0.003)]
    lr_normal: f64,
    #[arg(long, value_enum, default_value = "scratch")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "half")]
    kernel: KernelArg,
    /// Last densification iteration (exclusive); defaults to
    /// min(20000, iters).
    #[arg(long)]
    densify_until: Option<u32>,
    /// Cap on the primitive count under density control.
    #[arg(long)]
    max_primitives: Option<usize>,
    /// SH degree used when initializing from colored points.
    #[arg(long, default_value_t = 3)]
    sh_degree: usize,
    /// Normal initialization for Gaussian models.
    #[arg(long, value_enum, default_value = "jitter")]
    normal_init: NormalInitArg,
    /// Save a checkpoint every N iterations (0 disables).
    #[arg(long, default_value_t = 5000)]
    checkpoint_every: u32,
    /// Progress line on stderr every N iterations (0 disables).
    #[arg(long, default_value_t = 500)]
    log_every: u32,
}

#[derive(Clone, Debug)]
struct Orbit {
    center: Vector3<f64>,
    radius: f64,
    frames: usize,
}

fn parse_orbit(s: &str) -> Result<Orbit, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != 5 {
        return Err("expected cx,cy,cz,radius,n_frames".into());
    }
    if !(v[3] > 0.0 && v[3].is_finite()) {
        return Err("radius must be positive".into());
    }
    if v[4] < 1.0 || v[4].fract() != 0.0 {
        return Err("n_frames must be a positive integer".into());
    }
    Ok(Orbit {
        center: Vector3::new(v[0], v[1], v[2]),
        radius: v[3],
        frames: v[4] as usize,
    })
}

#[derive(Args)]
struct RenderArgs {
    /// Half-Gaussian scene file.
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Camera set to render (JSON file or dataset directory).
    #[arg(long, conflicts_with = "orbit", required_unless_present = "orbit")]
    cameras: Option<PathBuf>,
    /// Circle of cameras in the horizontal plane: cx,cy,cz,radius,n_frames.
    #[arg(long, value_parser = parse_orbit)]
    orbit: Option<Orbit>,
    /// Orbit image size in pixels.
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u32).range(1..))]
    size: u32,
    /// Orbit focal length in pixels; defaults to 1.25 * size.
    #[arg(long)]
    focal: Option<f64>,
    /// Also write a depth visualization per frame.
    #[arg(long)]
    depth: bool,
    /// Also write a normal map estimated from depth per frame.
    #[arg(long)]
    normal_map: bool,
    #[arg(long, value_enum, default_value = "half")]
    kernel: KernelArg,
}

#[derive(Args)]
struct EvalArgs {
    scene: PathBuf,
    /// Dataset directory or camera JSON file.
    #[arg(long)]
    data: PathBuf,
    /// CSV report path; the table always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Score the training views instead of the held-out ones.
    #[arg(long)]
    train_split: bool,
    /// Also score the equal-opacity variant of the same scene.
    #[arg(long)]
    compare: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Random configurations for the closed-form vs quadrature suite.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scenes per kernel for the finite-difference gradient suite.
    #[arg(long, default_value_t = 5)]
    gradient_scenes: usize,
    /// Debug canary: flips the sign of the erf term in the closed form so
    /// the oracle suite must fail.
    #[arg(long)]
    canary_flip_erf: bool,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(value_enum)]
    kind: FixtureArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u32).range(16..))]
    size: u32,
    /// Surface samples written to `points.ply`.
    #[arg(long, default_value_t = 500)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Everything needed to replay a training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct RunManifest {
    tool_version: String,
    started_unix_ms: u128,
    finished_unix_ms: Option<u128>,
    dataset: PathBuf,
    init: PathBuf,
    sh_degree: usize,
    normal_init: String,
    checkpoint_every: u32,
    config: TrainConfig,
}

enum Failure {
    /// Verification or numerical failure.
    Check(String),
    Input(String),
}

impl From<HgsError> for Failure {
    fn from(e: HgsError) -> Self {
        match e {
            HgsError::NonFiniteLoss { .. }
            | HgsError::QuadratureNonConvergence { .. }
            | HgsError::MismatchedForward(_) => Failure::Check(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn input(msg: impl Into<String>) -> Failure {
    Failure::Input(msg.into())
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

fn create_dir(dir: &Path) -> Result<(), HgsError> {
    std::fs::create_dir_all(dir).map_err(|e| HgsError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), HgsError> {
    std::fs::write(path, text).map_err(|e| HgsError::io(path, e))
}

fn write_manifest(m: &RunManifest, path: &Path) -> Result<(), HgsError> {
    let text = serde_json::to_string_pretty(m).expect("manifest serializes");
    write_text(path, &(text + "\n"))
}

fn manifest_from_args(a: &TrainArgs) -> Result<RunManifest, Failure> {
    let data = a.data.clone().ok_or_else(|| input("a dataset path is required"))?;
    load_cameras(&data)?;
    let init = match &a.init {
        Some(p) => p.clone(),
        None => find_initial_model(&data)
            .ok_or_else(|| input(format!("{}: no points.ply next to the cameras; pass --init", data.display())))?,
    };
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        total_iters: a.iters,
        densify_until: a.densify_until.unwrap_or(defaults.densify_until.min(a.iters)),
        lambda_ssim: a.lambda_ssim,
        lr_normal: a.lr_normal,
        mode: a.mode.into(),
        kernel: a.kernel.into(),
        max_primitives: a.max_primitives,
        seed: a.seed,
        ..defaults
    };
    Ok(RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix_ms: 0,
        finished_unix_ms: None,
        dataset: data,
        init,
        sh_degree: a.sh_degree,
        normal_init: match a.normal_init {
            NormalInitArg::Jitter => "zero-plus-jitter".into(),
            NormalInitArg::Random => "random-unit".into(),
        },
        checkpoint_every: a.checkpoint_every,
        config,
    })
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let mut manifest = match &a.manifest {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| HgsError::io(p, e))?;
            serde_json::from_str::<RunManifest>(&text).map_err(|e| input(format!("{}: {e}", p.display())))?
        }
        None => manifest_from_args(&a)?,
    };
    manifest.config.validate()?;
    let normal_init: NormalInit = manifest.normal_init.parse()?;
    let ds = load_dataset(&manifest.dataset)?;
    if ds.train.is_empty() {
        return Err(input(format!("{}: no training views", manifest.dataset.display())));
    }
    let (scene, kind) = load_any_model(&manifest.init, manifest.sh_degree, normal_init, manifest.config.seed)?;
    if manifest.config.mode != TrainMode::FromScratch && kind == ModelKind::Points {
        eprintln!("warning: fine-tuning from a point cloud");
    }

    create_dir(&a.out)?;
    let ckpt_dir = a.out.join("checkpoints");
    if manifest.checkpoint_every > 0 {
        create_dir(&ckpt_dir)?;
    }
    manifest.started_unix_ms = now_ms();
    manifest.finished_unix_ms = None;
    let manifest_path = a.out.join("manifest.json");
    write_manifest(&manifest, &manifest_path)?;

    let csv_path = a.out.join("metrics.csv");
    let file = File::create(&csv_path).map_err(|e| HgsError::io(&csv_path, e))?;
    let mut csv = BufWriter::new(file);
    let io_err = |e| HgsError::io(&csv_path, e);
    writeln!(csv, "{}", LogRow::CSV_HEADER).map_err(io_err)?;

    let every = manifest.checkpoint_every;
    let mut trainer = Trainer::new(scene, ds.train, manifest.config.clone())?;
    trainer.run(|tr, row| {
        writeln!(csv, "{}", row.to_csv()).map_err(io_err)?;
        if every > 0 && row.iteration % every == 0 {
            save_scene(&tr.scene, &ckpt_dir.join(format!("iter_{:06}.ply", row.iteration)))?;
        }
        if a.log_every > 0 && row.iteration % a.log_every == 0 {
            eprintln!(
                "iter {:>6}  loss {:.5}  psnr {:>6.2}  primitives {}",
                row.iteration, row.loss, row.psnr, row.primitives
            );
        }
        Ok(())
    })?;
    csv.flush().map_err(io_err)?;
    let scene_path = a.out.join("scene.ply");
    save_scene(&trainer.scene, &scene_path)?;

    if !ds.test.is_empty() {
        let report = evaluate(&trainer.scene, &ds.test, manifest.config.kernel, "test")?;
        print!("{}", report.to_table());
    }
    manifest.finished_unix_ms = Some(now_ms());
    write_manifest(&manifest, &manifest_path)?;
    println!("wrote {}", scene_path.display());
    Ok(())
}

fn orbit_cameras(o: &Orbit, size: u32, focal: f64) -> Result<Vec<(String, CameraModel)>, HgsError> {
    (0..o.frames)
        .map(|i| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / o.frames as f64;
            let eye = o.center + Vector3::new(t.sin(), 0.0, -t.cos()) * o.radius;
            let cam = CameraModel::look_at(eye, o.center, Vector3::new(0.0, -1.0, 0.0), focal, size, size)?;
            Ok((format!("frame_{i:04}"), cam))
        })
        .collect()
}

fn cmd_render(a: RenderArgs) -> CmdResult {
    let scene = load_scene(&a.scene)?;
    if scene.is_empty() {
        return Err(HgsError::EmptyScene.into());
    }
    let cams = match (&a.orbit, &a.cameras) {
        (Some(o), _) => orbit_cameras(o, a.size, a.focal.unwrap_or(1.25 * a.size as f64))?,
        (None, Some(p)) => load_cameras(p)?.into_iter().map(|e| (e.name(), e.camera)).collect(),
        (None, None) => return Err(input("pass --cameras or --orbit")),
    };
    create_dir(&a.out)?;
    for (name, cam) in &cams {
        let out = render_with(&scene, cam, a.kernel.into())?;
        write_image(&out.color, &a.out.join(format!("{name}.png")))?;
        if a.depth {
            write_image(&depth_to_image(&out), &a.out.join(format!("{name}_depth.png")))?;
        }
        if a.normal_map {
            let n = render_depth_normalmap(&out);
            write_image(&normals_to_image(&n), &a.out.join(format!("{name}_normal.png")))?;
        }
    }
    println!("rendered {} frame(s) to {}", cams.len(), a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let scene = load_scene(&a.scene)?;
    let ds = load_dataset(&a.data)?;
    let (views, split) = if a.train_split { (&ds.train, "train") } else { (&ds.test, "test") };
    if views.is_empty() {
        return Err(input(format!("{}: no {split} views", a.data.display())));
    }
    let main = evaluate(&scene, views, Kernel::HalfGaussian, "half-gaussian")?;
    print!("{}", main.to_table());
    let mut csv = format!("{}\n{}", hgs_core::metrics::EvalReport::CSV_HEADER, main.to_csv());
    if a.compare {
        let collapsed = evaluate(&scene, views, Kernel::FullGaussian, "equal-opacity")?;
        println!();
        print!("{}", collapsed.to_table());
        println!(
            "\ndelta PSNR (half - equal-opacity): {:+.3} dB   delta SSIM: {:+.4}",
            main.mean_psnr() - collapsed.mean_psnr(),
            main.mean_ssim() - collapsed.mean_ssim()
        );
        csv.push_str(&collapsed.to_csv());
    }
    if let Some(p) = &a.out {
        write_text(p, &csv)?;
    }
    Ok(())
}

fn print_suite(r: &SuiteReport) {
    println!(
        "{}  {:<42} max error {:.3e}  tolerance {:.0e}  trials {}",
        if r.passed() { "PASS" } else { "FAIL" },
        r.name,
        r.max_error,
        r.tolerance,
        r.trials
    );
    if !r.passed() && !r.detail.is_empty() {
        println!("      {}", r.detail);
    }
}

fn cmd_verify(a: VerifyArgs) -> CmdResult {
    let mut reports = vec![
        closed_form_vs_quadrature(a.trials as usize, a.seed, a.canary_flip_erf)?,
        sh_orthonormality(200_000, a.seed),
    ];
    if a.gradient_scenes > 0 {
        for kernel in [Kernel::HalfGaussian, Kernel::FullGaussian] {
            let mut r = gradient_suite(a.gradient_scenes, a.seed, kernel)?;
            r.name = match kernel {
                Kernel::HalfGaussian => "gradients (half-Gaussian kernel)",
                Kernel::FullGaussian => "gradients (full-Gaussian kernel)",
            };
            reports.push(r);
        }
    }
    for r in &reports {
        print_suite(r);
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} suite(s) out of tolerance")));
    }
    Ok(())
}

fn cmd_fixture(a: FixtureArgs) -> CmdResult {
    let f = Fixture::new(a.kind.into(), a.size)?;
    f.write(&a.out, a.points, a.seed)?;
    println!("wrote {} fixture to {}", f.kind.name(), a.out.display());
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| input(format!("{THREADS_ENV}={v} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| input(e.to_string()))
}

/// Value errors from clap carry no usage line; add the subcommand's.
fn print_usage_of(sub: Option<String>) {
    let mut cmd = Cli::command();
    cmd.build();
    if let Some(sc) = sub.and_then(|s| cmd.find_subcommand_mut(&s)) {
        eprintln!("\n{}", sc.render_usage());
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            if !e.to_string().contains("Usage:") {
                print_usage_of(std::env::args().nth(1));
            }
            return ExitCode::from(2);
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Fixture(a) => cmd_fixture(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
