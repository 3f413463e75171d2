use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use lidarf::data::formats::{write_depth, write_png};
use lidarf::data::{load_manifest, parse_pose, save_dataset, split_every4, Dataset, SceneConfig};
use lidarf::lidar::EncoderKind;
use lidarf::nn::Checkpoint;
use lidarf::supervision::{CurriculumState, SightMode, CSV_HEADER};
use lidarf::train::{accumulated_depth_maps, Ablation, PreparedData, Trainer, TrainingConfig};

#[derive(Parser)]
#[command(name = "lidarf", version, about = "Lidar-fused neural radiance fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with analytic ground truth.
    Synth(SynthArgs),
    /// Accumulate Lidar sweeps and rasterize per-view depth maps.
    Depthmap(DepthmapArgs),
    /// Render augmented views from colorized Lidar at perturbed poses.
    Augment(AugmentArgs),
    /// Train a field and write its checkpoint, config and loss log.
    Train(TrainArgs),
    /// Render images and depths for a list of poses.
    Render(RenderArgs),
    /// PSNR / SSIM / depth error on held-out views.
    Eval(EvalArgs),
    /// Run the built-in oracle, gradient and schedule checks.
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Street,
    Occluder,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Split {
    /// Hold out every fourth frame (2, 6, 10, ...).
    Every4,
    /// Use every frame.
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Encoder {
    None,
    Mlp,
    Sparse,
}

#[derive(Clone, Copy, ValueEnum)]
enum LosMode {
    Cdf,
    Midpoint,
}

#[derive(Clone, Copy, ValueEnum)]
enum Row {
    Baseline,
    DepthW1,
    DepthW10,
    Hpr,
    Robust,
    LidarEncoding,
    Augmentation,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "street")]
    preset: Preset,
    /// Scene description (JSON mirroring the scene config); overrides --preset.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DepthmapArgs {
    /// Scene manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    window: usize,
    #[arg(long)]
    hpr: bool,
    #[arg(long, default_value_t = lidarf::synthesis::hpr::DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long, value_enum, default_value = "all")]
    split: Split,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 160)]
    count: usize,
    /// Std of the camera-center perturbation (m).
    #[arg(long, default_value_t = lidarf::synthesis::augment::DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    window: usize,
    #[arg(long, value_enum, default_value = "every4")]
    split: Split,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON mirroring the training config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from one of the ablation rows.
    #[arg(long, value_enum)]
    ablation: Option<Row>,
    #[arg(long, value_enum)]
    encoder: Option<Encoder>,
    #[arg(long)]
    no_depth_sup: bool,
    #[arg(long)]
    no_aug: bool,
    #[arg(long, value_enum)]
    los_mode: Option<LosMode>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    rays: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "every4")]
    split: Split,
}

#[derive(Args)]
struct RenderArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    /// JSON list of row-major 4x4 world-from-camera poses.
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Manifest to rebuild the field from (default: the one used for training).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "every4")]
    split: Split,
    /// Also write renders and the table as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn split(n: usize, s: Split) -> (Vec<usize>, Vec<usize>) {
    match s {
        Split::Every4 => split_every4(n),
        Split::All => ((0..n).collect(), Vec::new()),
    }
}

fn create_dir(p: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(p).with_context(|| format!("cannot create {}", p.display()))
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let mut cfg = match &a.scene {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?).map_err(lidarf::Error::from)?,
        None => match a.preset {
            Preset::Street => SceneConfig::street(),
            Preset::Occluder => SceneConfig::occluder(),
        },
    };
    cfg.frames = a.frames.unwrap_or(cfg.frames);
    cfg.width = a.width.unwrap_or(cfg.width);
    cfg.height = a.height.unwrap_or(cfg.height);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let data = cfg.generate()?;
    let path = save_dataset(&a.out, &data)?;
    fs::write(a.out.join("scene.json"), serde_json::to_string_pretty(&cfg)?)?;
    println!("wrote {} frames to {}", data.frames.len(), path.display());
    Ok(())
}

fn depthmap(a: DepthmapArgs) -> anyhow::Result<()> {
    if a.window == 0 {
        return Err(lidarf::Error::InvalidInput("--window must be at least 1".into()).into());
    }
    let data = load_manifest(&manifest_path(&a.data))?;
    let (train, _) = split(data.frames.len(), a.split);
    let maps = accumulated_depth_maps(&data, &train, a.window, a.hpr.then_some(a.gamma))?;
    create_dir(&a.out)?;
    let (mut hits, mut ghosts) = (0usize, 0usize);
    for (&i, m) in train.iter().zip(&maps) {
        let f = &data.frames[i];
        write_depth(&a.out.join(format!("{}.bin", f.name)), m)?;
        if let Some(gt) = &f.gt_depth {
            for (d, g) in m.depth.iter().zip(&gt.depth) {
                if *d > 0.0 && *g > 0.0 {
                    hits += 1;
                    ghosts += usize::from((d - g).abs() > 1.0);
                }
            }
        }
    }
    println!("wrote {} depth maps to {}", maps.len(), a.out.display());
    if hits > 0 {
        println!("pixels with depth: {hits}, off the reference by more than 1 m: {ghosts} ({:.2}%)", 100.0 * ghosts as f64 / hits as f64);
    }
    Ok(())
}

fn augment(a: AugmentArgs) -> anyhow::Result<()> {
    let data = load_manifest(&manifest_path(&a.data))?;
    let (train, _) = split(data.frames.len(), a.split);
    let mut cfg = TrainingConfig::default();
    Ablation::Augmentation.apply(&mut cfg);
    cfg.augmentation.count = a.count;
    cfg.augmentation.sigma = a.sigma;
    cfg.depth.window = a.window;
    cfg.validate()?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(a.seed);
    let prepared = PreparedData::build(&data, &train, &cfg, &mut rng)?;
    create_dir(&a.out)?;
    let mut poses = Vec::new();
    for (k, v) in prepared.augmented.iter().enumerate() {
        write_png(&a.out.join(format!("aug_{k:04}.png")), &v.rgb)?;
        write_depth(&a.out.join(format!("aug_{k:04}_depth.bin")), &v.depth)?;
        let mut rec = serde_json::to_value(v.pose_record())?;
        rec["image"] = json!(format!("aug_{k:04}.png"));
        rec["valid_pixels"] = json!(v.valid_pixels());
        poses.push(rec);
    }
    fs::write(a.out.join("poses.json"), serde_json::to_string_pretty(&poses)?)?;
    println!("wrote {} augmented views (sigma {} m) to {}", poses.len(), a.sigma, a.out.display());
    Ok(())
}

fn training_config(a: &TrainArgs) -> anyhow::Result<TrainingConfig> {
    let mut c: TrainingConfig = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?).map_err(lidarf::Error::from)?,
        None => TrainingConfig::default(),
    };
    if let Some(row) = a.ablation {
        let row = match row {
            Row::Baseline => Ablation::Baseline,
            Row::DepthW1 => Ablation::DepthWindow1,
            Row::DepthW10 => Ablation::DepthWindow10,
            Row::Hpr => Ablation::Hpr,
            Row::Robust => Ablation::Robust,
            Row::LidarEncoding => Ablation::LidarEncoding,
            Row::Augmentation => Ablation::Augmentation,
        };
        row.apply(&mut c);
    }
    if let Some(e) = a.encoder {
        c.field.encoder.kind = match e {
            Encoder::None => EncoderKind::None,
            Encoder::Mlp => EncoderKind::Mlp,
            Encoder::Sparse => EncoderKind::SparseConv,
        };
    }
    if a.no_depth_sup {
        c.loss.depth = 0.0;
    }
    if a.no_aug {
        c.loss.aug = 0.0;
        c.augmentation.count = 0;
    }
    if let Some(m) = a.los_mode {
        c.loss.sight_mode = match m {
            LosMode::Cdf => SightMode::Cdf,
            LosMode::Midpoint => SightMode::Midpoint,
        };
    }
    c.iterations = a.iterations.unwrap_or(c.iterations);
    c.rays_per_batch = a.rays.unwrap_or(c.rays_per_batch);
    c.seed = a.seed.unwrap_or(c.seed);
    c.validate()?;
    Ok(c)
}

const RUN_FILE: &str = "run.json";
const CONFIG_FILE: &str = "config.json";
const CHECKPOINT_FILE: &str = "checkpoint.ldrf";
const LOG_FILE: &str = "log.csv";

/// `--data` takes the manifest itself or the directory holding it.
fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("manifest.json")
    } else {
        p.to_path_buf()
    }
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = training_config(&a)?;
    let data = load_manifest(&manifest_path(&a.data))?;
    let (train, test) = split(data.frames.len(), a.split);
    create_dir(&a.out)?;
    fs::write(a.out.join(CONFIG_FILE), serde_json::to_string_pretty(&cfg)?)?;
    let manifest = fs::canonicalize(manifest_path(&a.data)).unwrap_or(manifest_path(&a.data));
    fs::write(a.out.join(RUN_FILE), serde_json::to_string_pretty(&json!({ "manifest": manifest, "train": train, "test": test }))?)?;
    let mut trainer = Trainer::new(cfg.clone(), &data, &train)?;
    let mut log = fs::File::create(a.out.join(LOG_FILE))?;
    writeln!(log, "{CSV_HEADER}")?;
    let t0 = Instant::now();
    trainer.run(|t, r| {
        let state = CurriculumState {
            eps_t: r.eps_t,
            eps_o: r.eps_o,
            iteration: r.iteration,
        };
        writeln!(log, "{}", r.breakdown.csv_row(r.iteration, &state)).map_err(|e| lidarf::Error::Runtime(e.to_string()))?;
        let it = r.iteration + 1;
        if cfg.log_every > 0 && (it % cfg.log_every == 0 || it == cfg.iterations) {
            log::info!("iteration {it}/{}: total {:.5} rgb {:.5} lr {:.2e} ({:.0} s)", cfg.iterations, r.breakdown.total, r.breakdown.rgb, r.lr, t0.elapsed().as_secs_f64());
        }
        if cfg.eval_every > 0 && it % cfg.eval_every == 0 && !test.is_empty() {
            let e = t.evaluate(&data, &test)?;
            log::info!("iteration {it}: test PSNR {:.3} SSIM {:.4}", e.mean_psnr, e.mean_ssim);
        }
        Ok(())
    })?;
    trainer.checkpoint()?.save(&a.out.join(CHECKPOINT_FILE))?;
    println!("trained {} iterations in {:.1} s; run written to {}", cfg.iterations, t0.elapsed().as_secs_f64(), a.out.display());
    Ok(())
}

struct Run {
    trainer: Trainer,
    data: Dataset,
    test: Vec<usize>,
}

fn open_run(dir: &Path, data: Option<&Path>) -> anyhow::Result<Run> {
    let read = |name: &str| -> anyhow::Result<String> {
        let p = dir.join(name);
        if !p.exists() {
            return Err(lidarf::Error::MissingFile {
                what: format!("run {name}"),
                path: p,
            }
            .into());
        }
        Ok(fs::read_to_string(&p)?)
    };
    let cfg: TrainingConfig = serde_json::from_str(&read(CONFIG_FILE)?).map_err(lidarf::Error::from)?;
    let run: serde_json::Value = serde_json::from_str(&read(RUN_FILE)?).map_err(lidarf::Error::from)?;
    let manifest = match data {
        Some(p) => p.to_path_buf(),
        None => PathBuf::from(run["manifest"].as_str().ok_or_else(|| anyhow!("{RUN_FILE} has no manifest"))?),
    };
    let indices = |key: &str| -> Vec<usize> { run[key].as_array().map(|a| a.iter().filter_map(|v| v.as_u64().map(|v| v as usize)).collect()).unwrap_or_default() };
    let dataset = load_manifest(&manifest_path(&manifest))?;
    let mut trainer = Trainer::new(cfg, &dataset, &indices("train"))?;
    trainer.restore(&Checkpoint::load(&dir.join(CHECKPOINT_FILE))?)?;
    Ok(Run {
        trainer,
        data: dataset,
        test: indices("test"),
    })
}

fn render(a: RenderArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&a.poses).with_context(|| format!("cannot read {}", a.poses.display()))?;
    let raw: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(lidarf::Error::from)?;
    let poses = raw.iter().enumerate().map(|(k, m)| Ok(parse_pose(m, &format!("pose {k}"))?.inverse())).collect::<anyhow::Result<Vec<_>>>()?;
    let run = open_run(&a.run, a.data.as_deref())?;
    create_dir(&a.out)?;
    for (k, w2c) in poses.iter().enumerate() {
        let r = run.trainer.render(w2c)?;
        write_png(&a.out.join(format!("render_{k:04}.png")), &r.image)?;
        write_depth(&a.out.join(format!("render_{k:04}_depth.bin")), &r.depth_map()?)?;
    }
    println!("rendered {} views to {}", poses.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let run = open_run(&a.run, a.data.as_deref())?;
    let views = match a.split {
        Split::Every4 => split_every4(run.data.frames.len()).1,
        Split::All => (0..run.data.frames.len()).collect(),
    };
    if views.is_empty() {
        bail!(lidarf::Error::InvalidInput("no views to evaluate".into()));
    }
    if a.split == Split::Every4 && views != run.test {
        log::warn!("the every-4th test views differ from the run's held-out views");
    }
    let rep = run.trainer.evaluate(&run.data, &views)?;
    println!("{:>8} {:>10} {:>8} {:>12}", "frame", "PSNR", "SSIM", "depth MAE");
    let mae = |m: Option<f64>| m.map_or("-".to_string(), |v| format!("{v:.4}"));
    for v in &rep.views {
        println!("{:>8} {:>10.3} {:>8.4} {:>12}", v.frame, v.psnr, v.ssim, mae(v.depth_mae));
    }
    println!("{:>8} {:>10.3} {:>8.4} {:>12}", "mean", rep.mean_psnr, rep.mean_ssim, mae(rep.mean_depth_mae));
    println!("{} test views", rep.views.len());
    if let Some(out) = &a.out {
        create_dir(out)?;
        for (v, r) in rep.views.iter().zip(&rep.renders) {
            write_png(&out.join(format!("eval_{:04}.png", v.frame)), &r.image)?;
            write_depth(&out.join(format!("eval_{:04}_depth.bin", v.frame)), &r.depth_map()?)?;
        }
        let table = json!({
            "views": rep.views,
            "mean_psnr": rep.mean_psnr,
            "mean_ssim": rep.mean_ssim,
            "mean_depth_mae": rep.mean_depth_mae,
        });
        fs::write(out.join("eval.json"), serde_json::to_string_pretty(&table)?)?;
    }
    Ok(())
}

fn selftest(a: SelftestArgs) -> anyhow::Result<()> {
    let results = lidarf::selftest::run_all(a.seed);
    let mut failed = 0;
    for r in &results {
        println!("{} {}/{} ({:.2} s): {}", if r.passed { "PASS" } else { "FAIL" }, r.suite, r.name, r.seconds, r.detail);
        failed += usize::from(!r.passed);
    }
    println!("{} checks, {failed} failed", results.len());
    if failed > 0 {
        bail!("{failed} self-checks failed");
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<lidarf::Error>() {
        Some(le) if le.is_validation() => 1,
        _ if e.downcast_ref::<serde_json::Error>().is_some() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Depthmap(a) => depthmap(a),
        Command::Augment(a) => augment(a),
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Eval(a) => eval(a),
        Command::Selftest(a) => selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
