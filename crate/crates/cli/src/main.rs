mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsStr;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dehaze_core::data::{augment, list_pngs, load_png, psnr, save_png, ssim, AugmentConfig, QualityReport, SsimParams};
use dehaze_core::haze::{synthesize_dataset, SynthConfig};
use dehaze_core::trainer::{self, TrainConfig};
use dehaze_core::{Error, Result};

use manifest::{RunManifest, MANIFEST_NAME};

#[derive(Parser)]
#[command(name = "cycle-dehaze", version, about = "Unpaired single-image dehazing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Render procedural clean scenes and their hazy versions.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0.5)]
        beta_min: f64,
        #[arg(long, default_value_t = 1.5)]
        beta_max: f64,
        #[arg(long, default_value_t = 0.8)]
        airlight: f64,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Cut random crops from every image and resize them to the network size.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        factor: usize,
        #[arg(long, default_value_t = 32)]
        min_crop: usize,
        /// Largest crop side; defaults to the image size.
        #[arg(long)]
        max_crop: Option<usize>,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the two generators and discriminators on unpaired images.
    Train {
        #[arg(long)]
        hazy: Option<PathBuf>,
        #[arg(long)]
        clean: Option<PathBuf>,
        /// `key = value` file; flags take precedence over it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Any config key, as `key=value`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Dehaze every PNG in a directory with a trained checkpoint.
    Dehaze {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "on")]
        pyramid: Switch,
    },
    /// PSNR/SSIM of predictions against ground truth, paired by file name.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Shape { .. } | Error::Param(_) | Error::Contract(_) | Error::Config(_) => 2,
        Error::Io { .. } | Error::Decode { .. } | Error::Checkpoint(_) => 3,
        Error::Numerical { .. } => 4,
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn synth(out: &Path, cfg: SynthConfig) -> Result<()> {
    let mut m = RunManifest::start("synth");
    let rows = synthesize_dataset(&cfg, out)?;
    m.set_path("out", out);
    m.set("count", cfg.count);
    m.set("size", cfg.height);
    m.set("channels", cfg.channels);
    m.set("beta_min", cfg.beta_min);
    m.set("beta_max", cfg.beta_max);
    m.set("airlight", cfg.airlight);
    m.set("seed", cfg.seed);
    m.write(&out.join(MANIFEST_NAME))?;
    println!("wrote {} image pairs to {}", rows.len(), out.display());
    Ok(())
}

fn augment_dir(input: &Path, out: &Path, cfg: AugmentConfig, seed: u64) -> Result<()> {
    let mut m = RunManifest::start("augment");
    let files = list_pngs(input)?;
    create_dir(out)?;
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut table = String::from("source\tcrop\tx\ty\tw\th\n");
    let mut written = 0;
    for f in &files {
        let img = load_png(f)?;
        let crops = augment(&img, &cfg, seeds.random())?;
        let stem = f.file_stem().and_then(OsStr::to_str).unwrap_or("image");
        for (k, c) in crops.iter().enumerate() {
            let name = format!("{stem}_{k:04}.png");
            save_png(&out.join(&name), &c.image)?;
            table.push_str(&format!("{}\t{name}\t{}\t{}\t{}\t{}\n", file_name(f), c.x, c.y, c.w, c.h));
            written += 1;
        }
    }
    let tsv = out.join("crops.tsv");
    fs::write(&tsv, table).map_err(|e| Error::io(&tsv, e))?;
    m.set_path("in", input);
    m.set_path("out", out);
    m.set("factor", cfg.factor);
    m.set("min_crop", cfg.min_crop);
    if cfg.max_crop != usize::MAX {
        m.set("max_crop", cfg.max_crop);
    }
    m.set("size", cfg.out_size);
    m.set("seed", seed);
    m.write(&out.join(MANIFEST_NAME))?;
    println!("wrote {written} crops from {} images to {}", files.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    hazy: Option<PathBuf>,
    clean: Option<PathBuf>,
    config: Option<PathBuf>,
    out: &Path,
    epochs: Option<usize>,
    seed: Option<u64>,
    overrides: &[String],
    resume: Option<PathBuf>,
) -> Result<()> {
    let mut m = RunManifest::start("train");
    let mut cfg = TrainConfig::default();
    if let Some(p) = &config {
        cfg.apply_kv(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?;
    }
    for kv in overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if hazy.is_some() {
        cfg.hazy_dir = hazy;
    }
    if clean.is_some() {
        cfg.clean_dir = clean;
    }
    let summary = trainer::train(&cfg, out, resume.as_deref(), |line| eprintln!("{line}"))?;
    m.set_path("out", out);
    if let Some(p) = &resume {
        m.set_path("resume", p);
    }
    for line in cfg.to_kv().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            m.set(k, v);
        }
    }
    m.set("steps", summary.steps);
    m.write(&out.join(MANIFEST_NAME))?;
    println!("trained {} steps; checkpoint {}", summary.steps, summary.final_checkpoint.display());
    Ok(())
}

fn dehaze(ckpt: &Path, input: &Path, out: &Path, pyramid: Switch) -> Result<()> {
    let mut m = RunManifest::start("dehaze");
    let (cfg, g) = trainer::load_generator(ckpt)?;
    let files = list_pngs(input)?;
    create_dir(out)?;
    let use_pyramid = matches!(pyramid, Switch::On);
    for f in &files {
        let img = load_png(f)?;
        if img.channels() != cfg.generator.channels {
            return Err(Error::Contract(format!(
                "{} has {} channels, checkpoint expects {}",
                f.display(),
                img.channels(),
                cfg.generator.channels
            )));
        }
        let result = trainer::dehaze(&g, cfg.image_size, &img, use_pyramid)?;
        save_png(&out.join(file_name(f)), &result)?;
    }
    m.set_path("ckpt", ckpt);
    m.set_path("in", input);
    m.set_path("out", out);
    m.set("pyramid", if use_pyramid { "on" } else { "off" });
    m.set("image_size", cfg.image_size);
    m.write(&out.join(MANIFEST_NAME))?;
    println!("dehazed {} images into {}", files.len(), out.display());
    Ok(())
}

/// Pairing key for eval: the file name without a `hazy_`/`clean_` role
/// prefix, so synthesized pairs and their dehazed outputs line up.
fn pairing_key(name: &str) -> &str {
    name.strip_prefix("hazy_")
        .or_else(|| name.strip_prefix("clean_"))
        .unwrap_or(name)
}

fn eval(pred: &Path, gt: &Path, report_path: &Path) -> Result<()> {
    let mut m = RunManifest::start("eval");
    let index = |dir: &Path| -> Result<BTreeMap<String, PathBuf>> {
        let mut map = BTreeMap::new();
        for p in list_pngs(dir)? {
            let name = file_name(&p);
            if let Some(prev) = map.insert(pairing_key(&name).to_string(), p.clone()) {
                return Err(Error::Contract(format!(
                    "{} and {} share the pairing key {:?}",
                    prev.display(),
                    p.display(),
                    pairing_key(&name)
                )));
            }
        }
        Ok(map)
    };
    let (p, g) = (index(pred)?, index(gt)?);
    let (pk, gk): (BTreeSet<_>, BTreeSet<_>) = (p.keys().collect(), g.keys().collect());
    if pk != gk {
        let only_pred: Vec<_> = pk.difference(&gk).collect();
        let only_gt: Vec<_> = gk.difference(&pk).collect();
        return Err(Error::Contract(format!(
            "file sets differ; only in pred: {only_pred:?}; only in gt: {only_gt:?}"
        )));
    }
    if p.is_empty() {
        return Err(Error::Contract(format!("no PNG images in {}", pred.display())));
    }
    let params = SsimParams::default();
    let mut report = QualityReport::default();
    for (key, pred_path) in &p {
        let a = load_png(pred_path)?;
        let b = load_png(&g[key])?;
        report.push(file_name(pred_path), psnr(&a, &b, 1.0)?, ssim(&a, &b, &params)?);
    }
    if let Some(dir) = report_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    fs::write(report_path, report.to_tsv()).map_err(|e| Error::io(report_path, e))?;
    m.set_path("pred", pred);
    m.set_path("gt", gt);
    m.set_path("report", report_path);
    let mut manifest_path = report_path.as_os_str().to_owned();
    manifest_path.push(".manifest");
    m.write(Path::new(&manifest_path))?;
    println!("mean psnr {:.4} dB, mean ssim {:.4} over {} images", report.mean_psnr(), report.mean_ssim(), p.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            count,
            size,
            beta_min,
            beta_max,
            airlight,
            channels,
            seed,
        } => synth(
            &out,
            SynthConfig {
                count,
                height: size,
                width: size,
                channels,
                beta_min,
                beta_max,
                airlight,
                seed,
            },
        ),
        Command::Augment {
            input,
            out,
            factor,
            min_crop,
            max_crop,
            size,
            seed,
        } => augment_dir(
            &input,
            &out,
            AugmentConfig {
                factor,
                min_crop,
                max_crop: max_crop.unwrap_or(usize::MAX),
                out_size: size,
            },
            seed,
        ),
        Command::Train {
            hazy,
            clean,
            config,
            out,
            epochs,
            seed,
            overrides,
            resume,
        } => train(hazy, clean, config, &out, epochs, seed, &overrides, resume),
        Command::Dehaze { ckpt, input, out, pyramid } => dehaze(&ckpt, &input, &out, pyramid),
        Command::Eval { pred, gt, report } => eval(&pred, &gt, &report),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
