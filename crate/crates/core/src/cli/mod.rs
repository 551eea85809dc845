//! Command-line front end. Every subcommand takes `--seed` and `--config`;
//! failures exit with the code of their error category.

pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::formats::{encode_mask_pgm, encode_preview_pgm};
use crate::dataset::synth::{synth_dataset, write_dataset};
use crate::dataset::{load_mask, load_thermal, SyntheticFaceConfig};
use crate::error::{Error, Result};
use crate::gradsuite::{self, SuiteModule, TOLERANCE};
use crate::inference::evaluate;
use crate::segnet::UNet;
use crate::tensor::{load_checkpoint, save_checkpoint};
use crate::tiaug::{self, AppliedParams, AugConfig, AugStages};
use crate::training::{self, ablation, AblationConfig, LossMode, TrainConfig};
use crate::ThermalImage;
pub use config::{load_config, parse_config};

#[derive(Debug, Parser)]
#[command(name = "thermoseg", version, about = "Thermal facial segmentation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic thermal-face dataset with an index manifest.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        /// Overrides the subject count in the config.
        #[arg(long)]
        subjects: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Augment one image: 16-bit preview, mask, parameter record, histogram.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Rebuild from a parameter record instead of sampling.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Independent augmentations to draw; outputs get an index suffix
        /// when more than one.
        #[arg(long, default_value_t = 1)]
        copies: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 64)]
        bins: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train one loss mode; writes checkpoint, metrics CSV and report.
    Train {
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Overrides the loss mode in the config.
        #[arg(long)]
        mode: Option<LossMode>,
        /// Overrides the augmentation worker count.
        #[arg(long)]
        workers: Option<usize>,
        /// Validate the config and exit without writing anything.
        #[arg(long)]
        dry_run: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the clean and occluded validation sets.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train every configured mode on every seed and tabulate.
    Ablate {
        #[arg(long, default_value = "ablation")]
        out: PathBuf,
        /// Start from the built-in synthetic benchmark instead of the defaults.
        #[arg(long)]
        benchmark: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long)]
        module: Option<SuiteModule>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthDataConfig {
    pub face: SyntheticFaceConfig,
    pub subjects: usize,
}

impl Default for SynthDataConfig {
    fn default() -> Self {
        SynthDataConfig {
            face: SyntheticFaceConfig::default(),
            subjects: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    /// Modules to check; empty means all.
    pub modules: Vec<SuiteModule>,
    pub seed: u64,
}

/// `eval` output and the `report.json` written by `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: LossMode,
    pub best_epoch: Option<usize>,
    pub val: crate::metrics::EvalReport,
    pub occluded_val: crate::metrics::EvalReport,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes") + "\n"
}

fn synth_data(out: &Path, count: usize, subjects: Option<usize>, common: &Common) -> Result<()> {
    let mut cfg: SynthDataConfig = load_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.face.seed = s;
    }
    if let Some(s) = subjects {
        cfg.subjects = s;
    }
    cfg.face.validate().map_err(|e| prefixed("/face", e))?;
    let samples = synth_dataset(&cfg.face, count, cfg.subjects)?;
    let idx = write_dataset(out, &samples)?;
    println!("wrote {} samples from {} subjects to {}", idx.len(), idx.subjects().len(), out.display());
    Ok(())
}

fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { pointer, detail } => Error::Config {
            pointer: format!("{prefix}{pointer}"),
            detail,
        },
        other => other,
    }
}

/// `bin_lo,bin_hi,pre,post` over the joint °C range of both images.
pub fn histogram_csv(pre: &ThermalImage, post: &ThermalImage, bins: usize) -> String {
    let lo = pre.min().min(post.min());
    let hi = pre.max().max(post.max());
    let a = tiaug::histogram(pre.values(), (lo, hi), bins);
    let b = tiaug::histogram(post.values(), (lo, hi), bins);
    let width = (hi - lo) / bins as f64;
    let mut out = String::from("bin_lo,bin_hi,pre,post\n");
    for i in 0..bins {
        let edge = |k: usize| if k == bins { hi } else { lo + k as f64 * width };
        out.push_str(&format!("{},{},{},{}\n", edge(i), edge(i + 1), a[i], b[i]));
    }
    out
}

fn write_augmented(dir: &Path, suffix: &str, pre: &ThermalImage, stages: &AugStages, bins: usize) -> Result<()> {
    let s = &stages.sample;
    let (h, w) = s.image.dims();
    write(&dir.join(format!("augmented{suffix}.pgm")), encode_preview_pgm(s.image.values(), h, w))?;
    write(&dir.join(format!("mask{suffix}.pgm")), encode_mask_pgm(&s.mask))?;
    write(&dir.join(format!("params{suffix}.json")), to_json(&s.applied_params))?;
    write(&dir.join(format!("histogram{suffix}.csv")), histogram_csv(pre, &stages.noisy, bins))
}

#[allow(clippy::too_many_arguments)]
fn augment(
    input: &Path,
    mask: &Path,
    out: &Path,
    replay: Option<&Path>,
    copies: usize,
    workers: usize,
    bins: usize,
    common: &Common,
) -> Result<()> {
    if bins == 0 {
        return Err(Error::config("--bins", "must be positive"));
    }
    if copies == 0 {
        return Err(Error::config("--copies", "must be positive"));
    }
    let img = load_thermal(input)?;
    let labels = load_mask(mask)?;
    create_dir(out)?;
    if let Some(p) = replay {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let params: AppliedParams = parse_config(&text)?;
        let stages = tiaug::replay_stages(&img, &labels, &params)?;
        write_augmented(out, "", &img, &stages, bins)?;
        println!("replayed {} into {}", p.display(), out.display());
        return Ok(());
    }
    let mut cfg: AugConfig = load_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Numeric(format!("thread pool: {e}")))?;
    let stages: Vec<AugStages> = pool.install(|| {
        use rayon::prelude::*;
        (0..copies)
            .into_par_iter()
            .map(|k| {
                let params = tiaug::sample_params(&img, &cfg, &mut crate::rng::substream(cfg.seed, k as u64));
                tiaug::replay_stages(&img, &labels, &params)
            })
            .collect::<Result<_>>()
    })?;
    for (k, st) in stages.iter().enumerate() {
        let suffix = if copies == 1 { String::new() } else { format!("_{k:03}") };
        write_augmented(out, &suffix, &img, st, bins)?;
    }
    println!("wrote {copies} augmentation(s) to {}", out.display());
    Ok(())
}

fn train_config(common: &Common) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = load_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn train(out: &Path, mode: Option<LossMode>, workers: Option<usize>, dry_run: bool, common: &Common) -> Result<()> {
    let mut cfg = train_config(common)?;
    if let Some(m) = mode {
        cfg.loss_mode = m;
    }
    if let Some(w) = workers {
        cfg.aug_workers = w;
    }
    cfg.validate()?;
    if dry_run {
        println!("config ok: {} for {} epochs", cfg.loss_mode, cfg.epochs);
        return Ok(());
    }
    let data = training::load_data(&cfg.data)?;
    let outcome = training::train_with_progress(&cfg, &data, |r| {
        println!(
            "epoch {:>3}  loss {:.6}  val mIoU {:.2}  occluded mIoU {:.2}",
            r.epoch, r.train_loss, r.val.miou, r.occluded_val.miou
        );
    })?;
    create_dir(out)?;
    save_checkpoint(&out.join("checkpoint.sckp"), &outcome.checkpoint_entries())?;
    write(&out.join("metrics.csv"), outcome.metrics_csv())?;
    let report = RunReport {
        mode: cfg.loss_mode,
        best_epoch: Some(outcome.best_epoch),
        val: outcome.report(),
        occluded_val: outcome.best().occluded_val.clone(),
    };
    write(&out.join("report.json"), to_json(&report))?;
    println!(
        "best epoch {}: val mIoU {}  occluded mIoU {}",
        outcome.best_epoch, report.val.miou, report.occluded_val.miou
    );
    Ok(())
}

fn eval(checkpoint: &Path, out: Option<&Path>, common: &Common) -> Result<()> {
    let cfg = train_config(common)?;
    cfg.validate()?;
    let net = UNet::from_entries(&load_checkpoint(checkpoint)?)?;
    let data = training::load_data(&cfg.data)?;
    let clean = training::normalized(&data.val)?;
    let occluded = training::occluded_val(&data.val, &cfg.occluded_val, cfg.aug_workers)?;
    let report = RunReport {
        mode: cfg.loss_mode,
        best_epoch: None,
        val: evaluate(&net, &clean)?,
        occluded_val: evaluate(&net, &occluded)?,
    };
    println!("val mIoU {}  occluded mIoU {}", report.val.miou, report.occluded_val.miou);
    println!("pixel accuracy {}  occluded {}", report.val.pixel_accuracy, report.occluded_val.pixel_accuracy);
    let names = training::class_names(net.config().num_classes);
    for (name, (a, b)) in names
        .iter()
        .zip(report.val.per_class_iou.iter().zip(&report.occluded_val.per_class_iou))
    {
        let fmt = |v: &Option<f64>| v.map_or("-".to_owned(), |v| format!("{:.4}", v));
        println!("  {name:<12} {:>8} {:>8}", fmt(a), fmt(b));
    }
    if let Some(p) = out {
        write(p, to_json(&report))?;
    }
    Ok(())
}

fn ablate(out: &Path, benchmark: bool, common: &Common) -> Result<()> {
    let mut cfg: AblationConfig = match (&common.config, benchmark) {
        (None, true) => AblationConfig::benchmark(),
        (path, _) => load_config(path.as_deref())?,
    };
    if let Some(s) = common.seed {
        // consecutive seeds starting at the given one
        let n = cfg.seeds.len() as u64;
        cfg.seeds = (s..s + n).collect();
    }
    cfg.validate()?;
    let data = training::load_data(&cfg.train.data)?;
    let result = ablation(&cfg, &data, |mode, seed, r| {
        if r.epoch == cfg.train.epochs {
            println!(
                "{mode:<16} seed {seed:<4} final epoch: val mIoU {:.2}  occluded mIoU {:.2}",
                r.val.miou, r.occluded_val.miou
            );
        }
    })?;
    create_dir(out)?;
    write(&out.join("ablation.csv"), result.to_csv())?;
    write(&out.join("ablation.json"), to_json(&result))?;
    print!("{}", result.to_table());
    Ok(())
}

/// Exit code 4 when any op exceeds the tolerance.
fn gradcheck(module: Option<SuiteModule>, common: &Common) -> Result<()> {
    let mut cfg: GradcheckConfig = load_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let modules = match module {
        Some(m) => vec![m],
        None if cfg.modules.is_empty() => SuiteModule::ALL.to_vec(),
        None => cfg.modules.clone(),
    };
    let mut failing = Vec::new();
    for m in modules {
        for c in gradsuite::run(m, cfg.seed)? {
            println!("{:<7} {:<24} {:.3e}", c.module.name(), c.op, c.rel_err);
            if !c.passed() {
                failing.push(format!("{}::{}", c.module.name(), c.op));
            }
        }
    }
    if failing.is_empty() {
        println!("all ops below {TOLERANCE:e}");
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "relative error at or above {TOLERANCE:e} in {}",
            failing.join(", ")
        )))
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::SynthData {
            out,
            count,
            subjects,
            common,
        } => synth_data(out, *count, *subjects, common),
        Command::Augment {
            input,
            mask,
            out,
            replay,
            copies,
            workers,
            bins,
            common,
        } => augment(input, mask, out, replay.as_deref(), *copies, *workers, *bins, common),
        Command::Train {
            out,
            mode,
            workers,
            dry_run,
            common,
        } => train(out, *mode, *workers, *dry_run, common),
        Command::Eval { checkpoint, out, common } => eval(checkpoint, out.as_deref(), common),
        Command::Ablate { out, benchmark, common } => ablate(out, *benchmark, common),
        Command::Gradcheck { module, common } => gradcheck(*module, common),
    }
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error[{}]: {e}", e.category());
            e.exit_code()
        }
    }
}
