use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use remic::data::{import_png, load_dataset, save_dataset, Dataset, SynthConfig};
use remic::eval::report::KV_FILE;
use remic::eval::{
    format_table, run_protocol, AverageImputer, Completer, MetricsReport, ModelCompleter, ModelSegmenter,
    NearestNeighborImputer, Protocol, Segmenter, ZeroImputer,
};
use remic::trainer::{load_checkpoint, load_model, LossLog};
use remic::{Image, Remic, RunConfig, SegMode, StylePolicy, Trainer, VisibilityMask};

const LOSS_LOG: &str = "loss.tsv";
const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Parser)]
#[command(name = "remic", version, about = "Multi-domain image completion and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-domain dataset.
    MakeSynth(MakeSynth),
    /// Convert a directory of grayscale PNGs into a dataset.
    Import(Import),
    /// Train a model; writes checkpoints, the loss log and the resolved config.
    Train(Train),
    /// Fill in the missing domains of one sample and write the images.
    Complete(Complete),
    /// Score a checkpoint or a baseline under an evaluation protocol.
    Evaluate(Evaluate),
    /// Merge report.kv files into one table.
    Report(Report),
}

#[derive(Args)]
struct MakeSynth {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    domains: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 64)]
    train: usize,
    #[arg(long, default_value_t = 16)]
    test: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Import {
    /// Directory with `train/<id>/domain_<i>.png` and `test/<id>/...`.
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    classes: usize,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from a checkpoint written with the same configuration.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct Complete {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Sample id within the split.
    #[arg(long)]
    sample: String,
    /// Visibility flags, e.g. `1,0,1`.
    #[arg(long)]
    visible: String,
    #[arg(long)]
    out: PathBuf,
    /// Constant style value for every generated domain.
    #[arg(long, default_value_t = 0.5, conflicts_with = "style_seed")]
    style: f64,
    /// Draw styles from the prior with this seed instead.
    #[arg(long)]
    style_seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Zero,
    Average,
    Nn,
}

#[derive(Args)]
struct Evaluate {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, required_unless_present = "baseline", conflicts_with = "baseline")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// `single-missing:I`, `random-k:K[:SEED]` or `random-k:K:all`.
    #[arg(long)]
    protocol: String,
    /// Checkpoint whose segmentation head scores the completed images.
    #[arg(long)]
    segmenter: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Report {
    /// report.kv files, or directories containing one.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn ensure_empty_dir(dir: &Path) -> Result<()> {
    if dir.exists() && fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?.next().is_some() {
        bail!("output directory {} is not empty", dir.display());
    }
    Ok(())
}

fn make_synth(a: MakeSynth) -> Result<()> {
    ensure_empty_dir(&a.out)?;
    let cfg = SynthConfig::new(a.domains, a.size, a.train, a.test, a.classes, a.seed);
    let ds = Dataset::synthetic(&cfg)?;
    save_dataset(&a.out, &ds)?;
    println!("wrote {} train and {} test samples to {}", ds.train.len(), ds.test.len(), a.out.display());
    Ok(())
}

fn import(a: Import) -> Result<()> {
    ensure_empty_dir(&a.out)?;
    let ds = import_png(&a.src, a.classes)?;
    save_dataset(&a.out, &ds)?;
    println!("imported {} train and {} test samples into {}", ds.train.len(), ds.test.len(), a.out.display());
    Ok(())
}

fn train(a: Train) -> Result<()> {
    let run = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let ds = load_dataset(&a.data)?;
    let info = &ds.info;
    let model_cfg = run.model_config(info.num_domains, info.height, info.width, info.num_classes)?;
    let train_cfg = run.train_config()?;
    if model_cfg.seg_mode != SegMode::Off && !info.has_masks {
        bail!("seg_mode {:?} needs a dataset with segmentation masks", model_cfg.seg_mode);
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join(RESOLVED_CONFIG), run.to_toml()).context("writing the resolved config")?;

    let mut trainer = match &a.resume {
        Some(ck) => load_checkpoint(ck, &model_cfg, train_cfg)?,
        None => Trainer::new(Remic::new(model_cfg)?, train_cfg)?,
    };
    eprintln!(
        "training {} parameters for {} iterations from iteration {}",
        trainer.model.num_parameters(),
        trainer.config.iterations,
        trainer.iteration
    );
    let mut log = LossLog::create(&a.out.join(LOSS_LOG), info.num_domains)?;
    let every = (trainer.config.iterations / 20).max(1);
    trainer.run(&ds.train, Some(&mut log), Some(&a.out), |r| {
        if r.iteration % every == 0 {
            eprintln!("iteration {:>7}  total {:.4}  rec {:.4}", r.iteration, r.total, r.mean_rec());
        }
    })?;
    println!("final checkpoint {}", a.out.join("final.bin").display());
    Ok(())
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_png(path: &Path, im: &Image) -> Result<()> {
    let px: Vec<u8> = im.pixels.iter().map(|&v| to_u8(v)).collect();
    image::GrayImage::from_raw(im.width as u32, im.height as u32, px)
        .context("image buffer size")?
        .save(path)
        .with_context(|| format!("writing {}", path.display()))
}

/// Rows of equally sized images tiled left to right, top to bottom.
fn tile(rows: &[&[Image]]) -> Image {
    let (h, w) = (rows[0][0].height, rows[0][0].width);
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut out = Image::zeros(h * rows.len(), w * cols);
    for (r, row) in rows.iter().enumerate() {
        for (c, im) in row.iter().enumerate() {
            for y in 0..h {
                let dst = (r * h + y) * out.width + c * w;
                out.pixels[dst..dst + w].copy_from_slice(&im.pixels[y * w..(y + 1) * w]);
            }
        }
    }
    out
}

fn complete(a: Complete) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    let sample = ds
        .split(&a.split)?
        .iter()
        .find(|s| s.id == a.sample)
        .with_context(|| format!("no sample `{}` in split `{}`", a.sample, a.split))?;
    let vis = VisibilityMask::parse(&a.visible)?;
    let masked = sample.with_visibility(vis)?;
    let policy = a.style_seed.map_or(StylePolicy::Fixed(a.style), StylePolicy::Sample);
    let completer = ModelCompleter { model: &model, policy, label: "ReMIC".into() };
    let completed = completer.complete(&masked)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (i, im) in completed.iter().enumerate() {
        write_png(&a.out.join(format!("domain_{i}.png")), im)?;
    }
    // Rows: network input, completion, ground truth.
    let inputs = masked.zero_filled();
    write_png(&a.out.join("grid.png"), &tile(&[&inputs, &completed, &sample.images]))?;
    let missing: Vec<String> = masked.visibility.missing().map(|i| i.to_string()).collect();
    println!("completed domains [{}] of {} into {}", missing.join(", "), sample.id, a.out.display());
    Ok(())
}

fn evaluate(a: Evaluate) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let protocol: Protocol = a.protocol.parse()?;
    let model = a.checkpoint.as_deref().map(load_model).transpose()?;
    let seg_model = match (&a.segmenter, &model) {
        (Some(p), _) => Some(load_model(p)?),
        (None, Some(m)) if m.config().seg_mode != SegMode::Off => Some(m.clone()),
        _ => None,
    };
    if seg_model.as_ref().is_some_and(|m| m.config().seg_mode == SegMode::Off) {
        bail!("segmenter checkpoint has no segmentation head");
    }
    let completer: Box<dyn Completer + '_> = match (&model, a.baseline) {
        (Some(m), _) => Box::new(ModelCompleter::new(m)),
        (None, Some(Baseline::Zero)) => Box::new(ZeroImputer),
        (None, Some(Baseline::Average)) => Box::new(AverageImputer),
        (None, Some(Baseline::Nn)) => Box::new(NearestNeighborImputer { train: &ds.train }),
        (None, None) => bail!("give --checkpoint or --baseline"),
    };
    let segmenter = seg_model.as_ref().map(|m| ModelSegmenter { model: m });
    let segmenter = if ds.info.has_masks { segmenter.as_ref().map(|s| s as &dyn Segmenter) } else { None };
    let mut report = run_protocol(completer.as_ref(), &ds.test, protocol, segmenter)?;
    report.config = match &model {
        Some(m) => m.config().echo(),
        None => format!("baseline={}", report.method.to_lowercase()),
    };
    report.write(&a.out)?;
    print!("{}", report.to_text());
    Ok(())
}

fn report(a: Report) -> Result<()> {
    let reports = a
        .reports
        .iter()
        .map(|p| {
            let p = if p.is_dir() { p.join(KV_FILE) } else { p.clone() };
            Ok(MetricsReport::read_kv(&p)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let table = format_table(&reports)?;
    match &a.out {
        Some(p) => fs::write(p, &table).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{table}"),
    }
    Ok(())
}

/// The cause chain on one line, skipping causes a message already spells out.
fn one_line(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out.replace('\n', " ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MakeSynth(a) => make_synth(a),
        Command::Import(a) => import(a),
        Command::Train(a) => train(a),
        Command::Complete(a) => complete(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}
