//! Command-line driver: `train`, `infer`, `eval`, `viz-attention`, `gen-data`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::load_model;
use crate::config::RunConfig;
use crate::data::{
    ingest_dataset, read_gray, read_rgb, read_trimap, unknown_mask, write_attention_png, write_gray, write_rgb, write_trimap, Background,
    BitDepth, EvalSet, Foregrounds, SampleSource,
};
use crate::error::{Error, Result};
use crate::gca::{extract_attention_map, AttentionImage, AttentionMap};
use crate::metrics::{evaluate_pair, MetricReport};
use crate::model::SIZE_MULTIPLE;
use crate::train::{evaluate, BatchSource, FixedSample, Trainer};

#[derive(Parser, Debug)]
#[command(name = "gca-matting", version, about = "Alpha matting with guided contextual attention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-key override, e.g. `train.total_steps=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Replaces `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model; writes checkpoints, `loss.csv` and `config.toml` to `--out`.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Predict an alpha matte for one image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Gray PNG with levels 0 (background), 128 (unknown), 255 (foreground).
        #[arg(long)]
        trimap: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        bits: u32,
    },
    /// Score a directory of `<name>_image.png`, `<name>_trimap.png`, `<name>_alpha.png`.
    Eval {
        #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Score precomputed `<name>_pred.png` files instead of running a model.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// CSV file with per-image rows and the mean row.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the alpha estimate and the encoder/decoder attention maps.
    VizAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        trimap: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic samples as image/trimap/alpha/fg/bg PNG quintuples.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: u64,
        #[arg(long, default_value_t = 8)]
        bits: u32,
    },
}

/// The exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Validation(_) | Error::Ingest(_) => 2,
        _ => 1,
    }
}

fn effective_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut overrides = args.set.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("train.seed={seed}"));
    }
    RunConfig::load(args.config.as_deref(), &overrides)
}

fn sample_source(cfg: &RunConfig) -> Result<SampleSource> {
    let mut src = SampleSource::synthetic(cfg.augment.clone(), cfg.train.seed);
    if let Some(root) = &cfg.data.dataset {
        let ds = ingest_dataset(root)?;
        let bgs = ds.load_backgrounds()?;
        if !bgs.is_empty() {
            src.background = Background::Images(bgs);
        }
        src.foregrounds = Foregrounds::Ingested(ds);
    }
    Ok(src)
}

fn cmd_train(cfg: &ConfigArgs, out: &Path, resume: Option<&Path>) -> Result<()> {
    let rc = effective_config(cfg)?;
    rc.echo(out)?;
    let source = sample_source(&rc)?;
    let mut trainer = match resume {
        Some(path) => {
            let mut t = Trainer::resume(path)?;
            t.cfg.total_steps = rc.train.total_steps;
            t
        }
        None => Trainer::new(rc.model.clone(), rc.train.clone())?,
    };
    let fixed;
    let src: &dyn BatchSource = match rc.data.fixed_sample {
        Some(i) => {
            fixed = FixedSample(source.sample(i)?);
            &fixed
        }
        None => &source,
    };
    log::info!("training {} steps from step {}", trainer.cfg.total_steps, trainer.step);
    trainer.run(src, Some(out), |l| {
        if l.step % 50 == 0 {
            log::info!("step {} lr {:.3e} loss {:.5}", l.step, l.lr, l.loss);
        }
    })?;
    println!("{}", out.join("final.gcam").display());
    Ok(())
}

fn cmd_infer(checkpoint: &Path, image: &Path, trimap: &Path, out: &Path, bits: u32) -> Result<()> {
    let depth = BitDepth::from_bits(bits)?;
    let img = read_rgb(image)?;
    let tri = read_trimap(trimap)?;
    let mut model = load_model(checkpoint)?;
    let alpha = model.infer_full(&img, &tri)?.alpha;
    write_gray(out, &alpha, depth)
}

fn cmd_eval(checkpoint: Option<&Path>, predictions: Option<&Path>, data: &Path, out: &Path) -> Result<()> {
    let set = EvalSet::load(data)?;
    let report = match (checkpoint, predictions) {
        (Some(ck), _) => evaluate(&load_model(ck)?, &set.items)?,
        (None, Some(dir)) => {
            let mut rows = Vec::new();
            for item in &set.items {
                let Some(gt) = &item.alpha else {
                    log::warn!("{}: no ground-truth alpha, skipped", item.name);
                    continue;
                };
                let mask = unknown_mask(&item.trimap);
                if !mask.iter().any(|&u| u) {
                    log::warn!("{}: trimap has no unknown pixels, skipped", item.name);
                    continue;
                }
                let pred = read_gray(dir.join(format!("{}_pred.png", item.name)))?;
                rows.push(evaluate_pair(&item.name, &pred, gt, &mask)?);
            }
            MetricReport { rows }
        }
        (None, None) => return Err(Error::Config("eval needs --checkpoint or --predictions".into())),
    };
    if report.rows.is_empty() {
        return Err(Error::Ingest(format!("{} has no image with ground truth and unknown pixels", data.display())));
    }
    let csv = report.to_csv()?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(out, &csv)?;
    print!("{csv}");
    Ok(())
}

/// Renders the first map of `maps` at image resolution. The map covers the
/// padded input, so it is enlarged to the padded size and then cropped.
fn render_map(maps: &[AttentionMap], h: usize, w: usize) -> Result<AttentionImage> {
    let map = maps.first().ok_or_else(|| Error::Unsupported("checkpoint has no attention blocks".into()))?;
    let (ph, pw) = (h.next_multiple_of(SIZE_MULTIPLE), w.next_multiple_of(SIZE_MULTIPLE));
    Ok(extract_attention_map(map).resize_nearest(pw, ph).crop(w, h))
}

/// Output files of `viz-attention`, relative to its output directory.
pub const VIZ_FILES: [&str; 3] = ["alpha.png", "attention_encoder.png", "attention_decoder.png"];

fn cmd_viz(checkpoint: &Path, image: &Path, trimap: &Path, out: &Path) -> Result<()> {
    let img = read_rgb(image)?;
    let tri = read_trimap(trimap)?;
    let mut model = load_model(checkpoint)?;
    let p = model.infer_full(&img, &tri)?;
    let (h, w) = (img.shape().h(), img.shape().w());
    std::fs::create_dir_all(out)?;
    write_gray(out.join(VIZ_FILES[0]), &p.alpha, BitDepth::Eight)?;
    let enc = render_map(&p.encoder_attention, h, w)?;
    let dec = render_map(&p.decoder_attention, h, w)?;
    write_attention_png(out.join(VIZ_FILES[1]), &enc)?;
    write_attention_png(out.join(VIZ_FILES[2]), &dec)?;
    Ok(())
}

fn cmd_gen_data(cfg: &ConfigArgs, out: &Path, count: u64, bits: u32) -> Result<()> {
    let depth = BitDepth::from_bits(bits)?;
    let rc = effective_config(cfg)?;
    rc.echo(out)?;
    let src = sample_source(&rc)?;
    let seed = rc.train.seed;
    for i in 0..count {
        let s = src.sample(i)?;
        let name = |kind: &str| out.join(format!("sample_{seed}_{i:05}_{kind}.png"));
        write_rgb(name("image"), &s.image, depth)?;
        write_trimap(name("trimap"), &s.trimap)?;
        write_gray(name("alpha"), &s.alpha, depth)?;
        write_rgb(name("fg"), &s.fg, depth)?;
        write_rgb(name("bg"), &s.bg, depth)?;
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train { cfg, out, resume } => cmd_train(cfg, out, resume.as_deref()),
        Command::Infer { checkpoint, image, trimap, out, bits } => cmd_infer(checkpoint, image, trimap, out, *bits),
        Command::Eval { checkpoint, predictions, data, out } => cmd_eval(checkpoint.as_deref(), predictions.as_deref(), data, out),
        Command::VizAttention { checkpoint, image, trimap, out } => cmd_viz(checkpoint, image, trimap, out),
        Command::GenData { cfg, out, count, bits } => cmd_gen_data(cfg, out, *count, *bits),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
