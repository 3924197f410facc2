//! `fatigue` command line: train, eval, predict, augment-preview, summary.
//!
//! Exit codes: 0 success, 1 runtime or data failure, 2 argument error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::augment::{apply_affine, sample_transform, AugmentParams};
use crate::data::{
    load_directory, read_image, resize_bilinear, stratified_split, write_pgm, Dataset,
};
use crate::error::{Error, Result};
use crate::metrics::{classification_report, curve_export, report_csv, sig6};
use crate::model_io::{export, import, predict};
use crate::network::{build_fatigue_net, Network, INPUT_SHAPE};
use crate::rng::{purpose, Rng};
use crate::train::{evaluate, train_network, with_threads, Evaluation, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "fatigue",
    version,
    about = "Eye-closedness CNN: train, evaluate and serve frozen models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write model.fdm, curves.csv, report.txt, report.csv and config.txt.
    Train(TrainArgs),
    /// Evaluate a frozen model on the held-out split of a corpus.
    Eval(EvalArgs),
    /// Classify one image as closed or open.
    Predict(PredictArgs),
    /// Write augmented samples as PGM files for inspection.
    AugmentPreview(PreviewArgs),
    /// Print the layer table of the full-size network.
    Summary,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    /// Fraction of each class used for training.
    #[arg(long = "split", default_value_t = 0.8, value_parser = parse_fraction)]
    pub split: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads (0 = all cores). Outputs do not depend on this.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Corpus root containing closed/ and open/.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value_t = 40, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long = "batch", default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    #[arg(long = "lr", default_value_t = 1e-3, value_parser = parse_positive)]
    pub lr: f32,
    /// Train on randomly noisified images (rotation, shift, shear, zoom, flip).
    #[arg(long)]
    pub augment: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Where eval_report.txt and eval_report.csv go; defaults to the model's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Image to classify (.pgm or .png); resized to the model input.
    pub image: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PreviewArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub count: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value = "preview")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40.0, value_parser = parse_non_negative)]
    pub rotation: f64,
    #[arg(long, default_value_t = 0.2, value_parser = parse_non_negative)]
    pub width_shift: f64,
    #[arg(long, default_value_t = 0.2, value_parser = parse_non_negative)]
    pub height_shift: f64,
    #[arg(long, default_value_t = 0.2, value_parser = parse_non_negative)]
    pub shear: f64,
    #[arg(long, default_value_t = 0.2, value_parser = parse_non_negative)]
    pub zoom: f64,
    #[arg(long)]
    pub no_flip: bool,
}

fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1]"))
    }
}

fn parse_positive(s: &str) -> std::result::Result<f32, String> {
    let v: f32 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be > 0"))
    }
}

fn parse_non_negative(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be >= 0"))
    }
}

/// Parses `args` (including the program name), runs the command, and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|text| print!("{text}")),
        Command::Predict(a) => cmd_predict(&a).map(|line| println!("{line}")),
        Command::AugmentPreview(a) => cmd_augment_preview(&a).map(|_| ()),
        Command::Summary => {
            print!("{}", summary_table(&build_fatigue_net(&mut Rng::new(0, 0))));
            Ok(())
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

pub fn summary_table(net: &Network) -> String {
    let mut out = format!("{:<20}{:>16}{:>12}\n", "Layer", "Output Shape", "Param #");
    for row in net.summary() {
        let shape = row
            .output_shape
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(", ");
        let _ = writeln!(
            out,
            "{:<20}{:>16}{:>12}",
            row.layer,
            format!("({shape})"),
            row.params
        );
    }
    let _ = writeln!(out, "Total params: {}", net.param_count());
    out
}

/// Text written to report.txt and printed by `eval`.
pub fn render_report(eval: &Evaluation, samples: usize) -> String {
    format!(
        "samples: {samples}\nloss: {}\n\n{}",
        sig6(eval.loss),
        classification_report(&eval.confusion)
    )
}

fn load_resized(root: &Path, height: usize, width: usize) -> Result<Dataset> {
    let ds = load_directory(root)?;
    let [closed, open] = ds.counts();
    eprintln!(
        "loaded {} images from {} ({closed} closed, {open} open)",
        ds.len(),
        root.display()
    );
    ds.resized(width, height)
}

/// Held-out split, or the whole corpus when the split keeps everything for training.
fn split_sets(ds: &Dataset, split: &SplitArgs) -> Result<(Dataset, Dataset)> {
    let (train, test) = stratified_split(ds, split.split, split.seed)?;
    if test.is_empty() {
        Ok((train.clone(), train))
    } else {
        Ok((train, test))
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn cmd_train(args: &TrainArgs) -> Result<Evaluation> {
    let config = TrainConfig {
        epochs: args.epochs as usize,
        batch_size: args.batch as usize,
        seed: args.split.seed,
        augment: args.augment,
        augment_params: AugmentParams::noisified(),
        learning_rate: args.lr,
        split_fraction: args.split.split,
        threads: args.split.threads,
    };
    config.validate()?;
    let ds = load_resized(&args.data, INPUT_SHAPE[0], INPUT_SHAPE[1])?;
    let (train_set, test_set) = split_sets(&ds, &args.split)?;
    eprintln!("train {} / test {}", train_set.len(), test_set.len());

    let net = build_fatigue_net(&mut Rng::derive(config.seed, purpose::INIT, 0));
    let outcome = train_network(net, &train_set, &test_set, &config, |r| {
        eprintln!(
            "epoch {:>3}: train loss {:.4} acc {:.4} | test loss {:.4} acc {:.4}",
            r.epoch, r.train_loss, r.train_accuracy, r.test_loss, r.test_accuracy
        )
    })?;
    let eval = with_threads(config.threads, || evaluate(&outcome.network, &test_set))??;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    export(&outcome.network, &args.out.join("model.fdm"))?;
    curve_export(&outcome.records, &args.out.join("curves.csv"))?;
    write(
        &args.out.join("report.txt"),
        &render_report(&eval, test_set.len()),
    )?;
    write(&args.out.join("report.csv"), &report_csv(&eval.confusion))?;
    let config_text = format!(
        "data = {}\nsplit = {}\nepochs = {}\nbatch = {}\nseed = {}\nlr = {}\naugment = {}\ntrain_images = {}\ntest_images = {}\n",
        args.data.display(),
        config.split_fraction,
        config.epochs,
        config.batch_size,
        config.seed,
        config.learning_rate,
        config.augment,
        train_set.len(),
        test_set.len(),
    );
    write(&args.out.join("config.txt"), &config_text)?;
    eprintln!("wrote artifacts to {}", args.out.display());
    Ok(eval)
}

/// Returns the rendered report; also writes the text and CSV twins.
pub fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let net = import(&args.model)?;
    let shape = net.input_shape().to_vec();
    let ds = load_resized(&args.data, shape[0], shape[1])?;
    let (_, test_set) = split_sets(&ds, &args.split)?;
    let eval = with_threads(args.split.threads, || evaluate(&net, &test_set))??;
    let text = render_report(&eval, test_set.len());
    let out = match &args.out {
        Some(dir) => dir.clone(),
        None => args
            .model
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    let out = if out.as_os_str().is_empty() {
        PathBuf::from(".")
    } else {
        out
    };
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write(&out.join("eval_report.txt"), &text)?;
    write(&out.join("eval_report.csv"), &report_csv(&eval.confusion))?;
    Ok(text)
}

/// `<closed|open> <probability to 4 decimals>`.
pub fn cmd_predict(args: &PredictArgs) -> Result<String> {
    let net = import(&args.model)?;
    let image = read_image(&args.image)?;
    let shape = net.input_shape();
    let image = resize_bilinear(&image, shape[1], shape[0])?;
    let (p, label) = predict(&net, &image)?;
    Ok(format!("{} {p:.4}", label.name()))
}

/// Writes `count` warped samples and returns their paths.
pub fn cmd_augment_preview(args: &PreviewArgs) -> Result<Vec<PathBuf>> {
    let params = AugmentParams {
        rotation_range: args.rotation,
        width_shift_range: args.width_shift,
        height_shift_range: args.height_shift,
        shear_range: args.shear,
        zoom_range: args.zoom,
        horizontal_flip: !args.no_flip,
        ..AugmentParams::noisified()
    };
    params.validate()?;
    let ds = load_resized(&args.data, INPUT_SHAPE[0], INPUT_SHAPE[1])?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut pick = Rng::derive(args.seed, purpose::PREVIEW, 0);
    let mut written = Vec::with_capacity(args.count);
    for k in 0..args.count {
        let index = pick.uniform(0, ds.len() - 1);
        let item = &ds.items()[index];
        let mut rng = Rng::derive(args.seed, purpose::PREVIEW, k as u64 + 1);
        let t = sample_transform(&params, &mut rng, item.image.height(), item.image.width());
        // PGM holds 0..255, so the sample is written before the 1/255 rescale.
        let warped = apply_affine(&item.image, &t);
        let path = args
            .out
            .join(format!("preview_{k:03}_{}.pgm", item.label.name()));
        write_pgm(&warped, &path)?;
        written.push(path);
    }
    eprintln!("wrote {} samples to {}", written.len(), args.out.display());
    Ok(written)
}
