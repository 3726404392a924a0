//! Command-line front end shared by the `unfold-mri` binary and tests.
//!
//! Every flag may also come from a JSON object passed with `--config`,
//! keyed by the flag name (`"low-lines"` or `"low_lines"`); flags given on
//! the command line win.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{
    plan_sweep, separability, sweep_grid, train_and_evaluate, Corpus, CorpusConfig, SeparabilityReport,
    DEFAULT_SWEEP_FIXED_LOW_LINES, DEFAULT_SWEEP_FIXED_RHO, DEFAULT_SWEEP_LOW_LINES, DEFAULT_SWEEP_RHOS,
};
use crate::image::Image;
use crate::io;
use crate::kspace::{build_mask, forward_dft_real, reduction_factor, subsample, SamplingMask, UndersampledKSpace};
use crate::metrics::{evaluate, mse, MetricsReport, Stage};
use crate::phantom::{generate_dataset, random_phantom_spec, shepp_logan_with_anomalies};
use crate::reconstruction::{reconstruct, ReconResult};
use crate::training::{make_training_pairs, train_with, TrainConfig, TrainState};
use crate::unet::{UNetConfig, UNetWeights};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Size(_) | Error::Parameter(_) => EXIT_USAGE,
        Error::Shape(_) | Error::Io { .. } | Error::Data { .. } => EXIT_DATA,
        Error::NonFinite(_) => EXIT_NUMERIC,
    }
}

#[derive(Debug, Parser)]
#[command(name = "unfold-mri", version, about = "Undersampled MRI: phantoms, folding, U-net unfolding and k-space correction")]
pub struct Cli {
    /// JSON file supplying defaults for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub options: Options,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Render a phantom corpus to a directory.
    Dataset,
    /// Train the U-net on a dataset under a (ρ, L) mask.
    Train,
    /// Reconstruct one image or k-space file with a checkpoint.
    Reconstruct,
    /// Zero-fill distance of an anomaly pair with and without low lines.
    Separability,
    /// Train and evaluate over a grid of (ρ, L) cells.
    Sweep,
    /// MSE/SSIM of every stage over a dataset.
    Eval,
}

macro_rules! options {
    ($( $(#[$doc:meta])* $field:ident : $ty:ty $(, alias = $alias:literal)? ; )*) => {
        #[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
        pub struct Options {
            $(
                $(#[$doc])*
                #[arg(long, global = true)]
                $(#[serde(alias = $alias)])?
                pub $field: Option<$ty>,
            )*
        }

        impl Options {
            /// Fills every unset field from `fallback`.
            pub fn or(self, fallback: Options) -> Options {
                Options { $( $field: self.$field.or(fallback.$field), )* }
            }
        }
    };
}

options! {
    /// Image size (pixels per side).
    n: usize;
    /// Uniform phase-encoding skip factor.
    rho: usize;
    /// Extra low-frequency lines.
    low_lines: usize, alias = "low_lines";
    /// Seed: corpus seed for `dataset`/`sweep`, init and shuffle seed for `train`, phantom seed for `separability`.
    seed: u64;
    epochs: usize;
    batch_size: usize, alias = "batch_size";
    /// RMSProp learning rate.
    lr: f64;
    /// RMSProp moving-average decay.
    decay: f64;
    /// RMSProp stabilizer.
    epsilon: f64;
    /// Output directory.
    out: PathBuf;
    /// Checkpoint directory.
    checkpoint: PathBuf;
    /// Dataset directory.
    dataset: PathBuf;
    /// Number of images for `dataset`.
    count: usize;
    /// Raw little-endian f32 image to reconstruct.
    input: PathBuf;
    /// K-space sidecar JSON to reconstruct.
    kspace: PathBuf;
    /// Raw ground-truth image for difference output.
    truth: PathBuf;
    /// U-net pooling levels.
    depth: usize;
    /// U-net first-level channels.
    base_channels: usize, alias = "base_channels";
    /// Save a checkpoint every K epochs.
    checkpoint_every: usize, alias = "checkpoint_every";
    /// Training images for `sweep`.
    train_count: usize, alias = "train_count";
    /// Test images for `sweep`.
    test_count: usize, alias = "test_count";
    /// Test-corpus seed for `sweep`.
    test_seed: u64, alias = "test_seed";
    /// Skip factors of the fixed-L sweep row (comma separated).
    #[arg(value_delimiter = ',')]
    rhos: Vec<usize>;
    /// Low-line counts of the fixed-ρ sweep row (comma separated).
    #[arg(value_delimiter = ',')]
    sweep_low_lines: Vec<usize>, alias = "sweep_low_lines";
}

impl Options {
    fn require_path(&self, value: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
        value
            .clone()
            .ok_or_else(|| Error::Parameter(format!("--{flag} is required")))
    }

    fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            rms_decay: self.decay.unwrap_or(d.rms_decay),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            seed: self.seed.unwrap_or(d.seed),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
        }
    }

    fn unet_config(&self, n: usize) -> Result<UNetConfig> {
        let d = UNetConfig::default();
        UNetConfig::new(n, self.depth.unwrap_or(d.depth), self.base_channels.unwrap_or(d.base_channels))
    }
}

/// Reads a `--config` file.
pub fn load_config(path: &Path) -> Result<Options> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Parameter(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parameter(format!("bad config {}: {e}", path.display())))
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Errors are reported on stderr.
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
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let options = match &cli.config {
        Some(path) => cli.options.clone().or(load_config(path)?),
        None => cli.options.clone(),
    };
    match cli.command {
        Command::Dataset => cmd_dataset(&options).map(|_| ()),
        Command::Train => cmd_train(&options).map(|_| ()),
        Command::Reconstruct => cmd_reconstruct(&options).map(|_| ()),
        Command::Separability => cmd_separability(&options).map(|_| ()),
        Command::Sweep => cmd_sweep(&options).map(|_| ()),
        Command::Eval => cmd_eval(&options).map(|_| ()),
    }
}

pub const DEFAULT_DATASET_COUNT: usize = 200;
pub const DEFAULT_DATASET_SEED: u64 = 7;
pub const DEFAULT_RHO: usize = 4;
pub const DEFAULT_LOW_LINES: usize = 4;

pub fn cmd_dataset(o: &Options) -> Result<io::DatasetManifest> {
    let out = o.require_path(&o.out, "out")?;
    let n = o.n.unwrap_or(UNetConfig::default().input_size);
    let count = o.count.unwrap_or(DEFAULT_DATASET_COUNT);
    let seed = o.seed.unwrap_or(DEFAULT_DATASET_SEED);
    let images = generate_dataset(count, n, seed)?;
    let manifest = io::save_dataset(&out, &images, n, seed)?;
    println!("wrote {count} phantoms of {n}x{n} (seed {seed}) to {}", out.display());
    Ok(manifest)
}

/// Written next to the weights by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub train: TrainConfig,
    pub dataset: PathBuf,
    pub final_loss: Option<f64>,
}

pub fn cmd_train(o: &Options) -> Result<TrainState<f32>> {
    let dataset = o.require_path(&o.dataset, "dataset")?;
    let out = o
        .out
        .clone()
        .or_else(|| o.checkpoint.clone())
        .ok_or_else(|| Error::Parameter("--out is required".into()))?;
    let (manifest, images) = io::load_dataset(&dataset)?;
    if let Some(n) = o.n.filter(|&n| n != manifest.n) {
        return Err(Error::Parameter(format!("--n {n} but the dataset holds {}-pixel images", manifest.n)));
    }
    let mask = build_mask(
        manifest.n,
        o.rho.unwrap_or(DEFAULT_RHO),
        o.low_lines.unwrap_or(DEFAULT_LOW_LINES),
    )?;
    let config = o.train_config();
    let unet = o.unet_config(manifest.n)?;
    let pairs = make_training_pairs(&images, &mask)?;
    let every = o.checkpoint_every.filter(|&k| k > 0);
    let seed = config.seed;

    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    io::save_mask(&out.join("mask.json"), &mask)?;
    let state = train_with::<f32>(&pairs, &config, unet, |s| {
        let loss = s.loss_history.last().copied().unwrap_or(f64::NAN);
        log::info!("epoch {}/{} loss {loss:.6}", s.epoch, config.epochs);
        if let Some(k) = every {
            if s.epoch % k == 0 {
                io::save_weights(&out.join("checkpoints").join(format!("epoch_{:05}", s.epoch)), &s.weights, seed)?;
            }
        }
        Ok(())
    })?;
    io::save_weights(&out, &state.weights, seed)?;
    io::write_loss_csv(&out.join("loss.csv"), &state.loss_history)?;
    io::write_json(
        &out.join("train.json"),
        &TrainRecord {
            train: config,
            dataset,
            final_loss: state.loss_history.last().copied(),
        },
    )?;
    match (state.loss_history.first(), state.loss_history.last()) {
        (Some(first), Some(last)) => println!(
            "trained {} epochs on {} pairs (R = {:.3}): loss {first:.6} -> {last:.6}",
            state.epoch,
            pairs.len(),
            reduction_factor(&mask)
        ),
        _ => println!("saved initial weights (0 epochs)"),
    }
    Ok(state)
}

fn load_checkpoint(o: &Options) -> Result<(PathBuf, UNetWeights<f32>)> {
    let dir = o.require_path(&o.checkpoint, "checkpoint")?;
    let (_, weights) = io::load_weights::<f32>(&dir)?;
    Ok((dir, weights))
}

/// The mask from `--rho`/`--low-lines` if either is given, else the one
/// saved with the checkpoint.
fn resolve_mask(o: &Options, checkpoint: &Path, n: usize) -> Result<SamplingMask> {
    let saved = checkpoint.join("mask.json");
    if o.rho.is_none() && o.low_lines.is_none() && saved.exists() {
        let mask = io::load_mask(&saved)?;
        if mask.n != n {
            return Err(Error::data(&saved, format!("mask is for n={}, network for n={n}", mask.n)));
        }
        return Ok(mask);
    }
    build_mask(n, o.rho.unwrap_or(DEFAULT_RHO), o.low_lines.unwrap_or(DEFAULT_LOW_LINES))
}

pub fn cmd_reconstruct(o: &Options) -> Result<ReconResult> {
    let out = o.require_path(&o.out, "out")?;
    let (dir, weights) = load_checkpoint(o)?;
    let n = weights.config.input_size;
    let (x, implicit_truth): (UndersampledKSpace, Option<Image>) = match (&o.input, &o.kspace) {
        (Some(_), Some(_)) => return Err(Error::Parameter("give either --input or --kspace, not both".into())),
        (None, None) => return Err(Error::Parameter("--input or --kspace is required".into())),
        (Some(path), None) => {
            let y = io::read_raw_image(path, o.n.unwrap_or(n))?;
            let mask = resolve_mask(o, &dir, y.size())?;
            (subsample(&forward_dft_real(&y), &mask)?, Some(y))
        }
        (None, Some(path)) => (io::load_undersampled(path)?, None),
    };
    if x.size() != n {
        return Err(Error::Shape(format!("checkpoint expects {n}-pixel images, input has {}", x.size())));
    }
    let truth = match &o.truth {
        Some(path) => Some(io::read_raw_image(path, n)?),
        None => implicit_truth,
    };
    let result = reconstruct(&x, &weights)?;
    io::write_recon(&out, &result, truth.as_ref())?;
    if let Some(t) = &truth {
        for stage in Stage::ALL {
            println!("{:<10} mse {:.6}", stage.name(), mse(stage.image(&result), t)?);
        }
    }
    println!("wrote stage images to {}", out.display());
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilitySummary {
    pub n: usize,
    pub rho: usize,
    pub low_lines: usize,
    pub shift_rows: usize,
    pub boundary_overlap: bool,
    pub distance_uniform: f64,
    pub distance_low: f64,
}

pub const DEFAULT_SEPARABILITY_RHO: usize = 2;
pub const DEFAULT_SEPARABILITY_LOW_LINES: usize = 12;

pub fn cmd_separability(o: &Options) -> Result<SeparabilityReport> {
    let n = o.n.unwrap_or(UNetConfig::default().input_size);
    let rho = o.rho.unwrap_or(DEFAULT_SEPARABILITY_RHO);
    let l = o.low_lines.unwrap_or(DEFAULT_SEPARABILITY_LOW_LINES);
    let spec = match o.seed {
        Some(seed) => random_phantom_spec(seed),
        None => shepp_logan_with_anomalies(),
    };
    if spec.anomalies.is_empty() {
        log::warn!("the phantom has no anomalies; both images of the pair are identical");
    }
    let r = separability(&spec, n, rho, l)?;
    if r.boundary_overlap {
        log::warn!("a shifted anomaly straddles a base ellipse edge");
    }
    println!("shift {} rows, rho {rho}", r.shift_rows);
    println!("L = 0 : zero-fill distance {:.3e}", r.distance_uniform);
    println!("L = {:<2}: zero-fill distance {:.3e}", r.low_lines, r.distance_low);
    if let Some(out) = &o.out {
        let ab = ["a", "b"];
        for i in 0..2 {
            io::write_raw_image(&out.join(format!("truth_{}.f32", ab[i])), &r.truths[i])?;
            io::write_pgm(&out.join(format!("truth_{}.pgm", ab[i])), &r.truths[i])?;
            for (tag, imgs) in [("L0", &r.zero_fill_uniform), (&*format!("L{}", r.low_lines), &r.zero_fill_low)] {
                io::write_raw_image(&out.join(format!("zero_fill_{tag}_{}.f32", ab[i])), &imgs[i])?;
                io::write_pgm(&out.join(format!("zero_fill_{tag}_{}.pgm", ab[i])), &imgs[i])?;
            }
        }
        io::write_json(
            &out.join("separability.json"),
            &SeparabilitySummary {
                n,
                rho,
                low_lines: r.low_lines,
                shift_rows: r.shift_rows,
                boundary_overlap: r.boundary_overlap,
                distance_uniform: r.distance_uniform,
                distance_low: r.distance_low,
            },
        )?;
    }
    Ok(r)
}

/// One line of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rho: usize,
    pub requested_low_lines: usize,
    pub low_lines: usize,
    pub lines: usize,
    pub reduction_factor: f64,
    pub final_loss: Option<f64>,
    pub mse_aliased: Option<f64>,
    pub mse_unet: Option<f64>,
    pub mse_corrected: Option<f64>,
    pub ssim_aliased: Option<f64>,
    pub ssim_unet: Option<f64>,
    pub ssim_corrected: Option<f64>,
}

pub fn cmd_sweep(o: &Options) -> Result<Vec<SweepRow>> {
    let out = o.require_path(&o.out, "out")?;
    let d = CorpusConfig::default();
    let corpus_config = CorpusConfig {
        n: o.n.unwrap_or(d.n),
        train_count: o.train_count.unwrap_or(d.train_count),
        test_count: o.test_count.unwrap_or(d.test_count),
        train_seed: o.seed.unwrap_or(d.train_seed),
        test_seed: o.test_seed.unwrap_or(d.test_seed),
    };
    let cells = sweep_grid(
        o.low_lines.unwrap_or(DEFAULT_SWEEP_FIXED_LOW_LINES),
        o.rhos.as_deref().unwrap_or(&DEFAULT_SWEEP_RHOS),
        o.rho.unwrap_or(DEFAULT_SWEEP_FIXED_RHO),
        o.sweep_low_lines.as_deref().unwrap_or(&DEFAULT_SWEEP_LOW_LINES),
    );
    let plan = plan_sweep(corpus_config.n, &cells)?;
    let corpus = Corpus::generate(&corpus_config)?;
    let train_config = o.train_config();
    let unet = o.unet_config(corpus_config.n)?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let mut rows = Vec::with_capacity(plan.len());
    for (cell, mask) in plan {
        let cell_dir = out.join(format!("rho{}_L{}", mask.rho, mask.low_lines));
        log::info!("cell rho={} L={} ({} lines)", mask.rho, mask.low_lines, mask.line_count());
        let result = train_and_evaluate::<f32>(&corpus.train, &corpus.test, &mask, &train_config, unet, |s| {
            log::debug!("rho={} L={} epoch {}", mask.rho, mask.low_lines, s.epoch);
            Ok(())
        })?;
        io::save_mask(&cell_dir.join("mask.json"), &mask)?;
        io::save_weights(&cell_dir, &result.state.weights, train_config.seed)?;
        io::write_loss_csv(&cell_dir.join("loss.csv"), &result.state.loss_history)?;
        io::write_metrics(&cell_dir.join("metrics.csv"), &cell_dir.join("metrics.json"), &result.report)?;
        if let (Some(r), Some(t)) = (result.results.first(), corpus.test.first()) {
            io::write_recon(&cell_dir.join("sample"), r, Some(t))?;
        }
        let rep = &result.report;
        let row = SweepRow {
            rho: mask.rho,
            requested_low_lines: cell.low_lines,
            low_lines: mask.low_lines,
            lines: mask.line_count(),
            reduction_factor: reduction_factor(&mask),
            final_loss: result.state.loss_history.last().copied(),
            mse_aliased: rep.mean_mse(Stage::Aliased),
            mse_unet: rep.mean_mse(Stage::Unet),
            mse_corrected: rep.mean_mse(Stage::Corrected),
            ssim_aliased: rep.mean_ssim(Stage::Aliased),
            ssim_unet: rep.mean_ssim(Stage::Unet),
            ssim_corrected: rep.mean_ssim(Stage::Corrected),
        };
        println!(
            "rho {:>2} L {:>2}  R {:>6.3}  ssim aliased {} unet {} corrected {}",
            row.rho,
            row.low_lines,
            row.reduction_factor,
            fmt_opt(row.ssim_aliased),
            fmt_opt(row.ssim_unet),
            fmt_opt(row.ssim_corrected)
        );
        rows.push(row);
    }
    write_sweep_csv(&out.join("sweep.csv"), &rows)?;
    io::write_json(&out.join("sweep.json"), &rows)?;
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::data(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::data(path, e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn cmd_eval(o: &Options) -> Result<MetricsReport> {
    let dataset = o.require_path(&o.dataset, "dataset")?;
    let (dir, weights) = load_checkpoint(o)?;
    let (manifest, images) = io::load_dataset(&dataset)?;
    if manifest.n != weights.config.input_size {
        return Err(Error::Shape(format!(
            "checkpoint expects {}-pixel images, dataset has {}",
            weights.config.input_size, manifest.n
        )));
    }
    let mask = resolve_mask(o, &dir, manifest.n)?;
    let results = images
        .iter()
        .map(|y| reconstruct(&subsample(&forward_dft_real(y), &mask)?, &weights))
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(&results, &images)?;
    println!("{:<10} {:>22} {:>22}", "stage", "mse (mean ± std)", "ssim (mean ± std)");
    for s in &report.aggregates {
        let f = |m: Option<f64>, sd: Option<f64>| format!("{} ± {}", fmt_opt(m), fmt_opt(sd));
        println!(
            "{:<10} {:>22} {:>22}",
            s.stage.name(),
            f(s.mse.mean, s.mse.std),
            f(s.ssim.mean, s.ssim.std)
        );
    }
    if let Some(out) = &o.out {
        io::write_metrics(&out.join("metrics.csv"), &out.join("metrics.json"), &report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("unfold-mri").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_parse_anywhere() {
        let cli = parse(&["--n", "32", "train", "--rho", "8", "--low-lines", "3", "--lr", "0.01"]);
        assert_eq!(cli.command, Command::Train);
        assert_eq!(cli.options.n, Some(32));
        assert_eq!(cli.options.rho, Some(8));
        assert_eq!(cli.options.low_lines, Some(3));
        assert_eq!(cli.options.lr, Some(0.01));
    }

    #[test]
    fn list_flags() {
        let cli = parse(&["sweep", "--rhos", "2,4", "--sweep-low-lines", "0,12"]);
        assert_eq!(cli.options.rhos, Some(vec![2, 4]));
        assert_eq!(cli.options.sweep_low_lines, Some(vec![0, 12]));
    }

    #[test]
    fn flags_override_config() {
        let file: Options = serde_json::from_str(r#"{"n": 16, "rho": 2, "low_lines": 5, "batch-size": 4}"#).unwrap();
        let cli = parse(&["train", "--rho", "8"]);
        let merged = cli.options.or(file);
        assert_eq!(merged.n, Some(16));
        assert_eq!(merged.rho, Some(8));
        assert_eq!(merged.low_lines, Some(5));
        assert_eq!(merged.batch_size, Some(4));
    }

    #[test]
    fn unknown_config_keys_rejected() {
        assert!(serde_json::from_str::<Options>(r#"{"nn": 3}"#).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["unfold-mri", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["unfold-mri", "train", "--epochs", "many"]), EXIT_USAGE);
        assert_eq!(run(["unfold-mri", "train"]), EXIT_USAGE);
        assert_eq!(run(["unfold-mri", "--help"]), EXIT_OK);
        assert_eq!(exit_code(&Error::NonFinite("x".into())), EXIT_NUMERIC);
        assert_eq!(exit_code(&Error::data("p", "bad")), EXIT_DATA);
    }
}
