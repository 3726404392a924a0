//! Shared experiment drivers: the anomaly separability demonstration, the
//! train-and-evaluate pipeline, the reduction-factor sweeps and the
//! residual-ambiguity measurement on shifted-anomaly pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::kspace::{build_mask, forward_dft_real, reduction_factor, subsample, zero_fill_recon, SamplingMask};
use crate::metrics::{evaluate, mse, MetricsReport};
use crate::phantom::{generate_dataset_specs, render_phantom, shift_anomalies, PhantomSpec};
use crate::reconstruction::{reconstruct, ReconResult};
use crate::training::{make_training_pairs, train_with, TrainConfig, TrainState};
use crate::unet::{Scalar, UNetConfig, UNetWeights};

/// Skip factors of the fixed-L sweep.
pub const DEFAULT_SWEEP_RHOS: [usize; 5] = [1, 4, 5, 6, 8];
/// Low-line counts of the fixed-ρ sweep.
pub const DEFAULT_SWEEP_LOW_LINES: [usize; 5] = [0, 1, 6, 8, 12];
pub const DEFAULT_SWEEP_FIXED_LOW_LINES: usize = 12;
pub const DEFAULT_SWEEP_FIXED_RHO: usize = 4;

/// Largest number of low lines a `(n, ρ)` mask can add.
pub fn max_low_lines(n: usize, rho: usize) -> usize {
    n - n / rho
}

/// Clips `low_lines` to what the mask can hold, warning when it has to.
pub fn clip_low_lines(n: usize, rho: usize, low_lines: usize) -> usize {
    let cap = max_low_lines(n, rho);
    if low_lines > cap {
        log::warn!("rho={rho} at n={n} leaves only {cap} unmeasured lines; clipping L={low_lines} to {cap}");
        cap
    } else {
        low_lines
    }
}

/// Zero-fill reconstruction of `image` under `mask`.
pub fn zero_fill(image: &Image, mask: &SamplingMask) -> Result<Image> {
    Ok(zero_fill_recon(&subsample(&forward_dft_real(image), mask)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparabilityReport {
    pub n: usize,
    pub rho: usize,
    pub low_lines: usize,
    /// Rows the anomalies move by, `n / ρ`.
    pub shift_rows: usize,
    pub boundary_overlap: bool,
    pub truths: [Image; 2],
    pub zero_fill_uniform: [Image; 2],
    pub zero_fill_low: [Image; 2],
    /// ℓ2 distance of the zero-fill pair with uniform lines only.
    pub distance_uniform: f64,
    /// Same, after adding `low_lines` central lines.
    pub distance_low: f64,
}

/// Renders `spec` and its anomaly-shifted twin (by `n/ρ` rows) and compares
/// their zero-fill reconstructions with and without low-frequency lines.
pub fn separability(spec: &PhantomSpec, n: usize, rho: usize, low_lines: usize) -> Result<SeparabilityReport> {
    if rho < 2 || n % rho != 0 {
        return Err(Error::Parameter(format!("separability needs rho >= 2 dividing n, got rho={rho}, n={n}")));
    }
    let low_lines = clip_low_lines(n, rho, low_lines);
    let shifted = shift_anomalies(spec, 1.0 / rho as f64);
    let truths = [render_phantom(spec, n)?, render_phantom(&shifted.spec, n)?];
    let uniform = build_mask(n, rho, 0)?;
    let low = build_mask(n, rho, low_lines)?;
    let zu = [zero_fill(&truths[0], &uniform)?, zero_fill(&truths[1], &uniform)?];
    let zl = [zero_fill(&truths[0], &low)?, zero_fill(&truths[1], &low)?];
    let distance_uniform = zu[0].l2_distance(&zu[1])?;
    let distance_low = zl[0].l2_distance(&zl[1])?;
    Ok(SeparabilityReport {
        n,
        rho,
        low_lines,
        shift_rows: n / rho,
        boundary_overlap: shifted.boundary_overlap,
        truths,
        zero_fill_uniform: zu,
        zero_fill_low: zl,
        distance_uniform,
        distance_low,
    })
}

/// Where the training and test phantoms come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub train_seed: u64,
    pub test_seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n: 64,
            train_count: 200,
            test_count: 50,
            train_seed: 7,
            test_seed: 8,
        }
    }
}

/// Rendered training and test images plus the test specs (kept for the
/// shifted-anomaly pairs).
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<Image>,
    pub test: Vec<Image>,
    pub test_specs: Vec<PhantomSpec>,
}

impl Corpus {
    pub fn generate(config: &CorpusConfig) -> Result<Self> {
        let render = |specs: &[PhantomSpec]| -> Result<Vec<Image>> {
            specs.iter().map(|s| render_phantom(s, config.n)).collect()
        };
        let train = render(&generate_dataset_specs(config.train_count, config.train_seed))?;
        let test_specs = generate_dataset_specs(config.test_count, config.test_seed);
        Ok(Corpus {
            train,
            test: render(&test_specs)?,
            test_specs,
        })
    }
}

/// Outcome of training under one mask and evaluating on the test images.
#[derive(Debug, Clone)]
pub struct CellResult<F> {
    pub mask: SamplingMask,
    pub state: TrainState<F>,
    pub results: Vec<ReconResult>,
    pub report: MetricsReport,
}

impl<F> CellResult<F> {
    pub fn reduction_factor(&self) -> f64 {
        reduction_factor(&self.mask)
    }
}

/// Reconstructs every image from its `mask`-subsampled k-space.
pub fn reconstruct_all<F: Scalar>(images: &[Image], mask: &SamplingMask, weights: &UNetWeights<F>) -> Result<Vec<ReconResult>> {
    images
        .iter()
        .map(|y| reconstruct(&subsample(&forward_dft_real(y), mask)?, weights))
        .collect()
}

/// Trains on `train` under `mask` and evaluates every stage on `test`.
pub fn train_and_evaluate<F: Scalar>(
    train: &[Image],
    test: &[Image],
    mask: &SamplingMask,
    train_config: &TrainConfig,
    unet_config: UNetConfig,
    on_epoch: impl FnMut(&TrainState<F>) -> Result<()>,
) -> Result<CellResult<F>> {
    let pairs = make_training_pairs(train, mask)?;
    let state = train_with(&pairs, train_config, unet_config, on_epoch)?;
    let results = reconstruct_all(test, mask, &state.weights)?;
    let report = evaluate(&results, test)?;
    Ok(CellResult {
        mask: mask.clone(),
        state,
        results,
        report,
    })
}

/// One `(ρ, L)` point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepCell {
    pub rho: usize,
    pub low_lines: usize,
}

/// The fixed-L row over `rhos` followed by the fixed-ρ row over
/// `low_lines`, without repeats.
pub fn sweep_grid(fixed_low_lines: usize, rhos: &[usize], fixed_rho: usize, low_lines: &[usize]) -> Vec<SweepCell> {
    let mut cells: Vec<SweepCell> = Vec::new();
    let row_a = rhos.iter().map(|&rho| SweepCell { rho, low_lines: fixed_low_lines });
    let row_b = low_lines.iter().map(|&l| SweepCell { rho: fixed_rho, low_lines: l });
    for c in row_a.chain(row_b) {
        if !cells.contains(&c) {
            cells.push(c);
        }
    }
    cells
}

pub fn default_sweep_grid() -> Vec<SweepCell> {
    sweep_grid(
        DEFAULT_SWEEP_FIXED_LOW_LINES,
        &DEFAULT_SWEEP_RHOS,
        DEFAULT_SWEEP_FIXED_RHO,
        &DEFAULT_SWEEP_LOW_LINES,
    )
}

/// Masks for each runnable cell: cells whose ρ does not divide `n` are
/// dropped with a warning and L is clipped where needed.
pub fn plan_sweep(n: usize, cells: &[SweepCell]) -> Result<Vec<(SweepCell, SamplingMask)>> {
    let mut plan = Vec::with_capacity(cells.len());
    for &cell in cells {
        if cell.rho == 0 || n % cell.rho != 0 {
            log::warn!("skipping rho={} (does not divide n={n})", cell.rho);
            continue;
        }
        let l = clip_low_lines(n, cell.rho, cell.low_lines);
        plan.push((cell, build_mask(n, cell.rho, l)?));
    }
    Ok(plan)
}

/// Residual-ambiguity measurement on pairs `(y, y with anomalies moved by
/// n/ρ rows)`: how much of the true pair difference a reconstruction fails
/// to reproduce, `mean((r₁ − r₂) − (y₁ − y₂))²`, for the aliased and the
/// corrected stage. A ratio near 1 means the method cannot tell the two
/// anomaly positions apart any better than zero-filling can.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityReport {
    pub pairs: usize,
    pub aliased_mse: f64,
    pub corrected_mse: f64,
}

impl AmbiguityReport {
    pub fn ratio(&self) -> f64 {
        self.corrected_mse / self.aliased_mse
    }
}

/// Builds the shifted-anomaly pair set from the specs that have anomalies
/// and measures the residual ambiguity of `weights` under `mask`.
pub fn ambiguity<F: Scalar>(specs: &[PhantomSpec], mask: &SamplingMask, weights: &UNetWeights<F>) -> Result<AmbiguityReport> {
    let n = mask.n;
    let (mut aliased, mut corrected, mut pairs) = (0.0, 0.0, 0usize);
    for spec in specs.iter().filter(|s| !s.anomalies.is_empty()) {
        let twin = shift_anomalies(spec, 1.0 / mask.rho as f64).spec;
        let ys = [render_phantom(spec, n)?, render_phantom(&twin, n)?];
        let rs = reconstruct_all(&ys, mask, weights)?;
        let truth = ys[0].difference(&ys[1])?;
        aliased += mse(&rs[0].aliased.difference(&rs[1].aliased)?, &truth)?;
        corrected += mse(&rs[0].final_image.difference(&rs[1].final_image)?, &truth)?;
        pairs += 1;
    }
    if pairs == 0 {
        return Err(Error::Parameter("no test phantom carries an anomaly".into()));
    }
    Ok(AmbiguityReport {
        pairs,
        aliased_mse: aliased / pairs as f64,
        corrected_mse: corrected / pairs as f64,
    })
}
