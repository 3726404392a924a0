//! Image-quality metrics and the per-stage evaluation report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::reconstruction::ReconResult;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_DATA_RANGE: f64 = 1.0;

/// Mean squared pixel difference.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_size(b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64)
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filtering over the valid region only.
fn filter_valid(data: &[f64], n: usize, g: &[f64]) -> Vec<f64> {
    let m = n - g.len() + 1;
    let mut rows = vec![0.0; n * m];
    for r in 0..n {
        for c in 0..m {
            rows[r * m + c] = g.iter().enumerate().map(|(k, w)| w * data[r * n + c + k]).sum();
        }
    }
    let mut out = vec![0.0; m * m];
    for r in 0..m {
        for c in 0..m {
            out[r * m + c] = g.iter().enumerate().map(|(k, w)| w * rows[(r + k) * m + c]).sum();
        }
    }
    out
}

/// Per-window SSIM over every valid 11×11 Gaussian window.
pub fn ssim_map(a: &Image, b: &Image) -> Result<Vec<f64>> {
    a.check_same_size(b)?;
    let n = a.size();
    if n < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "image of {n} pixels is smaller than the {SSIM_WINDOW}-pixel SSIM window"
        )));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * SSIM_DATA_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_DATA_RANGE).powi(2);
    let x = a.data();
    let y = b.data();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let mu_x = filter_valid(x, n, &g);
    let mu_y = filter_valid(y, n, &g);
    let e_xx = filter_valid(&xx, n, &g);
    let e_yy = filter_valid(&yy, n, &g);
    let e_xy = filter_valid(&xy, n, &g);
    Ok((0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let sxx = e_xx[i] - mx * mx;
            let syy = e_yy[i] - my * my;
            let sxy = e_xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        })
        .collect())
}

/// Mean structural similarity (11×11 Gaussian window, σ = 1.5,
/// K₁ = 0.01, K₂ = 0.03, data range 1).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a == b {
        a.check_same_size(b)?;
        if a.size() < SSIM_WINDOW {
            return Err(Error::Shape(format!(
                "image of {} pixels is smaller than the SSIM window",
                a.size()
            )));
        }
        return Ok(1.0);
    }
    let map = ssim_map(a, b)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Aliased,
    Unet,
    Corrected,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Aliased, Stage::Unet, Stage::Corrected];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Aliased => "aliased",
            Stage::Unet => "unet",
            Stage::Corrected => "corrected",
        }
    }

    pub fn image(self, r: &ReconResult) -> &Image {
        match self {
            Stage::Aliased => &r.aliased,
            Stage::Unet => &r.unet_output,
            Stage::Corrected => &r.final_image,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub image_id: usize,
    pub stage: Stage,
    pub mse: f64,
    pub ssim: f64,
}

/// Mean and sample standard deviation; `None` when undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        let mean = (count > 0).then(|| values.iter().sum::<f64>() / count as f64);
        let std = mean.filter(|_| count > 1).map(|m| {
            (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (count - 1) as f64).sqrt()
        });
        Summary { mean, std, count }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub mse: Summary,
    pub ssim: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
    pub aggregates: Vec<StageSummary>,
}

impl MetricsReport {
    pub fn stage(&self, stage: Stage) -> &StageSummary {
        self.aggregates
            .iter()
            .find(|s| s.stage == stage)
            .expect("every stage summarized")
    }

    pub fn mean_mse(&self, stage: Stage) -> Option<f64> {
        self.stage(stage).mse.mean
    }

    pub fn mean_ssim(&self, stage: Stage) -> Option<f64> {
        self.stage(stage).ssim.mean
    }
}

/// MSE and SSIM of every stage against its ground truth.
pub fn evaluate(results: &[ReconResult], truths: &[Image]) -> Result<MetricsReport> {
    if results.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} reconstructions vs {} ground truths",
            results.len(),
            truths.len()
        )));
    }
    let mut rows = Vec::with_capacity(3 * results.len());
    for (id, (r, t)) in results.iter().zip(truths).enumerate() {
        for stage in Stage::ALL {
            let img = stage.image(r);
            rows.push(MetricRow {
                image_id: id,
                stage,
                mse: mse(img, t)?,
                ssim: ssim(img, t)?,
            });
        }
    }
    let aggregates = Stage::ALL
        .iter()
        .map(|&stage| {
            let (m, s): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.stage == stage)
                .map(|r| (r.mse, r.ssim))
                .unzip();
            StageSummary {
                stage,
                mse: Summary::of(&m),
                ssim: Summary::of(&s),
            }
        })
        .collect();
    Ok(MetricsReport { rows, aggregates })
}
