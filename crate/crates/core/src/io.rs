//! On-disk formats: raw little-endian `f32` images, 8-bit PGM previews,
//! dataset manifests, sampling masks, k-space blobs, weight checkpoints,
//! training configs, loss histories and metric reports.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::kspace::{KSpaceGrid, SamplingMask, UndersampledKSpace};
use crate::metrics::{MetricsReport, Stage};
use crate::reconstruction::ReconResult;
use crate::unet::{Kernel, Scalar, UNetConfig, UNetWeights};

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::data(path, e.to_string()))?;
    text.push('\n');
    write(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read(path)?).map_err(|e| Error::data(path, e.to_string()))
}

pub fn encode_f32(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values
        .into_iter()
        .flat_map(|v| (v as f32).to_le_bytes())
        .collect()
}

pub fn decode_f32(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<f32>> {
    if bytes.len() != expected * 4 {
        return Err(Error::data(
            path,
            format!("expected {} bytes, found {}", expected * 4, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Row-major little-endian `f32` pixels.
pub fn write_raw_image(path: &Path, image: &Image) -> Result<()> {
    write(path, &encode_f32(image.data().iter().copied()))
}

pub fn read_raw_image(path: &Path, n: usize) -> Result<Image> {
    let bytes = read(path)?;
    let values = decode_f32(path, &bytes, n * n)?;
    Image::from_vec(n, values.into_iter().map(f64::from).collect())
}

/// Binary 8-bit PGM; values are clamped to `[0, 1]` before scaling.
pub fn write_pgm(path: &Path, image: &Image) -> Result<()> {
    let n = image.size();
    let mut bytes = format!("P5\n{n} {n}\n255\n").into_bytes();
    bytes.extend(
        image
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    write(path, &bytes)
}

/// PGM of a signed difference image, mapped so that 0 is mid-grey and
/// `±scale` saturates.
pub fn write_difference_pgm(path: &Path, diff: &Image, scale: f64) -> Result<()> {
    let mapped = Image::from_vec(
        diff.size(),
        diff.data().iter().map(|d| 0.5 + 0.5 * d / scale).collect(),
    )?;
    write_pgm(path, &mapped)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub count: usize,
    pub n: usize,
    pub seed: u64,
    pub files: Vec<String>,
}

/// Writes `manifest.json`, one raw image per entry and a PGM preview of each.
pub fn save_dataset(dir: &Path, images: &[Image], n: usize, seed: u64) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        if img.size() != n {
            return Err(Error::Shape(format!("image {i} has size {}, expected {n}", img.size())));
        }
        let name = format!("image_{i:05}.f32");
        write_raw_image(&dir.join(&name), img)?;
        write_pgm(&dir.join(format!("image_{i:05}.pgm")), img)?;
        files.push(name);
    }
    let manifest = DatasetManifest {
        count: images.len(),
        n,
        seed,
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Image>)> {
    let path = dir.join("manifest.json");
    let manifest: DatasetManifest = read_json(&path)?;
    if manifest.files.len() != manifest.count {
        return Err(Error::data(
            &path,
            format!("count {} but {} files listed", manifest.count, manifest.files.len()),
        ));
    }
    let images = manifest
        .files
        .iter()
        .map(|f| read_raw_image(&dir.join(f), manifest.n))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, images))
}

/// Mask as `{n, rho, low_lines, lines}` with centered line indices.
pub fn save_mask(path: &Path, mask: &SamplingMask) -> Result<()> {
    write_json(path, mask)
}

pub fn load_mask(path: &Path) -> Result<SamplingMask> {
    let mask: SamplingMask = read_json(path)?;
    mask.validate().map_err(|e| Error::data(path, e.to_string()))?;
    Ok(mask)
}

/// Sidecar describing a complex `f32` blob.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KSpaceSidecar {
    /// `[rows, cols]` of the blob.
    pub shape: [usize; 2],
    /// Blob file name, relative to the sidecar.
    pub data: String,
    /// Mask file, relative to the sidecar; absent for full grids, whose
    /// rows are in FFT storage order.
    pub mask: Option<String>,
}

fn encode_complex(values: &[Complex64]) -> Vec<u8> {
    encode_f32(values.iter().flat_map(|z| [z.re, z.im]))
}

fn decode_complex(path: &Path, count: usize) -> Result<Vec<Complex64>> {
    let bytes = read(path)?;
    let raw = decode_f32(path, &bytes, 2 * count)?;
    Ok(raw
        .chunks_exact(2)
        .map(|p| Complex64::new(f64::from(p[0]), f64::from(p[1])))
        .collect())
}

fn sibling(sidecar: &Path, name: &str) -> PathBuf {
    sidecar.parent().unwrap_or(Path::new("")).join(name)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "kspace".to_string())
}

/// Writes `<stem>.c32`, `<stem>.mask.json` and the sidecar at `sidecar`.
pub fn save_undersampled(sidecar: &Path, x: &UndersampledKSpace) -> Result<()> {
    let base = stem(sidecar);
    let data = format!("{base}.c32");
    let mask = format!("{base}.mask.json");
    write(&sibling(sidecar, &data), &encode_complex(x.rows()))?;
    save_mask(&sibling(sidecar, &mask), x.mask())?;
    write_json(
        sidecar,
        &KSpaceSidecar {
            shape: [x.mask().lines.len(), x.size()],
            data,
            mask: Some(mask),
        },
    )
}

pub fn load_undersampled(sidecar: &Path) -> Result<UndersampledKSpace> {
    let meta: KSpaceSidecar = read_json(sidecar)?;
    let mask_name = meta
        .mask
        .as_deref()
        .ok_or_else(|| Error::data(sidecar, "undersampled data needs a mask reference"))?;
    let mask = load_mask(&sibling(sidecar, mask_name))?;
    if meta.shape != [mask.lines.len(), mask.n] {
        return Err(Error::data(sidecar, "shape does not match the mask"));
    }
    let rows = decode_complex(&sibling(sidecar, &meta.data), meta.shape[0] * meta.shape[1])?;
    UndersampledKSpace::new(mask, rows)
}

pub fn save_grid(sidecar: &Path, grid: &KSpaceGrid) -> Result<()> {
    let data = format!("{}.c32", stem(sidecar));
    write(&sibling(sidecar, &data), &encode_complex(grid.data()))?;
    write_json(
        sidecar,
        &KSpaceSidecar {
            shape: [grid.size(), grid.size()],
            data,
            mask: None,
        },
    )
}

pub fn load_grid(sidecar: &Path) -> Result<KSpaceGrid> {
    let meta: KSpaceSidecar = read_json(sidecar)?;
    if meta.shape[0] != meta.shape[1] {
        return Err(Error::data(sidecar, "full grids must be square"));
    }
    let n = meta.shape[0];
    KSpaceGrid::from_vec(n, decode_complex(&sibling(sidecar, &meta.data), n * n)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    /// `[out, in, kh, kw]`.
    pub shape: [usize; 4],
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub config: UNetConfig,
    pub seed: u64,
    pub layers: Vec<LayerEntry>,
}

/// Checkpoint directory: `weights.json` plus one `f32` blob per layer.
pub fn save_weights<F: Scalar>(dir: &Path, weights: &UNetWeights<F>, seed: u64) -> Result<()> {
    weights.validate()?;
    let mut layers = Vec::with_capacity(weights.layers.len());
    for (name, kernel) in weights.layer_names().into_iter().zip(&weights.layers) {
        let file = format!("{name}.f32");
        write(&dir.join(&file), &encode_f32(kernel.data().iter().map(|v| v.as_f64())))?;
        layers.push(LayerEntry {
            name,
            shape: kernel.shape(),
            file,
        });
    }
    write_json(
        &dir.join("weights.json"),
        &WeightsManifest {
            config: weights.config,
            seed,
            layers,
        },
    )
}

pub fn load_weights<F: Scalar>(dir: &Path) -> Result<(WeightsManifest, UNetWeights<F>)> {
    let path = dir.join("weights.json");
    let manifest: WeightsManifest = read_json(&path)?;
    manifest.config.validate().map_err(|e| Error::data(&path, e.to_string()))?;
    let layers = manifest
        .layers
        .iter()
        .map(|entry| {
            let [o, i, kh, kw] = entry.shape;
            if kh != kw {
                return Err(Error::data(&path, format!("layer {} is not square", entry.name)));
            }
            let file = dir.join(&entry.file);
            let bytes = read(&file)?;
            let values = decode_f32(&file, &bytes, o * i * kh * kw)?;
            Kernel::from_vec(o, i, kh, values.into_iter().map(|v| F::of_f64(f64::from(v))).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = UNetWeights {
        config: manifest.config,
        layers,
    };
    weights.validate().map_err(|e| Error::data(&path, e.to_string()))?;
    if weights.layer_names() != manifest.layers.iter().map(|l| l.name.clone()).collect::<Vec<_>>() {
        return Err(Error::data(&path, "layer names do not match the configuration"));
    }
    Ok((manifest, weights))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::data(path, e.to_string())
}

/// `epoch,mean_loss` rows, epochs counted from 1.
pub fn write_loss_csv(path: &Path, history: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "mean_loss"]).map_err(|e| csv_error(path, e))?;
    for (i, loss) in history.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{loss:e}")])
            .map_err(|e| csv_error(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::data(path, e.to_string()))?;
    write(path, &bytes)
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<f64>> {
    let bytes = read(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            rec.get(1)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::data(path, "bad mean_loss field"))
        })
        .collect()
}

/// Per-image rows as CSV and stage aggregates as JSON.
pub fn write_metrics(csv_path: &Path, json_path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["image_id", "stage", "mse", "ssim"])
        .map_err(|e| csv_error(csv_path, e))?;
    for row in &report.rows {
        w.write_record([
            row.image_id.to_string(),
            row.stage.name().to_string(),
            format!("{:e}", row.mse),
            format!("{:e}", row.ssim),
        ])
        .map_err(|e| csv_error(csv_path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::data(csv_path, e.to_string()))?;
    write(csv_path, &bytes)?;
    write_json(json_path, &report.aggregates)
}

/// Signed differences saturate at this magnitude in PGM previews.
pub const DIFFERENCE_SCALE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageFiles {
    pub raw: String,
    pub pgm: String,
}

/// Index written next to the outputs of one reconstruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconIndex {
    pub n: usize,
    pub stages: Vec<(String, ImageFiles)>,
    /// Sidecar of the corrected k-space grid.
    pub corrected_kspace: String,
    /// Centered log-magnitude preview of the corrected k-space.
    pub corrected_kspace_preview: String,
    pub truth: Option<ImageFiles>,
    /// `stage - truth`, present when a truth image was given.
    pub differences: Vec<(String, ImageFiles)>,
}

fn write_image_pair(dir: &Path, name: &str, image: &Image, difference: bool) -> Result<ImageFiles> {
    let files = ImageFiles {
        raw: format!("{name}.f32"),
        pgm: format!("{name}.pgm"),
    };
    write_raw_image(&dir.join(&files.raw), image)?;
    if difference {
        write_difference_pgm(&dir.join(&files.pgm), image, DIFFERENCE_SCALE)?;
    } else {
        write_pgm(&dir.join(&files.pgm), image)?;
    }
    Ok(files)
}

/// Log-magnitude of a grid with the zero frequency moved to the middle,
/// scaled to `[0, 1]`.
pub fn kspace_preview(grid: &KSpaceGrid) -> Image {
    let n = grid.size();
    let half = (n / 2) as i64;
    let logs: Vec<f64> = (0..n * n)
        .map(|i| {
            let (r, c) = (i / n, i % n);
            let b = r as i64 - half;
            let a = c as i64 - half;
            grid.at(b, a).norm().ln_1p()
        })
        .collect();
    let max = logs.iter().copied().fold(0.0, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    Image::from_vec(n, logs.into_iter().map(|v| v * scale).collect()).expect("square")
}

/// Writes the stage images (raw and PGM), the corrected k-space and, given
/// a truth image, the signed stage differences, plus `index.json`.
pub fn write_recon(dir: &Path, result: &ReconResult, truth: Option<&Image>) -> Result<ReconIndex> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut stages = Vec::new();
    let mut differences = Vec::new();
    for stage in Stage::ALL {
        let img = stage.image(result);
        stages.push((stage.name().to_string(), write_image_pair(dir, stage.name(), img, false)?));
        if let Some(t) = truth {
            let name = format!("{}_minus_truth", stage.name());
            differences.push((stage.name().to_string(), write_image_pair(dir, &name, &img.difference(t)?, true)?));
        }
    }
    let truth_files = truth.map(|t| write_image_pair(dir, "truth", t, false)).transpose()?;
    save_grid(&dir.join("corrected_kspace.json"), &result.corrected_kspace)?;
    write_pgm(&dir.join("corrected_kspace.pgm"), &kspace_preview(&result.corrected_kspace))?;
    let index = ReconIndex {
        n: result.final_image.size(),
        stages,
        corrected_kspace: "corrected_kspace.json".into(),
        corrected_kspace_preview: "corrected_kspace.pgm".into(),
        truth: truth_files,
        differences,
    };
    write_json(&dir.join("index.json"), &index)?;
    Ok(index)
}
