//! Discrete Fourier model of Cartesian MRI acquisition.
//!
//! Grids are stored in FFT order: storage row/column `k` holds the centered
//! frequency index `k` for `k <= n/2` and `k - n` otherwise, so the centered
//! range is `1 - n/2 ..= n/2`. Rows are phase-encoding lines; sampling masks
//! select rows and every column of a selected row is measured.
//!
//! The transform pair is unitary (`1/n` overall for an `n × n` grid), so
//! Parseval holds without extra constants and the zero-filled aliasing image
//! is the average, not the sum, of the `rho` shifted copies.

use std::cell::RefCell;
use std::collections::BTreeSet;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Centered frequency index of storage position `k`.
pub fn storage_to_centered(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Storage position of centered index `b`.
pub fn centered_to_storage(b: i64, n: usize) -> usize {
    b.rem_euclid(n as i64) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    n: usize,
    data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn zeros(n: usize) -> Self {
        ComplexImage {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    pub fn from_vec(n: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape(format!(
                "expected {} values for {n}x{n}, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(ComplexImage { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.n + col]
    }

    /// Pixelwise modulus.
    pub fn magnitude(&self) -> Image {
        Image::from_vec(self.n, self.data.iter().map(|z| z.norm()).collect())
            .expect("shape preserved")
    }

    pub fn norm(&self) -> f64 {
        l2(&self.data)
    }

    pub fn max_abs_diff(&self, other: &ComplexImage) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }
}

impl From<&Image> for ComplexImage {
    fn from(img: &Image) -> Self {
        ComplexImage {
            n: img.size(),
            data: img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }
}

/// Full `n × n` k-space data in FFT storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceGrid {
    n: usize,
    data: Vec<Complex64>,
}

impl KSpaceGrid {
    pub fn zeros(n: usize) -> Self {
        KSpaceGrid {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    pub fn from_vec(n: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape(format!(
                "expected {} values for {n}x{n}, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(KSpaceGrid { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    /// Value at centered indices `(b, a)`: phase-encoding line `b`, readout
    /// position `a`.
    pub fn at(&self, b: i64, a: i64) -> Complex64 {
        self.data[centered_to_storage(b, self.n) * self.n + centered_to_storage(a, self.n)]
    }

    pub fn set_at(&mut self, b: i64, a: i64, value: Complex64) {
        let idx = centered_to_storage(b, self.n) * self.n + centered_to_storage(a, self.n);
        self.data[idx] = value;
    }

    /// Phase-encoding line `b` (centered), readout in storage order.
    pub fn line(&self, b: i64) -> &[Complex64] {
        let r = centered_to_storage(b, self.n);
        &self.data[r * self.n..(r + 1) * self.n]
    }

    fn line_mut(&mut self, b: i64) -> &mut [Complex64] {
        let r = centered_to_storage(b, self.n);
        &mut self.data[r * self.n..(r + 1) * self.n]
    }

    pub fn norm(&self) -> f64 {
        l2(&self.data)
    }

    pub fn max_abs_diff(&self, other: &KSpaceGrid) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingMask {
    pub n: usize,
    pub rho: usize,
    pub low_lines: usize,
    /// Measured phase-encoding lines, centered indices, ascending.
    pub lines: Vec<i64>,
}

impl SamplingMask {
    pub fn contains(&self, b: i64) -> bool {
        self.lines.binary_search(&b).is_ok()
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    /// Fraction of k-space that is measured.
    pub fn sampled_fraction(&self) -> f64 {
        self.lines.len() as f64 / self.n as f64
    }

    /// Checks the structural invariants of a mask, e.g. one read from disk.
    pub fn validate(&self) -> Result<()> {
        let expected = build_mask(self.n, self.rho, self.low_lines)?;
        if expected.lines != self.lines {
            return Err(Error::Parameter(format!(
                "mask lines do not match rho={} L={} for n={}",
                self.rho, self.low_lines, self.n
            )));
        }
        Ok(())
    }
}

/// Uniform lines `b ≡ 0 (mod rho)` plus the `low_lines` unmeasured lines
/// closest to the center, ties going to the negative index.
pub fn build_mask(n: usize, rho: usize, low_lines: usize) -> Result<SamplingMask> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::Parameter(format!("grid size {n} must be even")));
    }
    if rho == 0 || n % rho != 0 {
        return Err(Error::Parameter(format!("rho={rho} does not divide n={n}")));
    }
    let uniform = n / rho;
    if low_lines > n - uniform {
        return Err(Error::Parameter(format!(
            "L={low_lines} exceeds the {} unmeasured lines",
            n - uniform
        )));
    }
    let half = (n / 2) as i64;
    let mut lines: BTreeSet<i64> = (1 - half..=half)
        .filter(|b| b.rem_euclid(rho as i64) == 0)
        .collect();
    let mut candidates: Vec<i64> = (1 - half..=half).filter(|b| !lines.contains(b)).collect();
    candidates.sort_by_key(|&b| (b.abs(), b));
    lines.extend(candidates.into_iter().take(low_lines));
    Ok(SamplingMask {
        n,
        rho,
        low_lines,
        lines: lines.into_iter().collect(),
    })
}

/// Acceleration `R = n / |lines|`.
pub fn reduction_factor(mask: &SamplingMask) -> f64 {
    mask.n as f64 / mask.lines.len() as f64
}

/// Measured lines of a grid in mask order.
#[derive(Debug, Clone, PartialEq)]
pub struct UndersampledKSpace {
    mask: SamplingMask,
    rows: Vec<Complex64>,
}

impl UndersampledKSpace {
    pub fn new(mask: SamplingMask, rows: Vec<Complex64>) -> Result<Self> {
        if rows.len() != mask.lines.len() * mask.n {
            return Err(Error::Shape(format!(
                "{} values for {} lines of length {}",
                rows.len(),
                mask.lines.len(),
                mask.n
            )));
        }
        Ok(UndersampledKSpace { mask, rows })
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn rows(&self) -> &[Complex64] {
        &self.rows
    }

    pub fn size(&self) -> usize {
        self.mask.n
    }

    /// The `i`-th measured line (mask order).
    pub fn row(&self, i: usize) -> &[Complex64] {
        let n = self.mask.n;
        &self.rows[i * n..(i + 1) * n]
    }

    pub fn norm(&self) -> f64 {
        l2(&self.rows)
    }
}

fn l2(data: &[Complex64]) -> f64 {
    data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// In-place unitary 2-D transform of a row-major `n × n` buffer.
fn fft2(n: usize, data: &mut [Complex64], direction: FftDirection) {
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft(n, direction));
    fft.process(data);
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = data[r * n + c];
        }
        fft.process(&mut col);
        for r in 0..n {
            data[r * n + c] = col[r];
        }
    }
    let scale = 1.0 / n as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

pub fn forward_dft(image: &ComplexImage) -> KSpaceGrid {
    let mut data = image.data.clone();
    fft2(image.n, &mut data, FftDirection::Forward);
    KSpaceGrid { n: image.n, data }
}

pub fn forward_dft_real(image: &Image) -> KSpaceGrid {
    forward_dft(&ComplexImage::from(image))
}

/// `y(n, m) = (1/N) Σ_{a,b} x(a, b) exp(2πi (a n + b m) / N)` over the
/// centered index range.
pub fn inverse_dft(kspace: &KSpaceGrid) -> ComplexImage {
    let mut data = kspace.data.clone();
    fft2(kspace.n, &mut data, FftDirection::Inverse);
    ComplexImage { n: kspace.n, data }
}

pub fn subsample(kspace: &KSpaceGrid, mask: &SamplingMask) -> Result<UndersampledKSpace> {
    if kspace.n != mask.n {
        return Err(Error::Shape(format!(
            "grid size {} vs mask size {}",
            kspace.n, mask.n
        )));
    }
    let mut rows = Vec::with_capacity(mask.lines.len() * mask.n);
    for &b in &mask.lines {
        rows.extend_from_slice(kspace.line(b));
    }
    Ok(UndersampledKSpace {
        mask: mask.clone(),
        rows,
    })
}

pub fn zero_pad(x: &UndersampledKSpace) -> KSpaceGrid {
    let mut grid = KSpaceGrid::zeros(x.mask.n);
    for (i, &b) in x.mask.lines.iter().enumerate() {
        grid.line_mut(b).copy_from_slice(x.row(i));
    }
    grid
}

/// `ℓ2`-minimal image consistent with the measurements.
pub fn minimum_norm_solution(x: &UndersampledKSpace) -> ComplexImage {
    inverse_dft(&zero_pad(x))
}

/// Aliased magnitude image `|F⁻¹ P(x)|`.
pub fn zero_fill_recon(x: &UndersampledKSpace) -> Image {
    minimum_norm_solution(x).magnitude()
}

/// Folding predicted by Poisson summation for uniform row skipping:
/// `(1/rho) Σ_j y(r + j n/rho, c)` with cyclic row index.
pub fn predict_fold(y: &ComplexImage, rho: usize) -> Result<ComplexImage> {
    let n = y.n;
    if rho == 0 || n % rho != 0 {
        return Err(Error::Parameter(format!("rho={rho} does not divide n={n}")));
    }
    let period = n / rho;
    let scale = 1.0 / rho as f64;
    let mut out = ComplexImage::zeros(n);
    for r in 0..n {
        for c in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..rho {
                acc += y.get((r + j * period) % n, c);
            }
            out.data[r * n + c] = acc * scale;
        }
    }
    Ok(out)
}
