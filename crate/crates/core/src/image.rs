//! Square real-valued images.

use crate::error::{Error, Result};

/// A square `n × n` real image stored row-major. Rows run along the
/// phase-encoding (vertical) direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    n: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(n: usize) -> Self {
        Image {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn filled(n: usize, value: f64) -> Self {
        Image {
            n,
            data: vec![value; n * n],
        }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape(format!(
                "expected {} pixels for a {n}x{n} image, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(Image { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                data.push(f(r, c));
            }
        }
        Image { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.n + col] = value;
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Pixelwise `self - other`.
    pub fn difference(&self, other: &Image) -> Result<Image> {
        self.check_same_size(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Image { n: self.n, data })
    }

    /// Euclidean distance between two images of the same size.
    pub fn l2_distance(&self, other: &Image) -> Result<f64> {
        self.check_same_size(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub(crate) fn check_same_size(&self, other: &Image) -> Result<()> {
        if self.n != other.n {
            return Err(Error::Shape(format!(
                "image sizes differ: {} vs {}",
                self.n, other.n
            )));
        }
        Ok(())
    }
}

/// Valid ground-truth and network sizes: even and at least 16.
pub fn check_size(n: usize) -> Result<()> {
    if n < 16 || n % 2 != 0 {
        return Err(Error::Size(n));
    }
    Ok(())
}
