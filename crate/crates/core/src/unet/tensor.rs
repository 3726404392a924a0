use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type of network tensors. Training runs in `f32`; gradient
/// checks run in `f64`.
pub trait Scalar: Float + Default + Debug + Send + Sync + Sum + AddAssign + 'static {
    /// `c = a · b + beta · c` for strided operands, `a` is `m × k`, `b` is
    /// `k × n` and `c` is row-major with row stride `c_row_stride`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_row_stride: usize,
    );

    fn of_f64(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("finite cast")
    }

    fn as_f64(self) -> f64 {
        <f64 as num_traits::NumCast>::from(self).expect("finite cast")
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, (rs, cs): (isize, isize)) {
    if rows > 0 && cols > 0 {
        let last = (rows - 1) as isize * rs + (cols - 1) as isize * cs;
        assert!((last as usize) < len, "gemm operand out of bounds");
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_row_stride: usize,
            ) {
                check_extent(a.len(), m, k, a_strides);
                check_extent(b.len(), k, n, b_strides);
                check_extent(c.len(), m, n, (c_row_stride as isize, 1));
                // SAFETY: operand extents were checked against the slices above
                // and `c` is a dense row-major m × n buffer.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_row_stride as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Feature map of shape `(channels, height, width)`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![F::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<F>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape("tensor dimensions must be positive".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for shape ({channels}, {height}, {width})",
                data.len()
            )));
        }
        Ok(Tensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> F {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Channels `start..end` as a new tensor.
    pub fn channel_slice(&self, start: usize, end: usize) -> Self {
        let p = self.plane();
        Tensor {
            channels: end - start,
            height: self.height,
            width: self.width,
            data: self.data[start * p..end * p].to_vec(),
        }
    }
}

/// Convolution kernel of shape `(out, in, k, k)` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel<F> {
    out_channels: usize,
    in_channels: usize,
    size: usize,
    data: Vec<F>,
}

impl<F: Scalar> Kernel<F> {
    pub fn zeros(out_channels: usize, in_channels: usize, size: usize) -> Self {
        Kernel {
            out_channels,
            in_channels,
            size,
            data: vec![F::zero(); out_channels * in_channels * size * size],
        }
    }

    pub fn from_vec(out_channels: usize, in_channels: usize, size: usize, data: Vec<F>) -> Result<Self> {
        if size != 1 && size != 3 {
            return Err(Error::Shape(format!("kernel size {size} is not 1 or 3")));
        }
        if data.len() != out_channels * in_channels * size * size {
            return Err(Error::Shape(format!(
                "{} values for kernel ({out_channels}, {in_channels}, {size}, {size})",
                data.len()
            )));
        }
        Ok(Kernel {
            out_channels,
            in_channels,
            size,
            data,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `(out, in, k, k)`.
    pub fn shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.size, self.size]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Kernel<F>) -> bool {
        self.shape() == other.shape()
    }

    pub fn cast<G: Scalar>(&self) -> Kernel<G> {
        Kernel {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            size: self.size,
            data: self.data.iter().map(|&v| G::of_f64(v.as_f64())).collect(),
        }
    }
}
