//! The U-net: two 3×3 conv + ReLU blocks per level, max pooling on the way
//! down, replication unpooling and skip concatenation on the way up, and a
//! final 1×1 convolution without activation. No layer has a bias.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{
    avg_unpool2x2, avg_unpool2x2_backward, concat_channels, conv2d_backward, conv2d_forward,
    conv2d_relu, maxpool2x2, maxpool2x2_backward, relu_backward, Pooled,
};
use super::tensor::{Kernel, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::image::Image;

/// Standard deviation of the zero-mean normal initialization.
pub const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub input_size: usize,
    /// Number of pooling levels.
    pub depth: usize,
    /// Channels produced by the first block; doubles per level.
    pub base_channels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            input_size: 64,
            depth: 3,
            base_channels: 16,
        }
    }
}

/// Convolutions per block.
pub const CONVS_PER_BLOCK: usize = 2;

impl UNetConfig {
    pub fn new(input_size: usize, depth: usize, base_channels: usize) -> Result<Self> {
        let cfg = UNetConfig {
            input_size,
            depth,
            base_channels,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.input_size == 0 {
            return Err(Error::Parameter(format!(
                "U-net needs depth >= 1, base channels >= 1 and a positive size, got {self:?}"
            )));
        }
        if self.input_size % (1 << self.depth) != 0 {
            return Err(Error::Parameter(format!(
                "input size {} is not divisible by 2^{}",
                self.input_size, self.depth
            )));
        }
        Ok(())
    }

    /// Channels at level `l` (level `depth` is the bottom).
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// `(name, out, in, kernel size)` for every layer in evaluation order.
    pub fn layer_specs(&self) -> Vec<(String, usize, usize, usize)> {
        let mut specs = Vec::with_capacity(4 * self.depth + 3);
        let mut prev = 1;
        for l in 0..self.depth {
            let c = self.channels(l);
            specs.push((format!("enc{l}_conv1"), c, prev, 3));
            specs.push((format!("enc{l}_conv2"), c, c, 3));
            prev = c;
        }
        let cb = self.channels(self.depth);
        specs.push(("bottom_conv1".to_string(), cb, prev, 3));
        specs.push(("bottom_conv2".to_string(), cb, cb, 3));
        for l in (0..self.depth).rev() {
            let c = self.channels(l);
            let up = self.channels(l + 1);
            specs.push((format!("dec{l}_conv1"), c, c + up, 3));
            specs.push((format!("dec{l}_conv2"), c, c, 3));
        }
        specs.push(("final".to_string(), 1, self.base_channels, 1));
        specs
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_specs()
            .iter()
            .map(|(_, o, i, k)| o * i * k * k)
            .sum()
    }
}

/// All convolution kernels of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetWeights<F> {
    pub config: UNetConfig,
    pub layers: Vec<Kernel<F>>,
}

impl<F: Scalar> UNetWeights<F> {
    pub fn zeros(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_specs()
            .into_iter()
            .map(|(_, o, i, k)| Kernel::zeros(o, i, k))
            .collect();
        Ok(UNetWeights { config, layers })
    }

    /// Checks layer count and shapes against the config.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let specs = self.config.layer_specs();
        if specs.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "expected {} layers, found {}",
                specs.len(),
                self.layers.len()
            )));
        }
        for ((name, o, i, k), layer) in specs.iter().zip(&self.layers) {
            if layer.shape() != [*o, *i, *k, *k] {
                return Err(Error::Shape(format!(
                    "layer {name} has shape {:?}, expected {:?}",
                    layer.shape(),
                    [*o, *i, *k, *k]
                )));
            }
        }
        Ok(())
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.config.layer_specs().into_iter().map(|s| s.0).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Kernel::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.data().iter().all(|v| v.is_finite()))
    }

    pub fn cast<G: Scalar>(&self) -> UNetWeights<G> {
        UNetWeights {
            config: self.config,
            layers: self.layers.iter().map(Kernel::cast).collect(),
        }
    }

    /// All entries, layer by layer.
    pub fn flat(&self) -> Vec<F> {
        self.layers.iter().flat_map(|l| l.data().iter().copied()).collect()
    }
}

/// Draws every kernel entry i.i.d. from `Normal(0, INIT_STD²)`, layer by
/// layer in row-major order.
pub fn init_weights<F: Scalar>(config: UNetConfig, seed: u64) -> Result<UNetWeights<F>> {
    let mut weights = UNetWeights::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    for layer in &mut weights.layers {
        for v in layer.data_mut() {
            *v = F::of_f64(normal.sample(&mut rng));
        }
    }
    Ok(weights)
}

/// Intermediates retained by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    /// Input of every layer, in layer order.
    inputs: Vec<Tensor<F>>,
    /// Post-ReLU output of every layer except the last.
    outputs: Vec<Tensor<F>>,
    pools: Vec<Pooled<F>>,
}

/// Forward pass returning the output map and the cache for backprop.
pub fn forward<F: Scalar>(
    weights: &UNetWeights<F>,
    input: &Tensor<F>,
) -> Result<(Tensor<F>, ForwardCache<F>)> {
    weights.validate()?;
    let cfg = weights.config;
    if input.shape() != (1, cfg.input_size, cfg.input_size) {
        return Err(Error::Shape(format!(
            "input {:?} does not match a {}x{} single-channel network",
            input.shape(),
            cfg.input_size,
            cfg.input_size
        )));
    }
    let n_layers = weights.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut outputs = Vec::with_capacity(n_layers - 1);
    let mut pools = Vec::with_capacity(cfg.depth);
    let mut skips = Vec::with_capacity(cfg.depth);
    let mut layer = 0;

    let mut conv_relu = |x: Tensor<F>, inputs: &mut Vec<Tensor<F>>, outputs: &mut Vec<Tensor<F>>| -> Result<Tensor<F>> {
        let y = conv2d_relu(&x, &weights.layers[layer])?;
        layer += 1;
        inputs.push(x);
        outputs.push(y.clone());
        Ok(y)
    };

    let mut x = input.clone();
    for _ in 0..cfg.depth {
        x = conv_relu(x, &mut inputs, &mut outputs)?;
        x = conv_relu(x, &mut inputs, &mut outputs)?;
        let pooled = maxpool2x2(&x)?;
        skips.push(x);
        x = pooled.output.clone();
        pools.push(pooled);
    }
    x = conv_relu(x, &mut inputs, &mut outputs)?;
    x = conv_relu(x, &mut inputs, &mut outputs)?;
    for l in (0..cfg.depth).rev() {
        let up = avg_unpool2x2(&x);
        x = concat_channels(&skips[l], &up)?;
        x = conv_relu(x, &mut inputs, &mut outputs)?;
        x = conv_relu(x, &mut inputs, &mut outputs)?;
    }
    let out = conv2d_forward(&x, &weights.layers[n_layers - 1])?;
    inputs.push(x);
    Ok((
        out,
        ForwardCache {
            inputs,
            outputs,
            pools,
        },
    ))
}

/// Exact gradient of a scalar loss with respect to every kernel, given the
/// loss gradient at the network output.
pub fn backward<F: Scalar>(
    weights: &UNetWeights<F>,
    cache: &ForwardCache<F>,
    grad_output: &Tensor<F>,
) -> Result<Vec<Kernel<F>>> {
    let cfg = weights.config;
    let n_layers = weights.layers.len();
    if cache.inputs.len() != n_layers
        || cache.outputs.len() != n_layers - 1
        || cache.pools.len() != cfg.depth
    {
        return Err(Error::Shape(
            "forward cache does not belong to this network".into(),
        ));
    }
    let mut grads: Vec<Option<Kernel<F>>> = vec![None; n_layers];

    // Gradient w.r.t. the input of layer `idx`, given the gradient w.r.t.
    // its post-activation output.
    let mut step = |idx: usize, g: Tensor<F>, want_input: bool| -> Result<Option<Tensor<F>>> {
        let g = if idx + 1 < n_layers {
            relu_backward(&cache.outputs[idx], &g)
        } else {
            g
        };
        let (dk, dx) = conv2d_backward(&cache.inputs[idx], &weights.layers[idx], &g, want_input)?;
        grads[idx] = Some(dk);
        Ok(dx)
    };

    let mut idx = n_layers - 1;
    let mut g = step(idx, grad_output.clone(), true)?.expect("requested");
    let mut skip_grads: Vec<Option<Tensor<F>>> = vec![None; cfg.depth];
    for l in 0..cfg.depth {
        idx -= 1;
        g = step(idx, g, true)?.expect("requested");
        idx -= 1;
        let d_cat = step(idx, g, true)?.expect("requested");
        let c = cfg.channels(l);
        skip_grads[l] = Some(d_cat.channel_slice(0, c));
        g = avg_unpool2x2_backward(&d_cat.channel_slice(c, d_cat.channels()))?;
    }
    idx -= 1;
    g = step(idx, g, true)?.expect("requested");
    idx -= 1;
    g = step(idx, g, true)?.expect("requested");
    for l in (0..cfg.depth).rev() {
        let mut d_skip = maxpool2x2_backward(&cache.pools[l], &g)?;
        let from_skip = skip_grads[l].take().expect("set above");
        for (a, &b) in d_skip.data_mut().iter_mut().zip(from_skip.data()) {
            *a += b;
        }
        idx -= 1;
        g = step(idx, d_skip, true)?.expect("requested");
        idx -= 1;
        let want = idx > 0;
        if let Some(dx) = step(idx, g.clone(), want)? {
            g = dx;
        }
    }
    debug_assert_eq!(idx, 0);
    Ok(grads.into_iter().map(|k| k.expect("every layer visited")).collect())
}

fn image_tensor<F: Scalar>(image: &Image) -> Tensor<F> {
    let n = image.size();
    Tensor::from_vec(1, n, n, image.data().iter().map(|&v| F::of_f64(v)).collect())
        .expect("square image")
}

fn tensor_image<F: Scalar>(t: &Tensor<F>) -> Image {
    Image::from_vec(t.height(), t.data().iter().map(|v| v.as_f64()).collect()).expect("square")
}

/// Runs the network on an image.
pub fn unet_forward<F: Scalar>(weights: &UNetWeights<F>, input: &Image) -> Result<Image> {
    let (out, _) = forward(weights, &image_tensor(input))?;
    Ok(tensor_image(&out))
}

/// Kernel gradients for an image input and an output-image gradient.
pub fn unet_backward<F: Scalar>(
    weights: &UNetWeights<F>,
    input: &Image,
    output_gradient: &Image,
) -> Result<Vec<Kernel<F>>> {
    let (_, cache) = forward(weights, &image_tensor(input))?;
    backward(weights, &cache, &image_tensor(output_gradient))
}

pub(crate) fn to_tensor<F: Scalar>(image: &Image) -> Tensor<F> {
    image_tensor(image)
}
