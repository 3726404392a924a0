//! Mini-batch RMSProp training of the U-net on (aliased, ground truth)
//! image pairs.
//!
//! Losses are reported pixel-averaged ([`l2_loss`]), but the optimizer
//! follows the gradient of the per-image *sum* of squared errors, averaged
//! over the batch. The two objectives differ by the constant factor `N²`,
//! which RMSProp's normalization cancels everywhere except against `ε`: with
//! the averaged objective at 64×64 the raw gradients sit near `1e-6`, below
//! `√ε` for the default `ε = 1e-8`, and the updates stall.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::kspace::{forward_dft_real, subsample, zero_fill_recon, SamplingMask};
use crate::unet::{backward, forward, init_weights, to_tensor, Kernel, Scalar, Tensor, UNetConfig, UNetWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Moving-average decay of the squared-gradient accumulator.
    pub rms_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Added under the square root of the accumulator.
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            rms_decay: 0.9,
            batch_size: 32,
            epochs: 150,
            seed: 0,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.rms_decay > 0.0 && self.rms_decay < 1.0) {
            return Err(Error::Parameter(format!(
                "RMSProp decay must lie in (0, 1), got {}",
                self.rms_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Parameter(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<F> {
    pub weights: UNetWeights<F>,
    /// Running mean of squared gradients, one per kernel.
    pub accumulators: Vec<Kernel<F>>,
    pub epoch: usize,
    /// Mean training loss of every completed epoch.
    pub loss_history: Vec<f64>,
}

impl<F: Scalar> TrainState<F> {
    pub fn new(weights: UNetWeights<F>) -> Self {
        let accumulators = weights
            .layers
            .iter()
            .map(|l| Kernel::zeros(l.out_channels(), l.in_channels(), l.size()))
            .collect();
        TrainState {
            weights,
            accumulators,
            epoch: 0,
            loss_history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    /// Aliased zero-filled reconstruction.
    pub input: Image,
    pub target: Image,
}

/// Mean squared difference over pixels.
pub fn l2_loss(prediction: &Image, target: &Image) -> Result<f64> {
    prediction.check_same_size(target)?;
    let n = prediction.data().len() as f64;
    Ok(prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Per-image [`l2_loss`] averaged over a batch.
pub fn batch_l2_loss(predictions: &[Image], targets: &[Image]) -> Result<f64> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::Shape(format!(
            "batch of {} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        total += l2_loss(p, t)?;
    }
    Ok(total / predictions.len() as f64)
}

/// One RMSProp update:
/// `acc ← decay·acc + (1 − decay)·g²`, `w ← w − lr·g / √(acc + ε)`.
pub fn rmsprop_step<F: Scalar>(
    state: &mut TrainState<F>,
    gradients: &[Kernel<F>],
    config: &TrainConfig,
) -> Result<()> {
    if gradients.len() != state.weights.layers.len()
        || gradients
            .iter()
            .zip(&state.weights.layers)
            .any(|(g, w)| !g.same_shape(w))
    {
        return Err(Error::Shape("gradient shapes do not match the weights".into()));
    }
    if let Some(i) = gradients
        .iter()
        .position(|g| g.data().iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite(format!(
            "gradient of layer {i} at epoch {}",
            state.epoch
        )));
    }
    let decay = F::of_f64(config.rms_decay);
    let keep = F::of_f64(1.0 - config.rms_decay);
    let lr = F::of_f64(config.learning_rate);
    let eps = F::of_f64(config.epsilon);
    for ((w, acc), g) in state
        .weights
        .layers
        .iter_mut()
        .zip(&mut state.accumulators)
        .zip(gradients)
    {
        for ((wv, av), &gv) in w
            .data_mut()
            .iter_mut()
            .zip(acc.data_mut().iter_mut())
            .zip(g.data())
        {
            *av = decay * *av + keep * gv * gv;
            *wv = *wv - lr * gv / (*av + eps).sqrt();
        }
    }
    Ok(())
}

/// Aliased inputs for a set of ground-truth images under `mask`.
pub fn make_training_pairs(images: &[Image], mask: &SamplingMask) -> Result<Vec<TrainingPair>> {
    images
        .iter()
        .map(|y| {
            if y.size() != mask.n {
                return Err(Error::Shape(format!(
                    "image size {} vs mask size {}",
                    y.size(),
                    mask.n
                )));
            }
            let x = subsample(&forward_dft_real(y), mask)?;
            Ok(TrainingPair {
                input: zero_fill_recon(&x),
                target: y.clone(),
            })
        })
        .collect()
}

/// Kernel gradients of the batch-mean per-image squared error, and the
/// summed pixel-averaged per-sample losses. Samples are reduced in batch
/// order.
fn batch_gradients<F: Scalar>(
    weights: &UNetWeights<F>,
    batch: &[(&Tensor<F>, &Tensor<F>)],
) -> Result<(Vec<Kernel<F>>, f64)> {
    let scale = F::of_f64(2.0 / batch.len() as f64);
    let mut total: Option<Vec<Kernel<F>>> = None;
    let mut loss_sum = 0.0;
    for (input, target) in batch {
        let (out, cache) = forward(weights, input)?;
        let pixels = out.data().len() as f64;
        let mut loss = 0.0;
        let diff: Vec<F> = out
            .data()
            .iter()
            .zip(target.data())
            .map(|(&o, &t)| {
                let d = o - t;
                loss += d.as_f64() * d.as_f64();
                d * scale
            })
            .collect();
        loss_sum += loss / pixels;
        let grad_out = Tensor::from_vec(1, out.height(), out.width(), diff)?;
        let grads = backward(weights, &cache, &grad_out)?;
        match total.as_mut() {
            None => total = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (x, &y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
            }
        }
    }
    Ok((total.expect("non-empty batch"), loss_sum))
}

/// Trains from a fresh initialization seeded by `config.seed`.
pub fn train<F: Scalar>(
    pairs: &[TrainingPair],
    config: &TrainConfig,
    unet_config: UNetConfig,
) -> Result<TrainState<F>> {
    train_with(pairs, config, unet_config, |_| Ok(()))
}

/// Like [`train`], calling `on_epoch` after every completed epoch.
pub fn train_with<F: Scalar>(
    pairs: &[TrainingPair],
    config: &TrainConfig,
    unet_config: UNetConfig,
    mut on_epoch: impl FnMut(&TrainState<F>) -> Result<()>,
) -> Result<TrainState<F>> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Parameter("no training pairs".into()));
    }
    let n = unet_config.input_size;
    for p in pairs {
        if p.input.size() != n || p.target.size() != n {
            return Err(Error::Shape(format!(
                "training pair of size {}/{} for a {n}-pixel network",
                p.input.size(),
                p.target.size()
            )));
        }
    }
    let mut state = TrainState::new(init_weights(unet_config, config.seed)?);
    let tensors: Vec<(Tensor<F>, Tensor<F>)> = pairs
        .iter()
        .map(|p| (to_tensor(&p.input), to_tensor(&p.target)))
        .collect();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(&Tensor<F>, &Tensor<F>)> =
                chunk.iter().map(|&i| (&tensors[i].0, &tensors[i].1)).collect();
            let (grads, loss_sum) = batch_gradients(&state.weights, &batch)?;
            if !loss_sum.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}, batch {b}")));
            }
            epoch_loss += loss_sum;
            rmsprop_step(&mut state, &grads, config)?;
        }
        state.epoch += 1;
        state.loss_history.push(epoch_loss / pairs.len() as f64);
        log::debug!("epoch {} loss {:.6}", state.epoch, epoch_loss / pairs.len() as f64);
        on_epoch(&state)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::{build_mask, predict_fold, ComplexImage};
    use crate::phantom::{render_phantom, shepp_logan_anomalies, shepp_logan_ellipses, PhantomSpec};

    fn scalar_state(w: f64, acc: f64) -> TrainState<f64> {
        let cfg = UNetConfig::new(16, 1, 1).unwrap();
        let mut weights = UNetWeights::<f64>::zeros(cfg).unwrap();
        weights.layers[0].data_mut()[0] = w;
        let mut state = TrainState::new(weights);
        state.accumulators[0].data_mut()[0] = acc;
        state
    }

    fn grads_with(state: &TrainState<f64>, g: f64) -> Vec<Kernel<f64>> {
        let mut grads: Vec<Kernel<f64>> = state
            .weights
            .layers
            .iter()
            .map(|l| Kernel::zeros(l.out_channels(), l.in_channels(), l.size()))
            .collect();
        grads[0].data_mut()[0] = g;
        grads
    }

    #[test]
    fn loss_cases() {
        let a = Image::filled(4, 0.3);
        assert_eq!(l2_loss(&a, &a).unwrap(), 0.0);
        let b = Image::filled(4, 0.4);
        assert!((l2_loss(&b, &a).unwrap() - 0.01).abs() < 1e-12);
        let d = Image::from_fn(4, |r, c| (r * 4 + c) as f64 / 16.0);
        let brute: f64 = (0..16).map(|i| (i as f64 / 16.0 - 0.3).powi(2)).sum::<f64>() / 16.0;
        assert!((l2_loss(&d, &a).unwrap() - brute).abs() < 1e-15);
        assert!(l2_loss(&a, &Image::zeros(8)).is_err());
        assert!((batch_l2_loss(&[b, d], &[a.clone(), a]).unwrap() - (0.01 + brute) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn rmsprop_single_step() {
        let cfg = TrainConfig::default();
        let mut s = scalar_state(0.0, 0.0);
        let g = grads_with(&s, 1.0);
        rmsprop_step(&mut s, &g, &cfg).unwrap();
        assert!((s.accumulators[0].data()[0] - 0.1).abs() < 1e-15);
        let expect = -0.001 / (0.1f64 + 1e-8).sqrt();
        assert!((s.weights.layers[0].data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_two_steps_follow_recurrence() {
        let cfg = TrainConfig::default();
        let mut s = scalar_state(0.5, 0.0);
        let g = grads_with(&s, 0.3);
        let (mut w, mut acc) = (0.5f64, 0.0f64);
        for _ in 0..2 {
            rmsprop_step(&mut s, &g, &cfg).unwrap();
            acc = 0.9 * acc + 0.1 * 0.09;
            w -= 0.001 * 0.3 / (acc + 1e-8).sqrt();
        }
        assert!((s.weights.layers[0].data()[0] - w).abs() < 1e-15);
        assert!((s.accumulators[0].data()[0] - acc).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_zero_gradient_decays_accumulator() {
        let cfg = TrainConfig::default();
        let mut s = scalar_state(0.25, 0.4);
        let g = grads_with(&s, 0.0);
        rmsprop_step(&mut s, &g, &cfg).unwrap();
        assert_eq!(s.weights.layers[0].data()[0], 0.25);
        assert!((s.accumulators[0].data()[0] - 0.36).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_rejects_bad_gradients() {
        let cfg = TrainConfig::default();
        let mut s = scalar_state(0.0, 0.0);
        let g = grads_with(&s, f64::NAN);
        assert!(matches!(rmsprop_step(&mut s, &g, &cfg), Err(Error::NonFinite(_))));
        assert!(rmsprop_step(&mut s, &g[1..], &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { rms_decay: 1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn pairs_full_mask_and_empty() {
        let img = render_phantom(&PhantomSpec::new(shepp_logan_ellipses(), vec![], 0).unwrap(), 32).unwrap();
        let full = build_mask(32, 1, 0).unwrap();
        let pairs = make_training_pairs(std::slice::from_ref(&img), &full).unwrap();
        assert!(pairs[0].input.l2_distance(&img).unwrap() < 1e-10);
        assert_eq!(pairs[0].target, img);
        assert!(make_training_pairs(&[], &full).unwrap().is_empty());
        assert!(make_training_pairs(&[img], &build_mask(64, 1, 0).unwrap()).is_err());
    }

    #[test]
    fn pairs_match_fold_prediction() {
        let spec = PhantomSpec::new(shepp_logan_ellipses(), shepp_logan_anomalies(), 0).unwrap();
        let y = render_phantom(&spec, 64).unwrap();
        let pairs = make_training_pairs(std::slice::from_ref(&y), &build_mask(64, 4, 0).unwrap()).unwrap();
        let fold = predict_fold(&ComplexImage::from(&y), 4).unwrap().magnitude();
        assert!(pairs[0].input.l2_distance(&fold).unwrap() < 1e-10);
    }

    fn tiny_pairs(count: usize) -> Vec<TrainingPair> {
        let images = crate::phantom::generate_dataset(count, 16, 3).unwrap();
        make_training_pairs(&images, &build_mask(16, 2, 2).unwrap()).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = UNetConfig::new(16, 1, 2).unwrap();
        let tc = TrainConfig { epochs: 0, seed: 9, ..Default::default() };
        let state: TrainState<f64> = train(&tiny_pairs(3), &tc, cfg).unwrap();
        assert_eq!(state.weights, init_weights(cfg, 9).unwrap());
        assert!(state.loss_history.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_records_history() {
        let cfg = UNetConfig::new(16, 1, 2).unwrap();
        let tc = TrainConfig { epochs: 3, batch_size: 2, seed: 4, ..Default::default() };
        let pairs = tiny_pairs(5);
        let a: TrainState<f32> = train(&pairs, &tc, cfg).unwrap();
        let b: TrainState<f32> = train(&pairs, &tc, cfg).unwrap();
        assert_eq!(a.loss_history.len(), 3);
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.weights, b.weights);
        assert!(a.accumulators.iter().all(|k| k.data().iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn default_epsilon_does_not_stall() {
        let cfg = UNetConfig::new(16, 1, 4).unwrap();
        let tc = TrainConfig { epochs: 40, batch_size: 4, ..Default::default() };
        let s: TrainState<f32> = train(&tiny_pairs(8), &tc, cfg).unwrap();
        let (first, last) = (s.loss_history[0], *s.loss_history.last().unwrap());
        assert!(last < 0.75 * first, "{first} -> {last}");
    }

    #[test]
    fn batch_gradient_is_mean_of_samples() {
        let cfg = UNetConfig::new(16, 1, 2).unwrap();
        let w: UNetWeights<f64> = init_weights(cfg, 6).unwrap();
        let pairs = tiny_pairs(2);
        let t: Vec<_> = pairs.iter().map(|p| (to_tensor::<f64>(&p.input), to_tensor::<f64>(&p.target))).collect();
        let (both, loss) = batch_gradients(&w, &[(&t[0].0, &t[0].1), (&t[1].0, &t[1].1)]).unwrap();
        let (g0, l0) = batch_gradients(&w, &[(&t[0].0, &t[0].1)]).unwrap();
        let (g1, l1) = batch_gradients(&w, &[(&t[1].0, &t[1].1)]).unwrap();
        assert!((loss - (l0 + l1)).abs() < 1e-15);
        for ((b, x), y) in both.iter().zip(&g0).zip(&g1) {
            for ((&b, &x), &y) in b.data().iter().zip(x.data()).zip(y.data()) {
                assert!((b - 0.5 * (x + y)).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn training_rejects_bad_input() {
        let cfg = UNetConfig::new(16, 1, 2).unwrap();
        let tc = TrainConfig::default();
        assert!(train::<f32>(&[], &tc, cfg).is_err());
        let wrong = UNetConfig::new(32, 1, 2).unwrap();
        assert!(train::<f32>(&tiny_pairs(2), &tc, wrong).is_err());
    }

    #[test]
    fn single_batch_gradient_matches_image_api() {
        let cfg = UNetConfig::new(16, 1, 2).unwrap();
        let w: UNetWeights<f64> = init_weights(cfg, 2).unwrap();
        let pairs = tiny_pairs(1);
        let x = to_tensor::<f64>(&pairs[0].input);
        let t = to_tensor::<f64>(&pairs[0].target);
        let (grads, loss) = batch_gradients(&w, &[(&x, &t)]).unwrap();
        let out = crate::unet::unet_forward(&w, &pairs[0].input).unwrap();
        assert!((loss - l2_loss(&out, &pairs[0].target).unwrap()).abs() < 1e-12);
        let og = Image::from_vec(
            16,
            out.data().iter().zip(pairs[0].target.data()).map(|(o, t)| 2.0 * (o - t)).collect(),
        )
        .unwrap();
        let direct = crate::unet::unet_backward(&w, &pairs[0].input, &og).unwrap();
        assert_eq!(grads, direct);
    }
}
