//! The inference pipeline `|F⁻¹| ∘ f_cor ∘ F ∘ f_d ∘ |F⁻¹| ∘ P`: zero-fill,
//! U-net unfolding, then overwriting measured k-space lines with the data.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::kspace::{forward_dft_real, inverse_dft, zero_fill_recon, KSpaceGrid, UndersampledKSpace};
use crate::unet::{unet_forward, Scalar, UNetWeights};

/// Every stage of one reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    pub aliased: Image,
    pub unet_output: Image,
    pub corrected_kspace: KSpaceGrid,
    pub final_image: Image,
}

/// Replaces the measured lines of `predicted` with the measurements.
pub fn kspace_correction(predicted: &KSpaceGrid, measured: &UndersampledKSpace) -> Result<KSpaceGrid> {
    let n = predicted.size();
    if measured.size() != n {
        return Err(Error::Shape(format!(
            "predicted grid {n} vs measured data {}",
            measured.size()
        )));
    }
    let mut data = predicted.data().to_vec();
    for (i, &b) in measured.mask().lines.iter().enumerate() {
        let r = crate::kspace::centered_to_storage(b, n);
        data[r * n..(r + 1) * n].copy_from_slice(measured.row(i));
    }
    KSpaceGrid::from_vec(n, data)
}

pub fn reconstruct<F: Scalar>(x: &UndersampledKSpace, weights: &UNetWeights<F>) -> Result<ReconResult> {
    if weights.config.input_size != x.size() {
        return Err(Error::Shape(format!(
            "network expects {} pixels, data has {}",
            weights.config.input_size,
            x.size()
        )));
    }
    let aliased = zero_fill_recon(x);
    let unet_output = unet_forward(weights, &aliased)?;
    let corrected_kspace = kspace_correction(&forward_dft_real(&unet_output), x)?;
    let final_image = inverse_dft(&corrected_kspace).magnitude();
    Ok(ReconResult {
        aliased,
        unet_output,
        corrected_kspace,
        final_image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::{build_mask, subsample, zero_pad};
    use crate::phantom::generate_shepp_logan;
    use crate::unet::{init_weights, UNetConfig};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(n: usize, seed: u64) -> KSpaceGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        KSpaceGrid::from_vec(
            n,
            (0..n * n)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn correction_noop_on_consistent_data() {
        let p = random_grid(16, 1);
        let mask = build_mask(16, 4, 2).unwrap();
        let x = subsample(&p, &mask).unwrap();
        assert_eq!(kspace_correction(&p, &x).unwrap(), p);
    }

    #[test]
    fn correction_restores_measurements() {
        let mask = build_mask(16, 4, 3).unwrap();
        let x = subsample(&random_grid(16, 2), &mask).unwrap();
        let p = random_grid(16, 3);
        let c = kspace_correction(&p, &x).unwrap();
        assert_eq!(subsample(&c, &mask).unwrap(), x);
        assert_eq!(kspace_correction(&c, &x).unwrap(), c);
        assert_eq!(kspace_correction(&KSpaceGrid::zeros(16), &x).unwrap(), zero_pad(&x));
        assert!(kspace_correction(&KSpaceGrid::zeros(8), &x).is_err());
    }

    #[test]
    fn zero_weights_give_zero_fill() {
        let y = generate_shepp_logan(32).unwrap();
        let x = subsample(&forward_dft_real(&y), &build_mask(32, 4, 4).unwrap()).unwrap();
        let w = UNetWeights::<f64>::zeros(UNetConfig::new(32, 2, 2).unwrap()).unwrap();
        let r = reconstruct(&x, &w).unwrap();
        assert!(r.unet_output.data().iter().all(|&v| v == 0.0));
        assert!(r.final_image.l2_distance(&r.aliased).unwrap() < 1e-12);
    }

    #[test]
    fn full_mask_returns_truth() {
        let y = generate_shepp_logan(32).unwrap();
        let x = subsample(&forward_dft_real(&y), &build_mask(32, 1, 0).unwrap()).unwrap();
        let w: UNetWeights<f64> = init_weights(UNetConfig::new(32, 2, 2).unwrap(), 5).unwrap();
        let r = reconstruct(&x, &w).unwrap();
        assert!(r.final_image.l2_distance(&y).unwrap() < 1e-10);
    }

    #[test]
    fn size_mismatch_rejected() {
        let y = generate_shepp_logan(32).unwrap();
        let x = subsample(&forward_dft_real(&y), &build_mask(32, 2, 0).unwrap()).unwrap();
        let w = UNetWeights::<f64>::zeros(UNetConfig::new(16, 1, 1).unwrap()).unwrap();
        assert!(reconstruct(&x, &w).is_err());
    }
}
