//! Aliasing as folding: the zero-filled reconstruction of uniformly
//! undersampled k-space equals the average of `ρ` cyclic row shifts, and
//! zero-filling is the minimum-norm image consistent with the data.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unfold_mri::kspace::{
    build_mask, forward_dft, inverse_dft, minimum_norm_solution, predict_fold, reduction_factor, subsample,
    zero_pad, ComplexImage,
};

fn main() -> unfold_mri::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 64;
    let y = ComplexImage::from_vec(
        n,
        (0..n * n).map(|_| Complex64::new(rng.gen(), rng.gen())).collect(),
    )?;
    for rho in [2, 4, 8] {
        let mask = build_mask(n, rho, 0)?;
        let pipeline = inverse_dft(&zero_pad(&subsample(&forward_dft(&y), &mask)?));
        let fold = predict_fold(&y, rho)?;
        println!("rho {rho}: max |fold - zero-fill| = {:.2e}", fold.max_abs_diff(&pipeline));
    }

    // Any image with the same measured lines has at least the zero-fill norm.
    let mask = build_mask(n, 4, 4)?;
    let x = subsample(&forward_dft(&y), &mask)?;
    let y0 = minimum_norm_solution(&x);
    println!("min-norm |y0| = {:.4}, truth |y| = {:.4}", y0.norm(), y.norm());

    for (n, rho, l) in [(256, 4, 12), (256, 8, 12)] {
        let m = build_mask(n, rho, l)?;
        println!(
            "n={n} rho={rho} L={l}: {} lines, R = {:.3}, {:.1}% of k-space",
            m.line_count(),
            reduction_factor(&m),
            100.0 * m.sampled_fraction()
        );
    }
    Ok(())
}
