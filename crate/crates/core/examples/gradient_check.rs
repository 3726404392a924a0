//! Backpropagation against central finite differences on a tiny U-net.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unfold_mri::unet::{init_weights, unet_backward, unet_forward, UNetConfig, UNetWeights};
use unfold_mri::Image;

fn probe_objective(w: &UNetWeights<f64>, x: &Image, probe: &Image) -> f64 {
    let y = unet_forward(w, x).unwrap();
    y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
}

fn main() -> unfold_mri::Result<()> {
    let cfg = UNetConfig::new(8, 1, 2)?;
    let mut w: UNetWeights<f64> = init_weights(cfg, 3)?;
    // Larger weights keep activations away from the ReLU kinks.
    for l in &mut w.layers {
        l.data_mut().iter_mut().for_each(|v| *v *= 30.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Image::from_fn(8, |_, _| rng.gen());
    let probe = Image::from_fn(8, |_, _| rng.gen());
    let grads = unet_backward(&w, &x, &probe)?;
    let h = 1e-4;
    for (name, (l, g)) in w.layer_names().iter().zip(grads.iter().enumerate()) {
        let mut worst: f64 = 0.0;
        for j in 0..g.len() {
            let mut plus = w.clone();
            plus.layers[l].data_mut()[j] += h;
            let mut minus = w.clone();
            minus.layers[l].data_mut()[j] -= h;
            let fd = (probe_objective(&plus, &x, &probe) - probe_objective(&minus, &x, &probe)) / (2.0 * h);
            let a = g.data()[j];
            worst = worst.max((fd - a).abs() / fd.abs().max(a.abs()).max(1e-8));
        }
        println!("{name:<14} {:>4} weights  worst relative error {worst:.2e}", g.len());
    }
    Ok(())
}
