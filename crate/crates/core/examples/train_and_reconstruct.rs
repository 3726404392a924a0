//! Trains the U-net on aliased/clean phantom pairs and compares the three
//! reconstruction stages on held-out phantoms.
//!
//! `cargo run --release --example train_and_reconstruct` runs a small
//! configuration in about a minute; add `desk` for the 64×64, 200-image,
//! 150-epoch setup.

use unfold_mri::experiments::{train_and_evaluate, Corpus, CorpusConfig};
use unfold_mri::kspace::{build_mask, reduction_factor};
use unfold_mri::metrics::Stage;
use unfold_mri::training::TrainConfig;
use unfold_mri::unet::UNetConfig;

fn main() -> unfold_mri::Result<()> {
    let desk = std::env::args().any(|a| a == "desk");
    let (corpus, unet, epochs) = if desk {
        (CorpusConfig::default(), UNetConfig::default(), 150)
    } else {
        let c = CorpusConfig {
            n: 32,
            train_count: 64,
            test_count: 16,
            ..CorpusConfig::default()
        };
        (c, UNetConfig::new(32, 2, 8)?, 40)
    };
    let data = Corpus::generate(&corpus)?;
    let mask = build_mask(corpus.n, 4, 4)?;
    println!(
        "{} training / {} test phantoms at {n}x{n}, R = {:.2}",
        data.train.len(),
        data.test.len(),
        reduction_factor(&mask),
        n = corpus.n
    );
    let config = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let cell = train_and_evaluate::<f32>(&data.train, &data.test, &mask, &config, unet, |s| {
        if s.epoch % 10 == 0 {
            println!("epoch {:>4}  loss {:.5}", s.epoch, s.loss_history.last().unwrap());
        }
        Ok(())
    })?;
    for stage in Stage::ALL {
        println!(
            "{:<10} mse {:.5}  ssim {:.4}",
            stage.name(),
            cell.report.mean_mse(stage).unwrap(),
            cell.report.mean_ssim(stage).unwrap()
        );
    }
    Ok(())
}
