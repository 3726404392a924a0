//! A miniature reduction-factor sweep: short trainings over the fixed-L and
//! fixed-ρ grids on a 32×32 corpus, reporting SSIM per cell.

use unfold_mri::experiments::{default_sweep_grid, plan_sweep, train_and_evaluate, Corpus, CorpusConfig};
use unfold_mri::kspace::reduction_factor;
use unfold_mri::metrics::Stage;
use unfold_mri::training::TrainConfig;
use unfold_mri::unet::UNetConfig;

fn main() -> unfold_mri::Result<()> {
    let corpus = CorpusConfig {
        n: 32,
        train_count: 48,
        test_count: 12,
        ..CorpusConfig::default()
    };
    let data = Corpus::generate(&corpus)?;
    let config = TrainConfig {
        epochs: 15,
        ..TrainConfig::default()
    };
    let unet = UNetConfig::new(32, 2, 8)?;
    println!("{:>4} {:>4} {:>6} {:>9} {:>9}", "rho", "L", "R", "aliased", "corrected");
    for (_, mask) in plan_sweep(corpus.n, &default_sweep_grid())? {
        let cell = train_and_evaluate::<f32>(&data.train, &data.test, &mask, &config, unet, |_| Ok(()))?;
        println!(
            "{:>4} {:>4} {:>6.2} {:>9.4} {:>9.4}",
            mask.rho,
            mask.low_lines,
            reduction_factor(&mask),
            cell.report.mean_ssim(Stage::Aliased).unwrap(),
            cell.report.mean_ssim(Stage::Corrected).unwrap()
        );
    }
    Ok(())
}
