//! Renders the Shepp-Logan head and a few random corpus phantoms as PGM.

use std::path::PathBuf;

use unfold_mri::io::write_pgm;
use unfold_mri::phantom::{generate_dataset_specs, render_phantom, shepp_logan_with_anomalies};

fn main() -> unfold_mri::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("unfold-mri-phantoms"));
    let n = 128;
    write_pgm(&out.join("shepp_logan.pgm"), &render_phantom(&shepp_logan_with_anomalies(), n)?)?;
    for (i, spec) in generate_dataset_specs(6, 7).iter().enumerate() {
        let img = render_phantom(spec, n)?;
        println!(
            "phantom {i}: {} base ellipses, {} anomalies, mean {:.3}",
            spec.base.len(),
            spec.anomalies.len(),
            img.data().iter().sum::<f64>() / (n * n) as f64
        );
        write_pgm(&out.join(format!("phantom_{i}.pgm")), &img)?;
    }
    println!("wrote images to {}", out.display());
    Ok(())
}
