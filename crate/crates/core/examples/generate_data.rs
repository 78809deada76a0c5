//! Generates a synthetic SAR-like dataset, writes it as 16-bit PGM chips with
//! masks and a manifest, then loads it back through the manifest.
//!
//!     cargo run --release --example generate_data -- [out_dir]

use sraw::data::{generate_synthetic_dataset_with, load_dataset, save_dataset, SynthOptions};

fn main() -> sraw::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "sraw-example-data".into());
    let options = SynthOptions { speckle_correlation: 5.0, target_looks: 1.0 };
    let chips = generate_synthetic_dataset_with(8, 10, 64, 7, &options)?;

    for chip in chips.iter().step_by(10) {
        let fg: Vec<f64> = chip.image.data().iter().zip(chip.mask.data()).filter(|(_, m)| **m).map(|(v, _)| *v).collect();
        let bg: Vec<f64> = chip.image.data().iter().zip(chip.mask.data()).filter(|(_, m)| !**m).map(|(v, _)| *v).collect();
        println!(
            "{} class {}: {} mask pixels, mean target {:.3}, mean clutter {:.3}",
            chip.id,
            chip.label,
            fg.len(),
            fg.iter().sum::<f64>() / fg.len() as f64,
            bg.iter().sum::<f64>() / bg.len() as f64
        );
    }

    let manifest = save_dataset(&chips, &out)?;
    let back = load_dataset(&manifest)?;
    let worst = chips
        .iter()
        .zip(&back)
        .flat_map(|(a, b)| a.image.data().iter().zip(b.image.data()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    println!("wrote {} chips to {}; reload error {worst:.2e}", back.len(), manifest.display());
    Ok(())
}
