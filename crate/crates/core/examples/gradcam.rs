//! Grad-CAM heatmaps for a clean chip and its SRAW adversarial, written as
//! 8-bit PGMs next to the chips.
//!
//!     cargo run --release --example gradcam -- [out_dir]

mod common;

use sraw::attack::{sraw_attack, SrawConfig};
use sraw::data::save_pgm;
use sraw::image::GrayImage;
use sraw::net::grad_cam;

fn main() -> sraw::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "sraw-example-gradcam".into()));
    std::fs::create_dir_all(&out).map_err(|e| sraw::Error::Io { path: out.clone(), source: e })?;
    let (train_set, test_set) = common::split(9);
    let model = common::quick_model(&train_set, &test_set, &[6, 12, 24], 9);

    for chip in test_set.iter().take(3) {
        let adv = sraw_attack(&model, &chip.image, chip.label, &chip.mask, &SrawConfig::default())?;
        for (tag, image) in [("clean", &chip.image), ("sraw", &adv.adversarial)] {
            let heat = GrayImage::new(SIDE, SIDE, grad_cam(&model, image, chip.label)?.into_data())?;
            // Share of the heatmap mass that falls on the target mask.
            let on_target: f64 = heat.data().iter().zip(chip.mask.data()).filter(|(_, m)| **m).map(|(v, _)| v).sum();
            let total: f64 = heat.data().iter().sum();
            println!("{} {tag}: {:.0}% of the heat on the target", chip.id, 100.0 * on_target / total.max(f64::MIN_POSITIVE));
            save_pgm(image, out.join(format!("{}_{tag}.pgm", chip.id)), 16)?;
            save_pgm(&heat, out.join(format!("{}_{tag}_cam.pgm", chip.id)), 8)?;
        }
    }
    println!("heatmaps written to {}", out.display());
    Ok(())
}

use common::SIDE;
