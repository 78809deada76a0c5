//! Black-box transfer: SRAW examples crafted on one classifier, evaluated on
//! a second classifier with different widths and seed.
//!
//!     cargo run --release --example transfer

mod common;

use sraw::attack::{sraw_attack, SrawConfig};
use sraw::harness::transfer_matrix;
use sraw::image::GrayImage;

fn main() -> sraw::Result<()> {
    let (train_set, test_set) = common::split(8);
    let models = [
        common::quick_model(&train_set, &test_set, &[6, 12, 24], 1),
        common::quick_model(&train_set, &test_set, &[8, 16], 2),
    ];
    let clean: Vec<(GrayImage, usize)> = test_set.iter().map(|c| (c.image.clone(), c.label)).collect();

    let mut sets = vec![clean];
    for model in &models {
        let mut adv = Vec::new();
        for (i, chip) in test_set.iter().enumerate() {
            let cfg = SrawConfig { iterations: 30, seed: i as u64, ..Default::default() };
            adv.push((sraw_attack(model, &chip.image, chip.label, &chip.mask, &cfg)?.adversarial, chip.label));
        }
        sets.push(adv);
    }
    let acc = transfer_matrix(&sets, &models)?;
    println!("{:<16} {:>8} {:>8}", "images", "model 0", "model 1");
    for (name, row) in ["clean", "SRAW on model 0", "SRAW on model 1"].iter().zip(&acc) {
        println!("{name:<16} {:>7.1}% {:>7.1}%", 100.0 * row[0], 100.0 * row[1]);
    }
    Ok(())
}
