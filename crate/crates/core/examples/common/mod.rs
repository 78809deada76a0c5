//! Shared setup for the examples: a small synthetic split and a classifier
//! trained on it in a few seconds.
#![allow(dead_code)]

use sraw::data::{generate_synthetic_dataset, train_test_split, Chip};
use sraw::image::GrayImage;
use sraw::net::{train, Arch, NetParams, TrainConfig};

pub const SIDE: usize = 32;
pub const CLASSES: usize = 4;

pub fn split(seed: u64) -> (Vec<Chip>, Vec<Chip>) {
    let chips = generate_synthetic_dataset(CLASSES, 40, SIDE, seed).expect("generate chips");
    train_test_split(&chips, 0.25, seed).expect("split chips")
}

pub fn pairs(chips: &[Chip]) -> Vec<(&GrayImage, usize)> {
    chips.iter().map(|c| (&c.image, c.label)).collect()
}

pub fn quick_model(train_set: &[Chip], test_set: &[Chip], widths: &[usize], seed: u64) -> NetParams {
    let arch = Arch::new(widths.to_vec(), CLASSES, SIDE).expect("architecture");
    let config = TrainConfig { epochs: 10, ..Default::default() };
    let (params, report) = train(&pairs(train_set), &pairs(test_set), arch, &config, seed).expect("training");
    println!(
        "trained {widths:?}: test accuracy {:.1}%",
        100.0 * report.validation_accuracy.unwrap_or(f64::NAN)
    );
    params
}
