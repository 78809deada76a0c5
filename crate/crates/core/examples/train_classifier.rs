//! Trains the default three-stage classifier on a synthetic dataset and
//! round-trips the weights through the on-disk format.
//!
//!     cargo run --release --example train_classifier

use sraw::data::{generate_synthetic_dataset, train_test_split};
use sraw::data::Chip;
use sraw::image::GrayImage;
use sraw::net::{accuracy, load_params, save_params, train, Arch, TrainConfig};

fn main() -> sraw::Result<()> {
    let chips = generate_synthetic_dataset(8, 40, 64, 1)?;
    let (train_set, test_set) = train_test_split(&chips, 0.2, 1)?;

    let arch = Arch::new(vec![8, 16, 32], 8, 64)?;
    let config = TrainConfig { epochs: 10, ..Default::default() };
    let (params, report) = train(&pairs(&train_set), &pairs(&test_set), arch, &config, 2)?;
    for (epoch, loss) in report.epoch_loss.iter().enumerate() {
        println!("epoch {:2}: mean loss {loss:.4}", epoch + 1);
    }
    println!("{} parameters, test accuracy {:.1}%", params.num_parameters(), 100.0 * accuracy(&params, &pairs(&test_set))?);

    let path = std::env::temp_dir().join("sraw-example-base.bin");
    save_params(&params, &path)?;
    assert_eq!(load_params(&path)?, params);
    println!("weights saved to {}", path.display());
    Ok(())
}

fn pairs(chips: &[Chip]) -> Vec<(&GrayImage, usize)> {
    chips.iter().map(|c| (&c.image, c.label)).collect()
}
