//! Attack success rate, PSNR and SSIM on hand-made inputs.
//!
//!     cargo run --release --example metrics

use sraw::image::GrayImage;
use sraw::metrics::{attack_success_rate, psnr, ssim, EvalRecord};

fn record(label: usize, clean: usize, adv: usize) -> EvalRecord {
    EvalRecord { id: String::new(), label, clean_prediction: clean, adversarial_prediction: adv }
}

fn main() -> sraw::Result<()> {
    // Only initially correct samples count; two of three flip.
    let records = [record(0, 0, 1), record(1, 1, 1), record(2, 2, 0), record(3, 1, 2)];
    println!("ASR = {:?}", attack_success_rate(&records)?);
    println!("ASR with nothing classified correctly = {:?}", attack_success_rate(&[record(0, 1, 1)])?);

    let flat = GrayImage::filled(32, 32, 0.5)?;
    let brighter = GrayImage::filled(32, 32, 0.6)?;
    println!("PSNR for MSE 0.01 = {:.3} dB, identical = {}", psnr(&flat, &brighter)?, psnr(&flat, &flat)?);

    let ramp = GrayImage::new(32, 32, (0..1024).map(|p| (p % 32) as f64 / 31.0).collect())?;
    for shift in [0usize, 1, 2, 4] {
        let moved = GrayImage::new(32, 32, (0..1024usize).map(|p| ((p % 32).saturating_sub(shift)) as f64 / 31.0).collect())?;
        println!("ramp shifted by {shift} px: SSIM {:.4}, PSNR {:.2} dB", ssim(&ramp, &moved)?, psnr(&ramp, &moved)?);
    }
    Ok(())
}
