//! FGSM, PGD and MI-FGSM at the same L-infinity budget on one classifier,
//! with success rate and image quality per method.
//!
//!     cargo run --release --example pixel_baselines

mod common;

use sraw::attack::{pixel_attack, PixelAttackConfig, PixelVariant};
use sraw::metrics::{attack_success_rate, quality, EvalRecord};

fn main() -> sraw::Result<()> {
    let (train_set, test_set) = common::split(6);
    let model = common::quick_model(&train_set, &test_set, &[6, 12, 24], 6);

    let runs = [
        ("fgsm", PixelAttackConfig { variant: PixelVariant::Fgsm, iterations: 1, random_start: false, ..Default::default() }),
        ("pgd", PixelAttackConfig::default()),
        ("mifgsm", PixelAttackConfig { variant: PixelVariant::Mifgsm, random_start: false, ..Default::default() }),
    ];
    println!("{:<8} {:>6} {:>9} {:>7} {:>9}", "method", "ASR", "PSNR dB", "SSIM", "max |d|");
    for (name, base) in runs {
        let (mut records, mut psnr, mut ssim, mut linf) = (Vec::new(), 0.0, 0.0, 0.0f64);
        for (i, chip) in test_set.iter().enumerate() {
            let r = pixel_attack(&model, &chip.image, chip.label, &PixelAttackConfig { seed: i as u64, ..base.clone() })?;
            let q = quality(&chip.image, &r.adversarial)?;
            psnr += q.psnr_db;
            ssim += q.ssim;
            linf = chip.image.data().iter().zip(r.adversarial.data()).map(|(a, b)| (a - b).abs()).fold(linf, f64::max);
            records.push(EvalRecord {
                id: chip.id.clone(),
                label: chip.label,
                clean_prediction: r.clean_prediction,
                adversarial_prediction: r.adversarial_prediction,
            });
        }
        let n = test_set.len() as f64;
        let asr = attack_success_rate(&records)?.unwrap_or(f64::NAN);
        println!("{name:<8} {:>5.1}% {:>9.2} {:>7.4} {:>9.5}", 100.0 * asr, psnr / n, ssim / n, linf);
    }
    println!("budget 8/255 = {:.5}", 8.0 / 255.0);
    Ok(())
}
