//! White-box SRAW against a freshly trained classifier, next to the
//! random-warp control under the same budgets.
//!
//!     cargo run --release --example sraw_attack

mod common;

use sraw::attack::{random_warp_control, sraw_attack, Perturbation, SrawConfig};
use sraw::metrics::{attack_success_rate, ssim, EvalRecord};
use sraw::rng::stream;

fn main() -> sraw::Result<()> {
    let (train_set, test_set) = common::split(5);
    let model = common::quick_model(&train_set, &test_set, &[6, 12, 24], 5);
    let config = SrawConfig { iterations: 30, ..Default::default() };

    let (mut sraw_records, mut random_records) = (Vec::new(), Vec::new());
    for (i, chip) in test_set.iter().take(12).enumerate() {
        let cfg = SrawConfig { seed: i as u64, ..config.clone() };
        let r = sraw_attack(&model, &chip.image, chip.label, &chip.mask, &cfg)?;
        let Perturbation::Offsets(xi) = &r.perturbation else { unreachable!() };
        let largest = xi.offsets.iter().map(|d| d[0].hypot(d[1])).fold(0.0, f64::max);
        println!(
            "{}: label {} -> {} | loss {:.3} -> {:.3} | {} queries | max offset {largest:.2} px | SSIM {:.3}",
            chip.id,
            chip.label,
            r.adversarial_prediction,
            r.loss_trace[0],
            r.loss_trace.last().unwrap(),
            r.query_count,
            ssim(&chip.image, &r.adversarial)?
        );
        let record = |p| EvalRecord { id: chip.id.clone(), label: chip.label, clean_prediction: r.clean_prediction, adversarial_prediction: p };
        sraw_records.push(record(r.adversarial_prediction));
        let control = random_warp_control(&model, &chip.image, chip.label, &chip.mask, &cfg, &mut stream(i as u64, 1))?;
        random_records.push(record(control.adversarial_prediction));
    }
    let show = |a: Option<f64>| a.map_or("n/a".into(), |v| format!("{:.1}%", 100.0 * v));
    println!("SRAW ASR {} | random warp ASR {}", show(attack_success_rate(&sraw_records)?), show(attack_success_rate(&random_records)?));
    Ok(())
}
