//! Pseudo labels from probability maps, and the validation threshold sweep.
//!
//! cargo run --release --example pseudo_labels

use kdmsi::data::{generate_synthetic_dataset, SynthSpec};
use kdmsi::kd::{ChangeProbabilityMap, Provenance};
use kdmsi::msi::{pseudo_label, select_threshold, threshold_grid};
use kdmsi::tensor::Tensor;

fn main() -> kdmsi::Result<()> {
    let samples = generate_synthetic_dataset(&SynthSpec::default(), 12, 5)?;

    // stand-in for MSI output: a blurred, noisy version of the truth
    let maps: Vec<_> = samples
        .iter()
        .map(|s| {
            let (h, w) = (s.mask.height(), s.mask.width());
            let t = Tensor::from_fn(1, h, w, |_, y, x| {
                let mut acc = 0.0;
                let mut n = 0.0;
                for dy in -3i32..=3 {
                    for dx in -3i32..=3 {
                        let (yy, xx) = (y as i32 + dy, x as i32 + dx);
                        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                            acc += s.mask.get(yy as usize, xx as usize) as f64;
                            n += 1.0;
                        }
                    }
                }
                0.1 + 0.7 * acc / n
            });
            (ChangeProbabilityMap::from_tensor(t, Provenance::Msi).unwrap(), s.mask.clone())
        })
        .collect();

    let p = pseudo_label(&maps[0].0, 0.3)?;
    println!("{}: {} pseudo-change pixels at threshold {}", samples[0].pair.id, p.labels.count_changed(), p.threshold);
    println!("{}: {} true change pixels", samples[0].pair.id, samples[0].mask.count_changed());

    let (best, scores) = select_threshold(&maps, &threshold_grid())?;
    for (t, iou) in scores {
        println!("  threshold {t:.1}  change IoU {iou:.4}{}", if t == best { "  <- selected" } else { "" });
    }
    Ok(())
}
