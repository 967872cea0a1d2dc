//! Trains a small teacher/student pair, then compares single-scale, MI and MSI maps.
//!
//! cargo run --release --example msi_inference -- [n_pairs] [epochs]

use kdmsi::data::{generate_synthetic_dataset, SynthSpec};
use kdmsi::kd::{train_kd, ChangeProbabilityMap, KdTrainConfig};
use kdmsi::metrics::{class_iou, confusion, Class, ConfusionMatrix};
use kdmsi::models::SiameseConfig;
use kdmsi::msi::{multiscale_inference, multiscale_sigmoid_inference, ScaleSet};

fn main() -> kdmsi::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(120);
    let epochs = args.get(1).copied().unwrap_or(8);

    let samples = generate_synthetic_dataset(&SynthSpec::default(), n, 11)?;
    let config = KdTrainConfig {
        epochs,
        ..KdTrainConfig::default()
    };
    let outcome = train_kd(&samples, &samples, &SiameseConfig::default(), &config, 11)?;
    let student = &outcome.student;

    let scales = ScaleSet::default();
    println!("scales {:?}, flip {}, {} evaluations per pair", scales.scales, scales.flip, scales.evaluations());

    let mut cms = [ConfusionMatrix::default(); 3];
    for s in &samples {
        let (h, w) = (s.pair.height(), s.pair.width());
        let single = ChangeProbabilityMap::sigmoid_of(&student.forward_pair(&s.pair)?).resize(h, w);
        let mi = multiscale_inference(student, &s.pair, &scales)?;
        let msi = multiscale_sigmoid_inference(student, &s.pair, &scales)?;
        for (cm, m) in cms.iter_mut().zip([&single, &mi, &msi]) {
            *cm += confusion(&m.binarize(config.eval_threshold), &s.mask)?;
        }
    }
    for (name, cm) in ["single scale", "MI (sum, then normalise)", "MSI (mean of sigmoids)"].iter().zip(&cms) {
        println!("{name:<26} change IoU {:.4}", class_iou(cm, Class::Change));
    }
    Ok(())
}
