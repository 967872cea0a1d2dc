//! Six-panel figure rows (pre, post, truth, CAM, student, MSI) for a few samples.
//!
//! cargo run --release --example figure_panels -- [out_dir]

use kdmsi::data::{generate_synthetic_dataset, SynthSpec};
use kdmsi::figure::write_figures;
use kdmsi::kd::{train_kd, KdTrainConfig};
use kdmsi::models::SiameseConfig;
use kdmsi::msi::ScaleSet;

fn main() -> kdmsi::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("kdmsi-figures"));
    let samples = generate_synthetic_dataset(&SynthSpec::default(), 60, 9)?;
    let config = KdTrainConfig {
        epochs: 4,
        ..KdTrainConfig::default()
    };
    let kd = train_kd(&samples, &samples, &SiameseConfig::default(), &config, 9)?;

    let mut ids: Vec<String> = samples.iter().take(3).map(|s| s.pair.id.clone()).collect();
    ids.push("no-such-sample".into());
    let outcome = write_figures(&out, &samples, &ids, &kd.teacher, &kd.student, &ScaleSet::default())?;
    for p in &outcome.written {
        println!("wrote {}", p.display());
    }
    println!("skipped {:?}", outcome.missing);
    Ok(())
}
