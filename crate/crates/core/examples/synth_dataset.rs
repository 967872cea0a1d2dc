//! Generates a synthetic change-detection set and writes it as PNGs.
//!
//! cargo run --release --example synth_dataset -- [n_pairs] [seed] [out_dir]

use std::path::PathBuf;

use kdmsi::data::{generate_synthetic_dataset, save_dataset_dir, ImageLabel, SynthSpec};

fn main() -> kdmsi::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n = args.first().and_then(|a| a.parse().ok()).unwrap_or(40);
    let seed = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(0);
    let out = args.get(2).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("kdmsi-synth"));

    let spec = SynthSpec::default();
    let samples = generate_synthetic_dataset(&spec, n, seed)?;
    let changed = samples.iter().filter(|s| s.label == ImageLabel::Change).count();
    let pixels: usize = samples.iter().map(|s| s.mask.count_changed()).sum();
    let total: usize = samples.iter().map(|s| s.mask.len()).sum();

    println!("{} pairs at {}x{}", samples.len(), spec.height, spec.width);
    println!("  change pairs    {changed}");
    println!("  no-change pairs {}", samples.len() - changed);
    println!("  changed pixels  {:.2}%", 100.0 * pixels as f64 / total as f64);

    let root = save_dataset_dir(&out, &samples)?;
    println!("written to {}", root.display());
    Ok(())
}
