//! Joint teacher/student training on a synthetic dataset.
//!
//! cargo run --release --example train_kd -- [n_pairs] [epochs] [seed]

use std::time::Instant;

use kdmsi::data::{generate_synthetic_dataset, SynthSpec};
use kdmsi::kd::{train_kd, KdTrainConfig};
use kdmsi::models::SiameseConfig;

fn main() -> kdmsi::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(200) as usize;
    let epochs = args.get(1).copied().unwrap_or(20) as usize;
    let seed = args.get(2).copied().unwrap_or(0);

    let samples = generate_synthetic_dataset(&SynthSpec::default(), n, seed)?;
    let config = KdTrainConfig {
        epochs,
        ..KdTrainConfig::default()
    };
    let start = Instant::now();
    let outcome = train_kd(&samples, &samples, &SiameseConfig::default(), &config, seed)?;
    println!("epoch  l_cls   l_kd    student_ciou  teacher_ciou");
    for r in &outcome.history {
        println!(
            "{:>5}  {:.4}  {:.4}  {:.4}        {:.4}",
            r.epoch, r.l_cls, r.l_kd, r.eval_ciou, r.teacher_ciou
        );
    }
    println!(
        "best student ciou {:.4} (epoch {}), best teacher-CAM ciou {:.4}, {:.1}s",
        outcome.best_ciou,
        outcome.best_epoch,
        outcome.best_teacher_ciou(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
