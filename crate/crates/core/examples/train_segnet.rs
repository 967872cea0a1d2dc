//! Trains the segmentation network directly on ground-truth masks (an upper bound
//! for pseudo-label training) and reports test metrics.
//!
//! cargo run --release --example train_segnet -- [n_pairs] [epochs]

use kdmsi::data::{generate_synthetic_dataset, SynthSpec};
use kdmsi::metrics::evaluate;
use kdmsi::segnet::{train_segnet, SegNetConfig, SegTrainConfig};

fn main() -> kdmsi::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(120);
    let epochs = args.get(1).copied().unwrap_or(10);

    let data = generate_synthetic_dataset(&SynthSpec::default(), n + 20, 21)?;
    let (train, test) = data.split_at(n);
    let targets: Vec<_> = train.iter().map(|s| (s.pair.clone(), s.mask.clone())).collect();
    let config = SegTrainConfig {
        epochs,
        ..SegTrainConfig::default()
    };
    let outcome = train_segnet(&targets, test, &SegNetConfig::default(), &config, 21)?;
    for r in &outcome.history {
        println!("epoch {:>3}  loss {:.4}  val ciou {:.4}  lr {:.5}", r.epoch, r.loss, r.val_ciou.unwrap_or(f64::NAN), r.lr);
    }
    let eval = evaluate(&outcome.best_model, test)?;
    println!("best epoch {}", outcome.best_epoch);
    println!("{}", serde_json::to_string_pretty(&eval.report)?);
    Ok(())
}
