//! Teacher CAM vs student vs student+MI vs student+MSI change-IoU on a
//! synthetic dataset, for one or more seeds.
//!
//! cargo run --release --example kd_ablation -- [n_pairs] [epochs] [seeds...]

use std::time::Instant;

use kdmsi::data::{generate_synthetic_dataset, PixelMask, Sample, SynthSpec};
use kdmsi::kd::{kd_forward, train_kd, ChangeProbabilityMap, KdTrainConfig};
use kdmsi::metrics::{class_iou, confusion, Class, ConfusionMatrix};
use kdmsi::models::{SiameseConfig, SiameseNet};
use kdmsi::msi::{multiscale_inference, multiscale_sigmoid_inference, ScaleSet};

fn iou(maps: &[(ChangeProbabilityMap, &PixelMask)], thr: f64) -> kdmsi::Result<f64> {
    let mut cm = ConfusionMatrix::default();
    for (m, gt) in maps {
        cm += confusion(&m.resize(gt.height(), gt.width()).binarize(thr), gt)?;
    }
    Ok(class_iou(&cm, Class::Change))
}

fn stage_maps<'a>(
    teacher: &SiameseNet,
    student: &SiameseNet,
    samples: &'a [Sample],
) -> kdmsi::Result<[Vec<(ChangeProbabilityMap, &'a PixelMask)>; 4]> {
    let scales = ScaleSet::default();
    let mut out: [Vec<_>; 4] = Default::default();
    for s in samples {
        let f = kd_forward(teacher, student, &s.pair)?;
        out[0].push((f.cam, &s.mask));
        out[1].push((f.student_prob, &s.mask));
        out[2].push((multiscale_inference(student, &s.pair, &scales)?, &s.mask));
        out[3].push((multiscale_sigmoid_inference(student, &s.pair, &scales)?, &s.mask));
    }
    Ok(out)
}

fn main() -> kdmsi::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(200) as usize;
    let epochs = args.get(1).copied().unwrap_or(20) as usize;
    let seeds: Vec<u64> = if args.len() > 2 { args[2..].to_vec() } else { vec![0, 1, 2] };

    let config = KdTrainConfig {
        epochs,
        ..KdTrainConfig::default()
    };
    let thr = config.eval_threshold;
    println!("seed  teacher  student  student+MI  student+MSI  secs");
    for seed in seeds {
        let start = Instant::now();
        let samples = generate_synthetic_dataset(&SynthSpec::default(), n, seed)?;
        let outcome = train_kd(&samples, &samples, &SiameseConfig::default(), &config, seed)?;
        let maps = stage_maps(&outcome.teacher, &outcome.student, &samples)?;
        let row: Vec<f64> = maps.iter().map(|m| iou(m, thr)).collect::<kdmsi::Result<_>>()?;
        println!(
            "{seed:>4}  {:.4}   {:.4}   {:.4}      {:.4}       {:.0}",
            row[0],
            row[1],
            row[2],
            row[3],
            start.elapsed().as_secs_f64()
        );
        if std::env::var_os("KD_SWEEP").is_some() {
            for t in [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7] {
                let r: Vec<f64> = maps.iter().map(|m| iou(m, t)).collect::<kdmsi::Result<_>>()?;
                println!("  thr {t:.1}: {:.4} {:.4} {:.4} {:.4}", r[0], r[1], r[2], r[3]);
            }
        }
    }
    Ok(())
}
