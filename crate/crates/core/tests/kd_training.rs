use kdmsi::data::{generate_synthetic_dataset, SynthSpec};
use kdmsi::kd::{train_kd, KdTrainConfig};
use kdmsi::models::{BackboneConfig, Parameterized, SiameseConfig, SiameseNet};
use kdmsi::seed::derive_seed;

fn small_model() -> SiameseConfig {
    SiameseConfig {
        backbone: BackboneConfig {
            channels: vec![4, 8, 8, 8],
            ..BackboneConfig::default()
        },
        ..SiameseConfig::default()
    }
}

fn params(net: &SiameseNet) -> Vec<f64> {
    let mut out = Vec::new();
    net.visit_params("", &mut |_, p| out.extend_from_slice(&p.value));
    out
}

#[test]
fn zero_lambda_leaves_student_at_initialisation() {
    let data = generate_synthetic_dataset(&SynthSpec::default(), 12, 1).unwrap();
    let config = KdTrainConfig {
        lambda: 0.0,
        epochs: 2,
        batch_size: 4,
        ..KdTrainConfig::default()
    };
    let out = train_kd(&data, &data, &small_model(), &config, 5).unwrap();
    let fresh = SiameseNet::new(&small_model(), derive_seed(5, "student")).unwrap();
    assert_eq!(params(&out.student), params(&fresh));
    let fresh_teacher = SiameseNet::new(&small_model(), derive_seed(5, "teacher")).unwrap();
    assert_ne!(params(&out.teacher), params(&fresh_teacher));
}

#[test]
fn training_reduces_both_losses() {
    let data = generate_synthetic_dataset(&SynthSpec::default(), 24, 2).unwrap();
    let config = KdTrainConfig {
        epochs: 6,
        batch_size: 4,
        patience: 100,
        ..KdTrainConfig::default()
    };
    let out = train_kd(&data, &data, &small_model(), &config, 2).unwrap();
    let (first, last) = (&out.history[0], out.history.last().unwrap());
    assert!(last.l_cls < first.l_cls, "{} -> {}", first.l_cls, last.l_cls);
    assert!(last.l_kd < first.l_kd, "{} -> {}", first.l_kd, last.l_kd);
    assert!(out.history.iter().all(|r| r.l.is_finite()));
}

#[test]
fn same_seed_same_history() {
    let data = generate_synthetic_dataset(&SynthSpec::default(), 8, 3).unwrap();
    let config = KdTrainConfig {
        epochs: 2,
        batch_size: 4,
        ..KdTrainConfig::default()
    };
    let a = train_kd(&data, &data, &small_model(), &config, 9).unwrap();
    let b = train_kd(&data, &data, &small_model(), &config, 9).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(params(&a.student), params(&b.student));
}

#[test]
fn history_lr_follows_poly_decay() {
    let data = generate_synthetic_dataset(&SynthSpec::default(), 8, 4).unwrap();
    let config = KdTrainConfig {
        epochs: 4,
        batch_size: 4,
        patience: 100,
        ..KdTrainConfig::default()
    };
    let out = train_kd(&data, &data, &small_model(), &config, 4).unwrap();
    // 2 steps per epoch, 8 total
    for r in &out.history {
        let t = (2 * r.epoch) as f64 / 8.0;
        let want = config.initial_lr * (1.0 - t).powf(config.poly_power);
        assert!((r.lr - want).abs() < 1e-15, "epoch {}: {} vs {want}", r.epoch, r.lr);
    }
}
