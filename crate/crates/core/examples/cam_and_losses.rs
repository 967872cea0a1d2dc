//! One joint forward pass: teacher CAM, student sigmoid map and the three losses.
//!
//! cargo run --release --example cam_and_losses

use kdmsi::data::{generate_synthetic_dataset, SynthSpec};
use kdmsi::kd::{classification_logit, classification_loss, kd_forward, kd_loss, total_loss};
use kdmsi::models::{SiameseConfig, SiameseNet};

fn print_map(name: &str, values: &[f64], w: usize) {
    println!("{name}");
    for row in values.chunks(w) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:6.3}")).collect();
        println!("  {}", cells.join(" "));
    }
}

fn main() -> kdmsi::Result<()> {
    let samples = generate_synthetic_dataset(&SynthSpec::default(), 4, 3)?;
    let config = SiameseConfig::default();
    let teacher = SiameseNet::new(&config, 1)?;
    let student = SiameseNet::new(&config, 2)?;
    let lambda = 10.0;

    for s in &samples {
        let f = kd_forward(&teacher, &student, &s.pair)?;
        let y = s.label.as_f64();
        let l_cls = classification_loss(classification_logit(&f.g_teacher), y);
        let l_kd = kd_loss(&f.cam, &f.student_prob)?;
        println!(
            "{}  y={y}  L_cls={l_cls:.4}  L_kd={l_kd:.4}  L={:.4}",
            s.pair.id,
            total_loss(l_cls, l_kd, lambda)
        );
    }

    let f = kd_forward(&teacher, &student, &samples[0].pair)?;
    print_map("teacher CAM", f.cam.values(), f.cam.width());
    print_map("student sigmoid", f.student_prob.values(), f.student_prob.width());
    Ok(())
}
