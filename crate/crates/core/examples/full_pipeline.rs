//! Every stage end to end on a small synthetic set, artifacts under a temp dir.
//!
//! cargo run --release --example full_pipeline -- [out_dir]

use kdmsi::config::ExperimentConfig;
use kdmsi::pipeline::{Run, Stage};

const CONFIG: &str = r#"
seed = 3

[dataset]
count = 80

[kd]
epochs = 4

[seg.train]
epochs = 4
batch_size = 8
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut config = ExperimentConfig::from_toml_str(CONFIG)?;
    config.output.dir = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("kdmsi-pipeline"));

    let run = Run::new(config);
    let report = run.pipeline(Stage::Synth)?;
    let t = run.read_stage_table()?;
    println!("stage table @ {:.2}: teacher {:.4}  student {:.4}  MI {:.4}  MSI {:.4}", t.threshold, t.teacher_cam, t.student, t.student_mi, t.student_msi);
    println!("test: ciou {:.4}  f1 {:.4}  oa {:.4}", report.ciou, report.f1_change, report.oa);
    println!("artifacts in {}", run.layout.root.display());
    Ok(())
}
