use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kdmsi::config::ExperimentConfig;
use kdmsi::pipeline::{Run, Stage, StageError};

const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(version, about = "Weakly supervised change detection: KD + multiscale sigmoid inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or ingest and tile) the dataset and write the train/val/test splits.
    Synth,
    /// Jointly train the teacher and student networks.
    TrainKd,
    /// Multiscale sigmoid inference over train/val plus the stage comparison table.
    Infer,
    /// Threshold the inferred maps into pseudo labels.
    Pseudo,
    /// Train the segmentation network on the pseudo labels.
    TrainSeg,
    /// Score the segmentation network on the test split.
    Eval,
    /// Run every stage in order.
    Pipeline {
        /// Resume from this stage, reusing earlier artifacts.
        #[arg(long, default_value = "synth")]
        stage_from: Stage,
    },
    /// Six-panel probability-map figures for the given sample ids.
    Figure { ids: Vec<String> },
}

fn fail(e: &StageError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.stage.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_CONFIG);
            }
        },
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.output.dir = out;
    }
    let run = Run::new(config);

    let stage = match cli.command {
        Command::Synth => Stage::Synth,
        Command::TrainKd => Stage::TrainKd,
        Command::Infer => Stage::Infer,
        Command::Pseudo => Stage::Pseudo,
        Command::TrainSeg => Stage::TrainSeg,
        Command::Eval => Stage::Eval,
        Command::Pipeline { stage_from } => {
            if stage_from == Stage::Figure {
                eprintln!("error: figure is not a pipeline stage");
                return ExitCode::from(EXIT_CONFIG);
            }
            return match run.pipeline(stage_from) {
                Ok(report) => {
                    if let Ok(t) = run.read_stage_table() {
                        println!("teacher_cam  student  student+MI  student+MSI   (change IoU, train split)");
                        println!(
                            "{:<11.4}  {:<7.4}  {:<10.4}  {:.4}",
                            t.teacher_cam, t.student, t.student_mi, t.student_msi
                        );
                    }
                    println!("{}", serde_json::to_string_pretty(&report).expect("report serialises"));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            };
        }
        Command::Figure { ids } => {
            return match run.figure(&ids) {
                Ok(outcome) => {
                    for p in &outcome.written {
                        println!("{}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(source) => fail(&StageError {
                    stage: Stage::Figure,
                    source,
                }),
            };
        }
    };
    match run.run_stage(stage) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
