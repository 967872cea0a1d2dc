//! Stage-by-stage orchestration over one run directory.
//!
//! ```text
//! <out>/config.toml
//! <out>/data/{train,val,test}/{A,B,label}/   split.json   meta.json (synthetic)
//! <out>/kd/{teacher,student}.ckpt  history.csv  summary.json
//! <out>/infer/{train,val}/<id>.{png,npy}  stage_table.{csv,json}
//! <out>/pseudo/<id>.png  summary.json
//! <out>/seg/{final,best}.ckpt  history.csv
//! <out>/eval/report.{json,csv}  per_sample.csv  masks/<id>.png
//! <out>/figure/<id>.png
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SegSelect, Setting};
use crate::data::{
    derive_image_label, fit_to_multiple, generate_synthetic_dataset, load_dataset_dir, load_mask_png,
    save_dataset_dir, save_mask_png, split_dataset, DatasetMeta, DatasetSplit, ImagePair, LoadOptions, PixelMask,
    Sample, Normalization, tile_scene,
};
use crate::error::{Error, Result};
use crate::figure::{write_figures, FigureOutcome};
use crate::kd::{
    kd_forward, sweep_combine_modes, train_kd_with, EarlyStopSplit, KdOutcome, Provenance,
};
use crate::metrics::{class_iou, confusion, evaluate, write_sample_rows, Evaluation, Class, ConfusionMatrix, MetricReport};
use crate::models::{Checkpoint, CombineMode, SiameseConfig, SiameseNet};
use crate::msi::{
    load_probability_npy, multiscale_inference, multiscale_sigmoid_inference, pseudo_label, save_probability_npy,
    save_probability_png16, select_threshold, threshold_grid,
};
use crate::seed::derive_seed;
use crate::segnet::{train_segnet, SegNet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Synth,
    TrainKd,
    Infer,
    Pseudo,
    TrainSeg,
    Eval,
    Figure,
}

impl Stage {
    /// The stages `pipeline` runs, in order.
    pub const PIPELINE: [Stage; 6] = [
        Stage::Synth,
        Stage::TrainKd,
        Stage::Infer,
        Stage::Pseudo,
        Stage::TrainSeg,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::TrainKd => "train-kd",
            Stage::Infer => "infer",
            Stage::Pseudo => "pseudo",
            Stage::TrainSeg => "train-seg",
            Stage::Eval => "eval",
            Stage::Figure => "figure",
        }
    }

    /// Process exit code when this stage fails.
    pub fn exit_code(self) -> u8 {
        match self {
            Stage::Synth => 10,
            Stage::TrainKd => 11,
            Stage::Infer => 12,
            Stage::Pseudo => 13,
            Stage::TrainSeg => 14,
            Stage::Eval => 15,
            Stage::Figure => 16,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Stage::Synth, Stage::TrainKd, Stage::Infer, Stage::Pseudo, Stage::TrainSeg, Stage::Eval, Stage::Figure]
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

/// A failure tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

fn in_stage<T>(stage: Stage, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|source| StageError { stage, source })
}

/// Paths inside one run directory.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn data(&self, split: &str) -> PathBuf {
        self.root.join("data").join(split)
    }

    pub fn kd(&self) -> PathBuf {
        self.root.join("kd")
    }

    pub fn infer(&self, split: &str) -> PathBuf {
        self.root.join("infer").join(split)
    }

    pub fn pseudo(&self) -> PathBuf {
        self.root.join("pseudo")
    }

    pub fn seg(&self) -> PathBuf {
        self.root.join("seg")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn figure(&self) -> PathBuf {
        self.root.join("figure")
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Pipeline context: configuration plus the run directory.
#[derive(Clone, Debug)]
pub struct Run {
    pub config: ExperimentConfig,
    pub layout: RunLayout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdSummary {
    pub combine: CombineMode,
    pub sweep: Vec<(CombineMode, f64)>,
    pub best_epoch: usize,
    pub best_student_ciou: f64,
    pub best_teacher_ciou: f64,
}

/// Change-IoU of each probability-map stage on the training split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTable {
    pub threshold: f64,
    pub teacher_cam: f64,
    pub student: f64,
    pub student_mi: f64,
    pub student_msi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoSummary {
    pub threshold: f64,
    pub sweep: Vec<(f64, f64)>,
    /// Change-IoU of the pseudo labels against the training ground truth.
    pub pseudo_ciou: f64,
}

impl Run {
    pub fn new(config: ExperimentConfig) -> Self {
        let layout = RunLayout::new(config.output.dir.clone());
        Run { config, layout }
    }

    fn input_multiple(&self) -> usize {
        self.config
            .model
            .backbone
            .output_stride()
            .max(self.config.seg.net.backbone.output_stride())
    }

    pub fn load_split(&self, split: &str) -> Result<Vec<Sample>> {
        load_dataset_dir(&self.layout.data(split), &self.config.dataset.load_options())
    }

    /// Writes the train/val/test layout, generating or ingesting as configured.
    pub fn synth(&self) -> Result<DatasetSplit> {
        let cfg = &self.config;
        fs::create_dir_all(&self.layout.root)?;
        fs::write(self.layout.root.join("config.toml"), cfg.to_toml_string()?)?;
        let data_seed = derive_seed(cfg.seed, "data");
        let samples = match &cfg.dataset.path {
            None => generate_synthetic_dataset(&cfg.dataset.synthetic, cfg.dataset.count, data_seed)?,
            Some(path) => self.ingest(path)?,
        };
        let multiple = self.input_multiple();
        let samples: Vec<Sample> = samples.iter().map(|s| fit_to_multiple(s, multiple)).collect();
        let ids: Vec<&str> = samples.iter().map(|s| s.pair.id.as_str()).collect();
        let split = split_dataset(&ids, cfg.dataset.split, derive_seed(cfg.seed, "split"))?;
        let data_root = self.layout.root.join("data");
        if data_root.exists() {
            fs::remove_dir_all(&data_root)?;
        }
        for (name, members) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
            let chosen: Vec<&Sample> = members
                .iter()
                .map(|id| samples.iter().find(|s| &s.pair.id == id).expect("split ids come from samples"))
                .collect();
            let dir = self.layout.data(name);
            fs::create_dir_all(&dir)?;
            save_dataset_dir(&dir, chosen)?;
        }
        write_json(&data_root.join("split.json"), &split)?;
        if cfg.dataset.path.is_none() {
            let meta = DatasetMeta {
                spec: cfg.dataset.synthetic.clone(),
                seed: data_seed,
                count: cfg.dataset.count,
                split: split.clone(),
            };
            write_json(&data_root.join("meta.json"), &meta)?;
        }
        let (a, b, c) = split.sizes();
        log::info!("synth: {a} train / {b} val / {c} test");
        Ok(split)
    }

    fn ingest(&self, path: &Path) -> Result<Vec<Sample>> {
        let opts = LoadOptions {
            normalization: Normalization::UnitRange,
            min_change_fraction: self.config.dataset.min_change_fraction,
        };
        let scenes = load_dataset_dir(path, &opts)?;
        let Some(tile) = self.config.dataset.tile else {
            return Ok(scenes);
        };
        let mut out = Vec::new();
        for scene in &scenes {
            for (pair, mask) in tile_scene(&scene.pair, &scene.mask, tile)? {
                let label = derive_image_label(&mask, self.config.dataset.min_change_fraction);
                out.push(Sample { pair, mask, label });
            }
        }
        Ok(out)
    }

    fn siamese_config(&self, combine: CombineMode) -> SiameseConfig {
        SiameseConfig {
            backbone: self.config.model.backbone.clone(),
            combine,
        }
    }

    pub fn train_kd(&self) -> Result<KdSummary> {
        let cfg = &self.config;
        let train = self.load_split("train")?;
        let val = self.load_split("val")?;
        let early = match cfg.kd.early_stop_split {
            EarlyStopSplit::Train => &train,
            EarlyStopSplit::Val => &val,
        };
        let dir = self.layout.kd();
        fs::create_dir_all(&dir)?;
        let seed = derive_seed(cfg.seed, "kd");
        let (combine, outcome, sweep): (CombineMode, KdOutcome, Vec<(CombineMode, f64)>) = match cfg.model.combine {
            Setting::Fixed(mode) => {
                let outcome = train_kd_with(
                    &train,
                    early,
                    &self.siamese_config(mode),
                    &cfg.kd,
                    seed,
                    &mut |record, teacher, student| {
                        log::info!("kd: new best student ciou {:.4} at epoch {}", record.eval_ciou, record.epoch);
                        teacher.to_checkpoint().save(&dir.join("teacher.ckpt"))?;
                        student.to_checkpoint().save(&dir.join("student.ckpt"))
                    },
                )?;
                (mode, outcome, Vec::new())
            }
            Setting::Sweep(_) => {
                sweep_combine_modes(&train, early, &val, &self.siamese_config(CombineMode::default()), &cfg.kd, seed)?
            }
        };
        outcome.teacher.to_checkpoint().save(&dir.join("teacher.ckpt"))?;
        outcome.student.to_checkpoint().save(&dir.join("student.ckpt"))?;
        outcome.write_history_csv(&dir.join("history.csv"))?;
        let summary = KdSummary {
            combine,
            sweep,
            best_epoch: outcome.best_epoch,
            best_student_ciou: outcome.best_ciou,
            best_teacher_ciou: outcome.best_teacher_ciou(),
        };
        write_json(&dir.join("summary.json"), &summary)?;
        Ok(summary)
    }

    pub fn load_kd_models(&self) -> Result<(SiameseNet, SiameseNet)> {
        let dir = self.layout.kd();
        let teacher = SiameseNet::from_checkpoint(&Checkpoint::load(&dir.join("teacher.ckpt"))?)?;
        let student = SiameseNet::from_checkpoint(&Checkpoint::load(&dir.join("student.ckpt"))?)?;
        Ok((teacher, student))
    }

    /// MSI maps for the train and val splits plus the stage-comparison table.
    pub fn infer(&self) -> Result<StageTable> {
        let (teacher, student) = self.load_kd_models()?;
        let scales = self.config.msi.scale_set();
        let threshold = self.config.kd.eval_threshold;
        let mut cms = [ConfusionMatrix::default(); 4];
        for split in ["train", "val"] {
            let samples = self.load_split(split)?;
            let dir = self.layout.infer(split);
            fs::create_dir_all(&dir)?;
            for s in &samples {
                let msi = multiscale_sigmoid_inference(&student, &s.pair, &scales)?;
                save_probability_npy(&dir.join(format!("{}.npy", s.pair.id)), &msi)?;
                save_probability_png16(&dir.join(format!("{}.png", s.pair.id)), &msi)?;
                if split != "train" {
                    continue;
                }
                let (h, w) = (s.pair.height(), s.pair.width());
                let f = kd_forward(&teacher, &student, &s.pair)?;
                let mi = multiscale_inference(&student, &s.pair, &scales)?;
                let maps = [f.cam.resize(h, w), f.student_prob.resize(h, w), mi, msi];
                for (cm, m) in cms.iter_mut().zip(&maps) {
                    *cm += confusion(&m.binarize(threshold), &s.mask)?;
                }
            }
        }
        let iou = |i: usize| class_iou(&cms[i], Class::Change);
        let table = StageTable {
            threshold,
            teacher_cam: iou(0),
            student: iou(1),
            student_mi: iou(2),
            student_msi: iou(3),
        };
        let root = self.layout.root.join("infer");
        write_json(&root.join("stage_table.json"), &table)?;
        let mut w = csv::Writer::from_path(root.join("stage_table.csv"))?;
        w.write_record(["teacher_cam", "student", "student_mi", "student_msi"])?;
        w.write_record([table.teacher_cam, table.student, table.student_mi, table.student_msi].map(|v| v.to_string()))?;
        w.flush()?;
        log::info!("stage table: {table:?}");
        Ok(table)
    }

    pub fn pseudo(&self) -> Result<PseudoSummary> {
        let (threshold, sweep) = match self.config.msi.bg_threshold {
            Setting::Fixed(t) => (t, Vec::new()),
            Setting::Sweep(_) => {
                let val = self.load_split("val")?;
                let mut maps = Vec::with_capacity(val.len());
                for s in val {
                    let m = load_probability_npy(&self.layout.infer("val").join(format!("{}.npy", s.pair.id)), Provenance::Msi)?;
                    maps.push((m, s.mask));
                }
                select_threshold(&maps, &threshold_grid())?
            }
        };
        let train = self.load_split("train")?;
        let dir = self.layout.pseudo();
        fs::create_dir_all(&dir)?;
        let mut cm = ConfusionMatrix::default();
        for s in &train {
            let m = load_probability_npy(&self.layout.infer("train").join(format!("{}.npy", s.pair.id)), Provenance::Msi)?;
            let labels = pseudo_label(&m, threshold)?.labels;
            cm += confusion(&labels, &s.mask)?;
            save_mask_png(&dir.join(format!("{}.png", s.pair.id)), &labels)?;
        }
        let summary = PseudoSummary {
            threshold,
            sweep,
            pseudo_ciou: class_iou(&cm, Class::Change),
        };
        write_json(&dir.join("summary.json"), &summary)?;
        log::info!("pseudo labels at threshold {threshold}: ciou {:.4}", summary.pseudo_ciou);
        Ok(summary)
    }

    pub fn train_seg(&self) -> Result<()> {
        let train = self.load_split("train")?;
        let val = self.load_split("val")?;
        let mut targets: Vec<(ImagePair, PixelMask)> = Vec::with_capacity(train.len());
        for s in train {
            let mask = load_mask_png(&self.layout.pseudo().join(format!("{}.png", s.pair.id)))?;
            targets.push((s.pair, mask));
        }
        let seg = &self.config.seg;
        let outcome = train_segnet(&targets, &val, &seg.net, &seg.train, derive_seed(self.config.seed, "seg"))?;
        let dir = self.layout.seg();
        fs::create_dir_all(&dir)?;
        outcome.final_model.to_checkpoint().save(&dir.join("final.ckpt"))?;
        outcome.best_model.to_checkpoint().save(&dir.join("best.ckpt"))?;
        outcome.write_history_csv(&dir.join("history.csv"))?;
        Ok(())
    }

    pub fn load_segnet(&self) -> Result<SegNet> {
        let name = match self.config.seg.select {
            SegSelect::BestVal => "best.ckpt",
            SegSelect::Final => "final.ckpt",
        };
        SegNet::from_checkpoint(&Checkpoint::load(&self.layout.seg().join(name))?)
    }

    pub fn eval(&self) -> Result<MetricReport> {
        let net = self.load_segnet()?;
        let test = self.load_split("test")?;
        let Evaluation { report, rows, masks } = evaluate(&net, &test)?;
        let dir = self.layout.eval();
        let mask_dir = dir.join("masks");
        fs::create_dir_all(&mask_dir)?;
        for (s, m) in test.iter().zip(&masks) {
            save_mask_png(&mask_dir.join(format!("{}.png", s.pair.id)), m)?;
        }
        report.write_json(&dir.join("report.json"))?;
        report.write_csv(&dir.join("report.csv"))?;
        write_sample_rows(&dir.join("per_sample.csv"), &rows)?;
        log::info!("test report: {report:?}");
        Ok(report)
    }

    /// Six-panel rows for the requested sample ids, searched across all splits.
    pub fn figure(&self, ids: &[String]) -> Result<FigureOutcome> {
        let (teacher, student) = self.load_kd_models()?;
        let mut samples = Vec::new();
        for split in ["train", "val", "test"] {
            samples.extend(self.load_split(split)?);
        }
        write_figures(&self.layout.figure(), &samples, ids, &teacher, &student, &self.config.msi.scale_set())
    }

    pub fn run_stage(&self, stage: Stage) -> std::result::Result<(), StageError> {
        let r = match stage {
            Stage::Synth => self.synth().map(|_| ()),
            Stage::TrainKd => self.train_kd().map(|_| ()),
            Stage::Infer => self.infer().map(|_| ()),
            Stage::Pseudo => self.pseudo().map(|_| ()),
            Stage::TrainSeg => self.train_seg(),
            Stage::Eval => self.eval().map(|_| ()),
            Stage::Figure => Err(Error::config("figure needs sample ids; use Run::figure")),
        };
        in_stage(stage, r)
    }

    /// Runs every pipeline stage from `from` onwards and returns the test report.
    pub fn pipeline(&self, from: Stage) -> std::result::Result<MetricReport, StageError> {
        for stage in Stage::PIPELINE.into_iter().filter(|s| *s >= from && *s != Stage::Eval) {
            log::info!("running stage {stage}");
            self.run_stage(stage)?;
        }
        in_stage(Stage::Eval, self.eval())
    }

    pub fn read_kd_summary(&self) -> Result<KdSummary> {
        read_json(&self.layout.kd().join("summary.json"))
    }

    pub fn read_stage_table(&self) -> Result<StageTable> {
        read_json(&self.layout.root.join("infer").join("stage_table.json"))
    }

    pub fn read_report(&self) -> Result<MetricReport> {
        read_json(&self.layout.eval().join("report.json"))
    }
}
