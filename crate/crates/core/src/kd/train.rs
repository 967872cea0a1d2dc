use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{cam_normalize, classification_grad_map, classification_logit, classification_loss, kd_grad_map, kd_loss};
use super::{ChangeProbabilityMap, KdForward};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::{class_iou, confusion, Class, ConfusionMatrix};
use crate::models::{CombineMode, Parameterized, SiameseConfig, SiameseNet};
use crate::optim::{Optimizer, OptimizerKind, PolySchedule};
use crate::seed::derive_seed;

/// How low-resolution maps are brought back to the input size for IoU.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalResize {
    #[default]
    Bilinear,
    Nearest,
}

/// Which split's pixel labels drive early stopping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EarlyStopSplit {
    #[default]
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdTrainConfig {
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub poly_power: f64,
    /// Epochs without a change-IoU improvement before stopping.
    pub patience: usize,
    /// Binarisation threshold for the per-epoch IoU.
    pub eval_threshold: f64,
    pub eval_resize: EvalResize,
    pub early_stop_split: EarlyStopSplit,
    pub optimizer: OptimizerKind,
}

impl Default for KdTrainConfig {
    fn default() -> Self {
        KdTrainConfig {
            lambda: 10.0,
            batch_size: 8,
            epochs: 20,
            initial_lr: 1e-3,
            poly_power: 0.9,
            patience: 5,
            eval_threshold: 0.3,
            eval_resize: EvalResize::Bilinear,
            early_stop_split: EarlyStopSplit::Train,
            optimizer: OptimizerKind::adam(),
        }
    }
}

impl KdTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::config("lambda must be non-negative"));
        }
        if !(self.initial_lr > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch size and epochs must be positive"));
        }
        if !(self.eval_threshold > 0.0 && self.eval_threshold < 1.0) {
            return Err(Error::config("eval threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_cls: f64,
    pub l_kd: f64,
    pub l: f64,
    /// Student change-IoU on the early-stop set.
    pub eval_ciou: f64,
    /// Teacher-CAM change-IoU on the same set.
    pub teacher_ciou: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct KdOutcome {
    /// Teacher and student as of the best-student epoch.
    pub teacher: SiameseNet,
    pub student: SiameseNet,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_ciou: f64,
}

impl KdOutcome {
    /// Best teacher-CAM IoU seen in any epoch.
    pub fn best_teacher_ciou(&self) -> f64 {
        self.history.iter().map(|r| r.teacher_ciou).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_history_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "l_cls", "l_kd", "l", "eval_ciou", "lr"])?;
        for r in &self.history {
            w.write_record([
                r.epoch.to_string(),
                r.l_cls.to_string(),
                r.l_kd.to_string(),
                r.l.to_string(),
                r.eval_ciou.to_string(),
                r.lr.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Teacher-CAM and student change-IoU over a labelled set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageIou {
    pub teacher: f64,
    pub student: f64,
}

pub(crate) fn upsample(map: &ChangeProbabilityMap, h: usize, w: usize, mode: EvalResize) -> ChangeProbabilityMap {
    match mode {
        EvalResize::Bilinear => map.resize(h, w),
        EvalResize::Nearest => map.resize_nearest(h, w),
    }
}

/// Global change-IoU of the thresholded teacher CAM and student map.
pub fn evaluate_stage_iou(
    teacher: &SiameseNet,
    student: &SiameseNet,
    samples: &[Sample],
    threshold: f64,
    resize: EvalResize,
) -> Result<StageIou> {
    let mut cm_t = ConfusionMatrix::default();
    let mut cm_s = ConfusionMatrix::default();
    for s in samples {
        let out: KdForward = super::kd_forward(teacher, student, &s.pair)?;
        let (h, w) = (s.pair.height(), s.pair.width());
        cm_t += confusion(&upsample(&out.cam, h, w, resize).binarize(threshold), &s.mask)?;
        cm_s += confusion(&upsample(&out.student_prob, h, w, resize).binarize(threshold), &s.mask)?;
    }
    Ok(StageIou {
        teacher: class_iou(&cm_t, Class::Change),
        student: class_iou(&cm_s, Class::Change),
    })
}

pub fn train_kd(
    train: &[Sample],
    eval: &[Sample],
    model: &SiameseConfig,
    config: &KdTrainConfig,
    seed: u64,
) -> Result<KdOutcome> {
    train_kd_with(train, eval, model, config, seed, &mut |_, _, _| Ok(()))
}

/// Joint training; `on_improve` runs after every epoch that sets a new best
/// student change-IoU (used to persist checkpoints).
pub fn train_kd_with(
    train: &[Sample],
    eval: &[Sample],
    model: &SiameseConfig,
    config: &KdTrainConfig,
    seed: u64,
    on_improve: &mut dyn FnMut(&EpochRecord, &SiameseNet, &SiameseNet) -> Result<()>,
) -> Result<KdOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::config("knowledge-distillation training set is empty"));
    }
    if eval.is_empty() {
        return Err(Error::config("early-stopping evaluation set is empty"));
    }
    let mut teacher = SiameseNet::new(model, derive_seed(seed, "teacher"))?;
    let mut student = SiameseNet::new(model, derive_seed(seed, "student"))?;
    let mut opt_t = Optimizer::new(config.optimizer);
    let mut opt_s = Optimizer::new(config.optimizer);
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let schedule = PolySchedule {
        initial_lr: config.initial_lr,
        total_steps: steps_per_epoch * config.epochs,
        power: config.poly_power,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "kd-batches"));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(SiameseNet, SiameseNet, usize, f64)> = None;
    let mut stale = 0usize;
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let epoch_lr = schedule.lr(step);
        let (mut sum_cls, mut sum_kd) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            teacher.zero_grad();
            student.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &train[i];
                let y = s.label.as_f64();
                let (g_t, trace_t) = teacher.forward(&s.pair.pre, &s.pair.post)?;
                let (g_s, trace_s) = student.forward(&s.pair.pre, &s.pair.post)?;
                let cam = cam_normalize(&g_t);
                let prob = ChangeProbabilityMap::sigmoid_of(&g_s);
                let l_cls = classification_loss(classification_logit(&g_t), y);
                let l_kd = kd_loss(&cam, &prob)?;
                if !(l_cls.is_finite() && l_kd.is_finite()) {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        step,
                        detail: format!("sample {}: l_cls={l_cls}, l_kd={l_kd}", s.pair.id),
                    });
                }
                sum_cls += l_cls;
                sum_kd += l_kd;

                let mut g = classification_grad_map(&g_t, y);
                g.scale(scale);
                teacher.backward(&trace_t, &g);
                if config.lambda != 0.0 {
                    let mut g = kd_grad_map(&cam, &prob)?;
                    g.scale(config.lambda * scale);
                    student.backward(&trace_s, &g);
                }
            }
            let lr = schedule.lr(step);
            opt_t.step(&mut teacher, lr);
            opt_s.step(&mut student, lr);
            step += 1;
        }

        let n = train.len() as f64;
        let iou = evaluate_stage_iou(&teacher, &student, eval, config.eval_threshold, config.eval_resize)?;
        let record = EpochRecord {
            epoch,
            l_cls: sum_cls / n,
            l_kd: sum_kd / n,
            l: (sum_cls + config.lambda * sum_kd) / n,
            eval_ciou: iou.student,
            teacher_ciou: iou.teacher,
            lr: epoch_lr,
        };
        log::info!(
            "kd epoch {epoch}: l_cls={:.4} l_kd={:.4} student_ciou={:.4} teacher_ciou={:.4}",
            record.l_cls,
            record.l_kd,
            record.eval_ciou,
            record.teacher_ciou
        );
        let improved = best.as_ref().is_none_or(|b| record.eval_ciou > b.3);
        if improved {
            on_improve(&record, &teacher, &student)?;
            best = Some((teacher.clone(), student.clone(), epoch, record.eval_ciou));
            stale = 0;
        } else {
            stale += 1;
        }
        history.push(record);
        if stale >= config.patience {
            log::info!("kd early stop after epoch {epoch}");
            break;
        }
    }

    let (teacher, student, best_epoch, best_ciou) = best.expect("at least one epoch ran");
    Ok(KdOutcome {
        teacher,
        student,
        history,
        best_epoch,
        best_ciou,
    })
}

/// Trains one teacher/student pair per combination mode and keeps the mode
/// whose best student scores highest on `select` (ties keep the earlier mode).
pub fn sweep_combine_modes(
    train: &[Sample],
    early_stop: &[Sample],
    select: &[Sample],
    model: &SiameseConfig,
    config: &KdTrainConfig,
    seed: u64,
) -> Result<(CombineMode, KdOutcome, Vec<(CombineMode, f64)>)> {
    let mut scores = Vec::new();
    let mut best: Option<(CombineMode, KdOutcome, f64)> = None;
    for mode in CombineMode::ALL {
        let cfg = SiameseConfig {
            combine: mode,
            ..model.clone()
        };
        let outcome = train_kd(train, early_stop, &cfg, config, seed)?;
        let iou = evaluate_stage_iou(
            &outcome.teacher,
            &outcome.student,
            select,
            config.eval_threshold,
            config.eval_resize,
        )?
        .student;
        scores.push((mode, iou));
        if best.as_ref().is_none_or(|b| iou > b.2) {
            best = Some((mode, outcome, iou));
        }
    }
    let (mode, outcome, _) = best.expect("three modes tried");
    Ok((mode, outcome, scores))
}
