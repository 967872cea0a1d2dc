//! Teacher CAMs, the distillation losses and the joint teacher/student loop.
//!
//! The teacher is optimised with the image-level classification loss only.
//! The student sees the teacher CAM as a fixed regression target, so its
//! parameters receive `λ · ∇L_kd` and nothing else.

mod loss;
mod train;

pub(crate) use loss::cam_normalize_tensor;

pub use loss::{
    cam_normalize, classification_grad_map, classification_logit, classification_loss, classification_loss_grad,
    kd_grad_map, kd_loss, total_loss, CAM_EPS,
};
pub use train::{
    evaluate_stage_iou, sweep_combine_modes, train_kd, train_kd_with, EarlyStopSplit, EpochRecord, EvalResize, KdOutcome,
    KdTrainConfig, StageIou,
};

use serde::{Deserialize, Serialize};

use crate::data::{ImagePair, PixelMask};
use crate::error::{Error, Result};
use crate::models::{ScoreMap, SiameseNet};
use crate::tensor::{sigmoid, Tensor};

/// Where a probability map came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    TeacherCam,
    StudentSigmoid,
    Msi,
    Mi,
}

/// Single-channel per-pixel change probability in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChangeProbabilityMap {
    values: Tensor,
    provenance: Provenance,
}

impl ChangeProbabilityMap {
    pub fn from_tensor(values: Tensor, provenance: Provenance) -> Result<Self> {
        if values.channels() != 1 {
            return Err(Error::shape("probability maps have one channel"));
        }
        if values.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::shape("probability values must lie in [0, 1]"));
        }
        Ok(ChangeProbabilityMap { values, provenance })
    }

    pub(crate) fn from_tensor_unchecked(values: Tensor, provenance: Provenance) -> Self {
        debug_assert!(values.data().iter().all(|v| (0.0..=1.0).contains(v)));
        ChangeProbabilityMap { values, provenance }
    }

    /// Elementwise logistic of a score map.
    pub fn sigmoid_of(g: &ScoreMap) -> Self {
        ChangeProbabilityMap {
            values: g.tensor().map(sigmoid),
            provenance: Provenance::StudentSigmoid,
        }
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    pub fn values(&self) -> &[f64] {
        self.values.data()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    /// Bilinear resize; convex weights keep values inside `[0, 1]`.
    pub fn resize(&self, h: usize, w: usize) -> Self {
        ChangeProbabilityMap {
            values: self.values.resize_bilinear(h, w).map(|v| v.clamp(0.0, 1.0)),
            provenance: self.provenance,
        }
    }

    pub fn resize_nearest(&self, h: usize, w: usize) -> Self {
        ChangeProbabilityMap {
            values: self.values.resize_nearest(h, w),
            provenance: self.provenance,
        }
    }

    /// Pixels strictly above `threshold` become change.
    pub fn binarize(&self, threshold: f64) -> PixelMask {
        let (h, w) = (self.height(), self.width());
        PixelMask::from_fn(h, w, |y, x| self.values.get(0, y, x) > threshold)
    }
}

/// Outputs of one joint forward pass.
#[derive(Clone, Debug)]
pub struct KdForward {
    pub g_teacher: ScoreMap,
    pub cam: ChangeProbabilityMap,
    pub g_student: ScoreMap,
    pub student_prob: ChangeProbabilityMap,
}

pub fn kd_forward(teacher: &SiameseNet, student: &SiameseNet, pair: &ImagePair) -> Result<KdForward> {
    let g_teacher = teacher.forward_pair(pair)?;
    let g_student = student.forward_pair(pair)?;
    Ok(KdForward {
        cam: cam_normalize(&g_teacher),
        student_prob: ChangeProbabilityMap::sigmoid_of(&g_student),
        g_teacher,
        g_student,
    })
}
