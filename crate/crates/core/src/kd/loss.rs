use crate::error::{Error, Result};
use crate::models::ScoreMap;
use crate::tensor::{sigmoid, Tensor};

use super::{ChangeProbabilityMap, Provenance};

/// Maximum of `ReLU(G)` below which the activation map is treated as empty.
pub const CAM_EPS: f64 = 1e-6;

/// `ReLU(G) / max(ReLU(G))`, or all zeros when nothing is positive.
pub fn cam_normalize(g: &ScoreMap) -> ChangeProbabilityMap {
    cam_normalize_tensor(g.tensor(), Provenance::TeacherCam)
}

pub(crate) fn cam_normalize_tensor(g: &Tensor, provenance: Provenance) -> ChangeProbabilityMap {
    let peak = g.max().max(0.0);
    let values = if peak > CAM_EPS {
        g.map(|v| v.max(0.0) / peak)
    } else {
        Tensor::zeros(g.channels(), g.height(), g.width())
    };
    ChangeProbabilityMap::from_tensor_unchecked(values, provenance)
}

/// Global average pooling of the teacher score map.
pub fn classification_logit(g: &ScoreMap) -> f64 {
    g.tensor().mean()
}

/// Binary cross-entropy on a logit, in the overflow-free form
/// `max(z, 0) − z·y + ln(1 + e^{−|z|})`.
pub fn classification_loss(logit: f64, y: f64) -> f64 {
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// `d BCE / d logit`.
pub fn classification_loss_grad(logit: f64, y: f64) -> f64 {
    sigmoid(logit) - y
}

/// Gradient of `classification_loss(classification_logit(G), y)` w.r.t. every pixel of `G`.
pub fn classification_grad_map(g: &ScoreMap, y: f64) -> Tensor {
    let n = g.tensor().plane_len() as f64;
    let d = classification_loss_grad(classification_logit(g), y) / n;
    Tensor::full(1, g.height(), g.width(), d)
}

/// Mean squared error between the (constant) CAM target and the student map.
pub fn kd_loss(cam: &ChangeProbabilityMap, student: &ChangeProbabilityMap) -> Result<f64> {
    let (a, b) = (cam.tensor(), student.tensor());
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "cam {:?} vs student {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(t, s)| (t - s) * (t - s))
        .sum::<f64>()
        / n)
}

/// Gradient of `kd_loss(cam, σ(G_student))` w.r.t. the student score map.
/// No gradient is produced for the CAM side.
pub fn kd_grad_map(cam: &ChangeProbabilityMap, student: &ChangeProbabilityMap) -> Result<Tensor> {
    let n = cam.tensor().data().len() as f64;
    cam.tensor()
        .zip_map(student.tensor(), |t, s| 2.0 * (s - t) / n * s * (1.0 - s))
}

pub fn total_loss(l_cls: f64, l_kd: f64, lambda: f64) -> f64 {
    l_cls + lambda * l_kd
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(rows: &[&[f64]]) -> ScoreMap {
        ScoreMap::from_rows(rows).unwrap()
    }

    #[test]
    fn cam_example() {
        let cam = cam_normalize(&map(&[&[-1.0, 2.0], &[4.0, 0.0]]));
        assert_eq!(cam.values(), &[0.0, 0.5, 1.0, 0.0]);
    }

    #[test]
    fn cam_guard() {
        let cam = cam_normalize(&map(&[&[-1.0, -2.0], &[0.0, -0.5]]));
        assert!(cam.values().iter().all(|&v| v == 0.0));
        let tiny = cam_normalize(&map(&[&[1e-9, 0.0]]));
        assert!(tiny.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gap_examples() {
        assert_eq!(classification_logit(&ScoreMap::constant(3, 3, 0.0)), 0.0);
        assert_eq!(classification_logit(&map(&[&[1.0, 3.0], &[5.0, 7.0]])), 4.0);
    }

    #[test]
    fn bce_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((classification_loss(0.0, 1.0) - ln2).abs() < 1e-15);
        assert!((classification_loss(0.0, 0.0) - ln2).abs() < 1e-15);
        // −ln σ(2) = ln(1 + e^{−2})
        assert!((classification_loss(2.0, 1.0) - 0.126_928_011_042_972_6).abs() < 1e-12);
        assert!(classification_loss(800.0, 0.0).is_finite());
        assert!(classification_loss(-800.0, 1.0).is_finite());
    }

    #[test]
    fn kd_examples() {
        let z = ChangeProbabilityMap::from_tensor_unchecked(Tensor::zeros(1, 3, 3), Provenance::TeacherCam);
        let half = ChangeProbabilityMap::from_tensor_unchecked(Tensor::full(1, 3, 3, 0.5), Provenance::StudentSigmoid);
        assert_eq!(kd_loss(&z, &z).unwrap(), 0.0);
        assert_eq!(kd_loss(&z, &half).unwrap(), 0.25);
        let other = ChangeProbabilityMap::from_tensor_unchecked(Tensor::zeros(1, 2, 3), Provenance::StudentSigmoid);
        assert!(kd_loss(&z, &other).is_err());
    }

    #[test]
    fn total_examples() {
        assert!((total_loss(0.2, 0.03, 10.0) - 0.5).abs() < 1e-15);
        assert_eq!(total_loss(0.37, 5.0, 0.0), 0.37);
        assert_eq!(total_loss(0.6931, 0.0, 10.0), 0.6931);
    }

    proptest! {
        #[test]
        fn bce_non_negative(z in -50.0f64..50.0, y in prop::bool::ANY) {
            prop_assert!(classification_loss(z, y as u8 as f64) >= 0.0);
        }

        #[test]
        fn bce_grad_matches_finite_difference(z in -6.0f64..6.0, y in prop::bool::ANY) {
            let y = y as u8 as f64;
            let h = 1e-5;
            let fd = (classification_loss(z + h, y) - classification_loss(z - h, y)) / (2.0 * h);
            prop_assert!((fd - classification_loss_grad(z, y)).abs() < 1e-8);
        }
    }
}
