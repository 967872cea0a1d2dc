//! Confusion-matrix metrics with the change class as the positive class.

use std::ops::{Add, AddAssign};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::PixelMask;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionMatrix { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(self, o: ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, o: ConfusionMatrix) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = ConfusionMatrix>>(iter: I) -> Self {
        iter.fold(ConfusionMatrix::default(), Add::add)
    }
}

pub fn confusion(pred: &PixelMask, gt: &PixelMask) -> Result<ConfusionMatrix> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let mut counts = [0u64; 4];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        counts[((p << 1) | g) as usize] += 1;
    }
    // index = pred*2 + gt
    Ok(ConfusionMatrix {
        tn: counts[0],
        fn_: counts[1],
        fp: counts[2],
        tp: counts[3],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Class {
    Change,
    Background,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum F1Mode {
    Change,
    Macro,
}

fn ratio(num: u64, den: u64, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

pub fn overall_accuracy(cm: &ConfusionMatrix) -> f64 {
    ratio(cm.tp + cm.tn, cm.total(), 1.0)
}

/// IoU of one class; 1 when the class is absent from both prediction and truth.
pub fn class_iou(cm: &ConfusionMatrix, class: Class) -> f64 {
    let hit = match class {
        Class::Change => cm.tp,
        Class::Background => cm.tn,
    };
    ratio(hit, hit + cm.fp + cm.fn_, 1.0)
}

pub fn mean_iou(cm: &ConfusionMatrix) -> f64 {
    (class_iou(cm, Class::Change) + class_iou(cm, Class::Background)) / 2.0
}

fn class_f1(hit: u64, false_pos: u64, false_neg: u64) -> f64 {
    if hit + false_pos + false_neg == 0 {
        return 1.0;
    }
    let p = ratio(hit, hit + false_pos, 0.0);
    let r = ratio(hit, hit + false_neg, 0.0);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn f1(cm: &ConfusionMatrix, mode: F1Mode) -> f64 {
    let change = class_f1(cm.tp, cm.fp, cm.fn_);
    match mode {
        F1Mode::Change => change,
        // background as the positive class: tn are hits, fn are its false positives
        F1Mode::Macro => (change + class_f1(cm.tn, cm.fn_, cm.fp)) / 2.0,
    }
}

/// `(fp / (fp + tp), fn / (fn + tp))`: false-discovery rate and miss rate.
pub fn error_rates(cm: &ConfusionMatrix) -> (f64, f64) {
    (ratio(cm.fp, cm.fp + cm.tp, 0.0), ratio(cm.fn_, cm.fn_ + cm.tp, 0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// One confusion matrix accumulated over every pixel of every sample.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub oa: f64,
    pub f1_change: f64,
    /// Mean of change and background F1; the column comparable to published tables.
    pub f1_macro: f64,
    pub ciou: f64,
    pub miou: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub aggregation: Aggregation,
    pub counts: ConfusionMatrix,
}

impl MetricReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let (fp_rate, fn_rate) = error_rates(cm);
        MetricReport {
            oa: overall_accuracy(cm),
            f1_change: f1(cm, F1Mode::Change),
            f1_macro: f1(cm, F1Mode::Macro),
            ciou: class_iou(cm, Class::Change),
            miou: mean_iou(cm),
            fp_rate,
            fn_rate,
            aggregation: Aggregation::Global,
            counts: *cm,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "f1_change", "f1_macro", "oa", "ciou", "miou", "fp_rate", "fn_rate", "tp", "fp", "fn", "tn",
        ])?;
        w.write_record([
            self.f1_change.to_string(),
            self.f1_macro.to_string(),
            self.oa.to_string(),
            self.ciou.to_string(),
            self.miou.to_string(),
            self.fp_rate.to_string(),
            self.fn_rate.to_string(),
            self.counts.tp.to_string(),
            self.counts.fp.to_string(),
            self.counts.fn_.to_string(),
            self.counts.tn.to_string(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Per-sample confusion counts, one CSV row each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub id: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub ciou: f64,
}

impl SampleRow {
    pub fn new(id: &str, cm: &ConfusionMatrix) -> Self {
        SampleRow {
            id: id.to_string(),
            tp: cm.tp,
            fp: cm.fp,
            fn_: cm.fn_,
            tn: cm.tn,
            ciou: class_iou(cm, Class::Change),
        }
    }
}

pub fn write_sample_rows(path: &Path, rows: &[SampleRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Accumulates one global matrix over `(prediction, truth)` pairs.
pub fn evaluate_masks<'a>(
    pairs: impl IntoIterator<Item = (&'a str, &'a PixelMask, &'a PixelMask)>,
) -> Result<(MetricReport, Vec<SampleRow>)> {
    let mut total = ConfusionMatrix::default();
    let mut rows = Vec::new();
    for (id, pred, gt) in pairs {
        let cm = confusion(pred, gt)?;
        rows.push(SampleRow::new(id, &cm));
        total += cm;
    }
    if rows.is_empty() {
        return Err(Error::config("cannot evaluate an empty sample list"));
    }
    Ok((MetricReport::from_confusion(&total), rows))
}

/// Report, per-sample rows and predicted masks of a segmentation network.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricReport,
    pub rows: Vec<SampleRow>,
    pub masks: Vec<PixelMask>,
}

pub fn evaluate(net: &crate::segnet::SegNet, samples: &[crate::data::Sample]) -> Result<Evaluation> {
    let masks = samples
        .iter()
        .map(|s| crate::segnet::predict_change_mask(net, &s.pair))
        .collect::<Result<Vec<_>>>()?;
    let (report, rows) = evaluate_masks(
        samples
            .iter()
            .zip(&masks)
            .map(|(s, m)| (s.pair.id.as_str(), m, &s.mask)),
    )?;
    Ok(Evaluation { report, rows, masks })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The 4×4 instance with tp=3, fp=1, fn=1, tn=11.
    fn instance() -> (PixelMask, PixelMask) {
        let gt = PixelMask::new(4, 4, vec![1, 1, 1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        let pred = PixelMask::new(4, 4, vec![1, 1, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        (pred, gt)
    }

    #[test]
    fn confusion_examples() {
        let gt = PixelMask::from_fn(4, 4, |y, x| y == x);
        assert_eq!(confusion(&gt, &gt).unwrap(), ConfusionMatrix::new(4, 0, 0, 12));
        let all = PixelMask::from_fn(4, 4, |_, _| true);
        assert_eq!(
            confusion(&all, &PixelMask::zeros(4, 4)).unwrap(),
            ConfusionMatrix::new(0, 16, 0, 0)
        );
        assert!(confusion(&all, &PixelMask::zeros(4, 5)).is_err());
    }

    #[test]
    fn instance_metrics() {
        let (pred, gt) = instance();
        let cm = confusion(&pred, &gt).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(3, 1, 1, 11));
        assert_eq!(overall_accuracy(&cm), 0.875);
        assert_eq!(class_iou(&cm, Class::Change), 0.6);
        assert!((class_iou(&cm, Class::Background) - 11.0 / 13.0).abs() < 1e-15);
        assert!((mean_iou(&cm) - (0.6 + 11.0 / 13.0) / 2.0).abs() < 1e-15);
        assert!((f1(&cm, F1Mode::Change) - 0.75).abs() < 1e-15);
        assert!((f1(&cm, F1Mode::Macro) - (0.75 + 11.0 / 12.0) / 2.0).abs() < 1e-15);
        assert_eq!(error_rates(&cm), (0.25, 0.25));
    }

    #[test]
    fn degenerate_cases() {
        let perfect = ConfusionMatrix::new(5, 0, 0, 11);
        assert_eq!(overall_accuracy(&perfect), 1.0);
        assert_eq!(mean_iou(&perfect), 1.0);
        assert_eq!(f1(&perfect, F1Mode::Change), 1.0);
        assert_eq!(f1(&perfect, F1Mode::Macro), 1.0);
        assert_eq!(error_rates(&perfect), (0.0, 0.0));

        let wrong = ConfusionMatrix::new(0, 8, 8, 0);
        assert_eq!(overall_accuracy(&wrong), 0.0);
        assert_eq!(class_iou(&wrong, Class::Change), 0.0);
        assert_eq!(mean_iou(&wrong), 0.0);

        let no_change_anywhere = ConfusionMatrix::new(0, 0, 0, 9);
        assert_eq!(class_iou(&no_change_anywhere, Class::Change), 1.0);
        assert_eq!(f1(&no_change_anywhere, F1Mode::Change), 1.0);

        let missed = ConfusionMatrix::new(0, 0, 4, 12);
        assert_eq!(error_rates(&missed), (0.0, 1.0));
        assert_eq!(f1(&missed, F1Mode::Change), 0.0);
    }

    #[test]
    fn complement_prediction_balanced() {
        let gt = PixelMask::from_fn(4, 4, |_, x| x < 2);
        let pred = PixelMask::from_fn(4, 4, |_, x| x >= 2);
        let cm = confusion(&pred, &gt).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(0, 8, 8, 0));
        assert_eq!(class_iou(&cm, Class::Change), 0.0);
        assert_eq!(mean_iou(&cm), 0.0);
    }

    #[test]
    fn evaluate_rejects_empty() {
        assert!(evaluate_masks(std::iter::empty()).is_err());
    }
}
