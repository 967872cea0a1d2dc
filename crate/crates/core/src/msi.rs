//! Test-time multiscale inference and pseudo-label generation.
//!
//! Two reductions over the same `2|S|` network evaluations (every scale, with
//! and without a flip):
//!
//! * [`multiscale_inference`] sums raw score maps at input resolution and
//!   max-normalises the sum once (ReLU included).
//! * [`multiscale_sigmoid_inference`] applies the sigmoid to each evaluation
//!   first, flips it back, resizes it to the input size and averages, so every
//!   scale carries equal weight.

use std::io::{Read, Write};
use std::path::Path;

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::data::{ImagePair, PixelMask};
use crate::error::{Error, Result};
use crate::kd::{ChangeProbabilityMap, Provenance};
use crate::metrics::{class_iou, confusion, Class, ConfusionMatrix};
use crate::models::ScoreNet;
use crate::tensor::{sigmoid, FlipAxis, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleSet {
    pub scales: Vec<f64>,
    pub flip: bool,
    pub flip_axis: FlipAxis,
}

impl Default for ScaleSet {
    fn default() -> Self {
        ScaleSet {
            scales: vec![0.5, 1.0, 1.5, 2.0],
            flip: true,
            flip_axis: FlipAxis::Horizontal,
        }
    }
}

impl ScaleSet {
    pub fn single(scale: f64, flip: bool) -> Self {
        ScaleSet {
            scales: vec![scale],
            flip,
            flip_axis: FlipAxis::Horizontal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::config("scale set must not be empty"));
        }
        if self.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::config("every scale must be positive and finite"));
        }
        Ok(())
    }

    /// Network evaluations per pair.
    pub fn evaluations(&self) -> usize {
        self.scales.len() * if self.flip { 2 } else { 1 }
    }
}

/// `round(s·n)` snapped up to the next multiple of `multiple` (at least one multiple).
pub fn scaled_side(n: usize, scale: f64, multiple: usize) -> usize {
    let target = ((n as f64 * scale).round() as usize).max(1);
    target.div_ceil(multiple) * multiple
}

/// One network evaluation at one scale, returned at the network's output
/// resolution and already flipped back to the original orientation.
fn evaluate<N: ScoreNet + ?Sized>(
    net: &N,
    pair: &ImagePair,
    scale: f64,
    flipped: bool,
    axis: FlipAxis,
    activation: impl Fn(f64) -> f64,
) -> Result<Tensor> {
    let m = net.input_multiple();
    let (h, w) = (scaled_side(pair.height(), scale, m), scaled_side(pair.width(), scale, m));
    let mut scaled = pair.resize(h, w);
    if flipped {
        scaled = scaled.flip(axis);
    }
    let g = net.score(&scaled.pre, &scaled.post)?;
    let mut out = g.into_tensor().map(activation);
    if flipped {
        out = out.flip(axis);
    }
    Ok(out)
}

fn for_each_evaluation<N: ScoreNet + ?Sized>(
    net: &N,
    pair: &ImagePair,
    scales: &ScaleSet,
    activation: impl Fn(f64) -> f64 + Copy,
    mut sink: impl FnMut(Tensor) -> Result<()>,
) -> Result<()> {
    scales.validate()?;
    let (h, w) = (pair.height(), pair.width());
    for &s in &scales.scales {
        sink(evaluate(net, pair, s, false, scales.flip_axis, activation)?.resize_bilinear(h, w))?;
        if scales.flip {
            sink(evaluate(net, pair, s, true, scales.flip_axis, activation)?.resize_bilinear(h, w))?;
        }
    }
    Ok(())
}

/// `Σ_s (G^{sr} + G^{sffr})` at input resolution, before normalisation.
pub fn multiscale_score_sum<N: ScoreNet + ?Sized>(net: &N, pair: &ImagePair, scales: &ScaleSet) -> Result<Tensor> {
    let mut sum = Tensor::zeros(1, pair.height(), pair.width());
    for_each_evaluation(net, pair, scales, |v| v, |g| sum.add_assign(&g))?;
    Ok(sum)
}

/// Plain multiscale inference: summed raw scores passed through CAM normalisation.
pub fn multiscale_inference<N: ScoreNet + ?Sized>(
    net: &N,
    pair: &ImagePair,
    scales: &ScaleSet,
) -> Result<ChangeProbabilityMap> {
    let sum = multiscale_score_sum(net, pair, scales)?;
    Ok(crate::kd::cam_normalize_tensor(&sum, Provenance::Mi))
}

/// Multiscale sigmoid inference: mean of per-evaluation sigmoid maps.
pub fn multiscale_sigmoid_inference<N: ScoreNet + ?Sized>(
    net: &N,
    pair: &ImagePair,
    scales: &ScaleSet,
) -> Result<ChangeProbabilityMap> {
    let mut sum = Tensor::zeros(1, pair.height(), pair.width());
    for_each_evaluation(net, pair, scales, sigmoid, |p| sum.add_assign(&p))?;
    sum.scale(1.0 / scales.evaluations() as f64);
    Ok(crate::kd::ChangeProbabilityMap::from_tensor_unchecked(
        sum.map(|v| v.clamp(0.0, 1.0)),
        Provenance::Msi,
    ))
}

/// Binary pseudo label plus the background threshold that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelMap {
    pub labels: PixelMask,
    pub threshold: f64,
}

/// Argmax over `[threshold, M(p)]`; ties go to background.
pub fn pseudo_label(map: &ChangeProbabilityMap, bg_threshold: f64) -> Result<PseudoLabelMap> {
    if !(bg_threshold > 0.0 && bg_threshold < 1.0) {
        return Err(Error::config(format!("background threshold {bg_threshold} outside (0, 1)")));
    }
    Ok(PseudoLabelMap {
        labels: map.binarize(bg_threshold),
        threshold: bg_threshold,
    })
}

/// Candidate background thresholds 0.1, 0.2, …, 0.9.
pub fn threshold_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Picks the threshold with the highest global change-IoU (ties keep the lower threshold).
pub fn select_threshold(maps: &[(ChangeProbabilityMap, PixelMask)], candidates: &[f64]) -> Result<(f64, Vec<(f64, f64)>)> {
    if maps.is_empty() || candidates.is_empty() {
        return Err(Error::config("threshold selection needs maps and candidates"));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for &t in candidates {
        let mut cm = ConfusionMatrix::default();
        for (m, gt) in maps {
            cm += confusion(&pseudo_label(m, t)?.labels, gt)?;
        }
        scores.push((t, class_iou(&cm, Class::Change)));
    }
    let best = scores
        .iter()
        .copied()
        .fold(None::<(f64, f64)>, |acc, s| match acc {
            Some(a) if a.1 >= s.1 => Some(a),
            _ => Some(s),
        })
        .expect("non-empty");
    Ok((best.0, scores))
}

/// 16-bit grayscale PNG with value `round(65535·M)`.
pub fn save_probability_png16(path: &Path, map: &ChangeProbabilityMap) -> Result<()> {
    let (h, w) = (map.height(), map.width());
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([(map.tensor().get(0, y as usize, x as usize) * 65535.0).round() as u16])
    });
    img.save(path)?;
    Ok(())
}

/// Raw float export as a little-endian `<f8` NumPy array of shape `(H, W)`.
pub fn save_probability_npy(path: &Path, map: &ChangeProbabilityMap) -> Result<()> {
    let mut header = format!(
        "{{'descr': '<f8', 'fortran_order': False, 'shape': ({}, {}), }}",
        map.height(),
        map.width()
    );
    // magic (6) + version (2) + header length (2) + header must be a multiple of 64
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(b"\x93NUMPY\x01\x00")?;
    f.write_all(&(header.len() as u16).to_le_bytes())?;
    f.write_all(header.as_bytes())?;
    for v in map.values() {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn load_probability_npy(path: &Path, provenance: Provenance) -> Result<ChangeProbabilityMap> {
    let bad = |reason: &str| Error::Dataset {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 10 || &bytes[..8] != b"\x93NUMPY\x01\x00" {
        return Err(bad("not a version 1.0 .npy file"));
    }
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let header = std::str::from_utf8(bytes.get(10..10 + hlen).ok_or_else(|| bad("truncated header"))?)
        .map_err(|_| bad("header is not UTF-8"))?;
    if !header.contains("'descr': '<f8'") || header.contains("'fortran_order': True") {
        return Err(bad("expected a C-order <f8 array"));
    }
    let shape = header
        .split("'shape': (")
        .nth(1)
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| bad("missing shape"))?;
    let dims: Vec<usize> = shape
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| bad("bad shape")))
        .collect::<Result<_>>()?;
    let [h, w] = dims[..] else {
        return Err(bad("expected a 2-D array"));
    };
    let data: Vec<f64> = bytes[10 + hlen..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ChangeProbabilityMap::from_tensor(Tensor::from_vec(1, h, w, data)?, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ScoreMap;
    use proptest::prelude::*;

    /// Returns a constant map whose value depends on the input scale.
    struct ScaleStub {
        base: usize,
        values: Vec<(usize, f64)>,
    }

    impl ScoreNet for ScaleStub {
        fn input_multiple(&self) -> usize {
            4
        }

        fn score(&self, pre: &Tensor, _post: &Tensor) -> Result<ScoreMap> {
            let v = self
                .values
                .iter()
                .find(|(h, _)| *h == pre.height())
                .map(|(_, v)| *v)
                .unwrap_or_else(|| panic!("unexpected size {} (base {})", pre.height(), self.base));
            Ok(ScoreMap::constant(pre.height() / 4, pre.width() / 4, v))
        }
    }

    fn pair(h: usize, w: usize) -> ImagePair {
        ImagePair::new("p", Tensor::full(3, h, w, 0.2), Tensor::full(3, h, w, 0.7)).unwrap()
    }

    fn stub(values: &[f64]) -> ScaleStub {
        let sizes = [16, 32, 48, 64];
        ScaleStub {
            base: 32,
            values: sizes.iter().copied().zip(values.iter().copied()).collect(),
        }
    }

    #[test]
    fn scaled_side_snaps_up() {
        assert_eq!(scaled_side(64, 0.5, 16), 32);
        assert_eq!(scaled_side(64, 1.5, 16), 96);
        assert_eq!(scaled_side(50, 1.0, 16), 64);
        assert_eq!(scaled_side(10, 0.01, 16), 16);
    }

    #[test]
    fn mi_constant_positive_is_all_ones() {
        let m = multiscale_inference(&stub(&[3.0; 4]), &pair(32, 32), &ScaleSet::default()).unwrap();
        assert!(m.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mi_constant_negative_is_all_zeros() {
        let m = multiscale_inference(&stub(&[-1.0; 4]), &pair(32, 32), &ScaleSet::default()).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mi_scale_indexed_sum() {
        let net = stub(&[1.0, 2.0, 3.0, 4.0]);
        let p = pair(32, 32);
        let sum = multiscale_score_sum(&net, &p, &ScaleSet::default()).unwrap();
        let mut expect = 0.0;
        for v in [1.0, 2.0, 3.0, 4.0] {
            for _flip in 0..2 {
                expect += v;
            }
        }
        assert_eq!(expect, 20.0);
        assert!(sum.data().iter().all(|&v| (v - expect).abs() < 1e-12));
        let m = multiscale_inference(&net, &p, &ScaleSet::default()).unwrap();
        assert!(m.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn msi_zero_scores_give_half() {
        let m = multiscale_sigmoid_inference(&stub(&[0.0; 4]), &pair(32, 32), &ScaleSet::default()).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn msi_scale_indexed_mean_of_sigmoids() {
        let m = multiscale_sigmoid_inference(&stub(&[-2.0, 0.0, 2.0, 4.0]), &pair(32, 32), &ScaleSet::default())
            .unwrap();
        let expect = [-2.0f64, 0.0, 2.0, 4.0].iter().map(|&g| 1.0 / (1.0 + (-g).exp())).sum::<f64>() / 4.0;
        assert!((expect - 0.6205).abs() < 1e-4);
        assert!(m.values().iter().all(|&v| (v - expect).abs() < 1e-12));
    }

    #[test]
    fn pseudo_label_rule() {
        let m = ChangeProbabilityMap::from_tensor(
            Tensor::from_vec(1, 1, 3, vec![0.7, 0.3, 0.1]).unwrap(),
            Provenance::Msi,
        )
        .unwrap();
        let p = pseudo_label(&m, 0.3).unwrap();
        assert_eq!(p.labels.data(), &[1, 0, 0]);
        assert!(pseudo_label(&m, 0.0).is_err());
        assert!(pseudo_label(&m, 1.0).is_err());
    }

    #[test]
    fn threshold_selection_prefers_best_iou() {
        let gt = PixelMask::from_fn(2, 2, |_, x| x == 0);
        let m = ChangeProbabilityMap::from_tensor(
            Tensor::from_vec(1, 2, 2, vec![0.65, 0.55, 0.7, 0.2]).unwrap(),
            Provenance::Msi,
        )
        .unwrap();
        let (t, scores) = select_threshold(&[(m, gt)], &threshold_grid()).unwrap();
        assert_eq!(t, 0.6);
        assert_eq!(scores.len(), 9);
    }

    #[test]
    fn npy_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.npy");
        let m = ChangeProbabilityMap::from_tensor(
            Tensor::from_fn(1, 3, 5, |_, y, x| (y * 5 + x) as f64 / 15.0),
            Provenance::Msi,
        )
        .unwrap();
        save_probability_npy(&path, &m).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len() % 8, 0);
        assert_eq!(load_probability_npy(&path, Provenance::Msi).unwrap(), m);
    }

    proptest! {
        #[test]
        fn pseudo_label_matches_loop(values in prop::collection::vec(0.0f64..=1.0, 64)) {
            let m = ChangeProbabilityMap::from_tensor(Tensor::from_vec(1, 8, 8, values.clone()).unwrap(), Provenance::Msi).unwrap();
            let p = pseudo_label(&m, 0.3).unwrap();
            for (i, v) in values.iter().enumerate() {
                prop_assert_eq!(p.labels.data()[i], u8::from(*v > 0.3));
            }
        }
    }
}
