//! On-disk dataset layout: `A/` (pre), `B/` (post), `label/` (mask) with
//! matching PNG filenames. Masks store 0 for no change and 255 for change.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{derive_image_label, DatasetSplit, ImagePair, PixelMask, Sample, SynthSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum Normalization {
    /// Divide 8-bit values by 255.
    #[default]
    UnitRange,
    /// Unit-range scaling followed by `(v - mean[c]) / std[c]`.
    Standardize { mean: [f64; 3], std: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    pub normalization: Normalization,
    /// Weak-label threshold on the changed-pixel fraction.
    pub min_change_fraction: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            normalization: Normalization::UnitRange,
            min_change_fraction: 0.0,
        }
    }
}

/// Contents of `meta.json` next to a persisted synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub spec: SynthSpec,
    pub seed: u64,
    pub count: usize,
    pub split: DatasetSplit,
}

fn dataset_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn load_rgb_png(path: &Path, normalization: Normalization) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let mut t = Tensor::from_fn(3, h as usize, w as usize, |c, y, x| {
        img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    });
    if let Normalization::Standardize { mean, std } = normalization {
        for c in 0..3 {
            if std[c] <= 0.0 {
                return Err(Error::config("standardization std must be positive"));
            }
            t.plane_mut(c).iter_mut().for_each(|v| *v = (*v - mean[c]) / std[c]);
        }
    }
    Ok(t)
}

pub fn save_rgb_png(path: &Path, t: &Tensor) -> Result<()> {
    if t.channels() != 3 {
        return Err(Error::shape("RGB export needs 3 channels"));
    }
    let img = RgbImage::from_fn(t.width() as u32, t.height() as u32, |x, y| {
        let px = |c| (t.get(c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    });
    img.save(path)?;
    Ok(())
}

pub fn load_mask_png(path: &Path) -> Result<PixelMask> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let mut data = Vec::with_capacity((w * h) as usize);
    for p in img.pixels() {
        data.push(match p[0] {
            0 => 0,
            255 => 1,
            v => return Err(dataset_err(path, format!("mask value {v} is neither 0 nor 255"))),
        });
    }
    PixelMask::new(h as usize, w as usize, data)
}

pub fn save_mask_png(path: &Path, mask: &PixelMask) -> Result<()> {
    let img = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([mask.get(y as usize, x as usize) * 255])
    });
    img.save(path)?;
    Ok(())
}

fn sorted_pngs(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| dataset_err(dir, e.to_string()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Loads every `A/x.png`, `B/x.png`, `label/x.png` triple under `root`,
/// sorted by filename. Sample ids are the file stems.
pub fn load_dataset_dir(root: &Path, opts: &LoadOptions) -> Result<Vec<Sample>> {
    let (a, b, l) = (root.join("A"), root.join("B"), root.join("label"));
    let names = sorted_pngs(&a)?;
    if names.is_empty() {
        return Err(dataset_err(&a, "no PNG images found"));
    }
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let (pb, pl) = (b.join(&name), l.join(&name));
        if !pb.exists() || !pl.exists() {
            return Err(dataset_err(root, format!("{name} is missing from B/ or label/")));
        }
        let pre = load_rgb_png(&a.join(&name), opts.normalization)?;
        let post = load_rgb_png(&pb, opts.normalization)?;
        let mask = load_mask_png(&pl)?;
        let id = Path::new(&name)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or(name.clone());
        let pair = ImagePair::new(id, pre, post).map_err(|e| dataset_err(&pb, e.to_string()))?;
        if (mask.height(), mask.width()) != (pair.height(), pair.width()) {
            return Err(dataset_err(&pl, "mask size differs from the image pair"));
        }
        let label = derive_image_label(&mask, opts.min_change_fraction);
        out.push(Sample { pair, mask, label });
    }
    Ok(out)
}

/// Writes samples in the `A/`, `B/`, `label/` layout; returns the written directory.
pub fn save_dataset_dir<'a>(root: &Path, samples: impl IntoIterator<Item = &'a Sample>) -> Result<PathBuf> {
    for sub in ["A", "B", "label"] {
        fs::create_dir_all(root.join(sub))?;
    }
    for s in samples {
        let name = format!("{}.png", s.pair.id);
        save_rgb_png(&root.join("A").join(&name), &s.pair.pre)?;
        save_rgb_png(&root.join("B").join(&name), &s.pair.post)?;
        save_mask_png(&root.join("label").join(&name), &s.mask)?;
    }
    Ok(root.to_path_buf())
}

/// Resizes a sample so both sides are the nearest positive multiple of `multiple`.
pub fn fit_to_multiple(sample: &Sample, multiple: usize) -> Sample {
    let snap = |n: usize| (((n as f64 / multiple as f64).round() as usize).max(1)) * multiple;
    let (h, w) = (snap(sample.pair.height()), snap(sample.pair.width()));
    if (h, w) == (sample.pair.height(), sample.pair.width()) {
        return sample.clone();
    }
    Sample {
        pair: sample.pair.resize(h, w),
        mask: sample.mask.resize_nearest(h, w),
        label: sample.label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic_dataset;

    #[test]
    fn synthetic_samples_survive_disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_synthetic_dataset(&SynthSpec::default(), 4, 1).unwrap();
        save_dataset_dir(dir.path(), &samples).unwrap();
        let loaded = load_dataset_dir(dir.path(), &LoadOptions::default()).unwrap();
        assert_eq!(loaded, samples);
    }

    #[test]
    fn mask_values_other_than_0_255_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        GrayImage::from_pixel(2, 2, Luma([7])).save(&p).unwrap();
        assert!(load_mask_png(&p).is_err());
    }

    #[test]
    fn missing_partner_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_synthetic_dataset(&SynthSpec::default(), 2, 1).unwrap();
        save_dataset_dir(dir.path(), &samples).unwrap();
        fs::remove_file(dir.path().join("B").join("synth_00001.png")).unwrap();
        assert!(load_dataset_dir(dir.path(), &LoadOptions::default()).is_err());
    }

    #[test]
    fn fit_snaps_to_stride() {
        let s = &generate_synthetic_dataset(&SynthSpec::default(), 1, 1).unwrap()[0];
        let odd = Sample {
            pair: s.pair.resize(70, 57),
            mask: s.mask.resize_nearest(70, 57),
            label: s.label,
        };
        let fit = fit_to_multiple(&odd, 16);
        assert_eq!((fit.pair.height(), fit.pair.width()), (64, 64));
        assert_eq!((fit.mask.height(), fit.mask.width()), (64, 64));
    }
}
