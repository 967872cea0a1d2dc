//! Six-panel probability-map rows: pre, post, ground truth, teacher CAM,
//! student map and student+MSI map (the last three jet-coloured).

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::data::{PixelMask, Sample};
use crate::error::{Error, Result};
use crate::kd::{kd_forward, ChangeProbabilityMap};
use crate::msi::{multiscale_sigmoid_inference, ScaleSet};
use crate::models::SiameseNet;
use crate::tensor::Tensor;

/// White separator between panels, in pixels.
pub const GUTTER: usize = 4;
pub const PANELS: usize = 6;

/// Classic jet colormap: 0 → dark blue, 0.5 → green, 1 → dark red.
pub fn jet(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let ch = |offset: f64| (1.5 - (4.0 * v - offset).abs()).clamp(0.0, 1.0);
    [ch(3.0), ch(2.0), ch(1.0)].map(|c| (c * 255.0).round() as u8)
}

fn heat_panel(m: &ChangeProbabilityMap) -> impl Fn(usize, usize) -> [u8; 3] + '_ {
    move |y, x| jet(m.tensor().get(0, y, x))
}

fn rgb_panel(t: &Tensor) -> impl Fn(usize, usize) -> [u8; 3] + '_ {
    move |y, x| [0, 1, 2].map(|c| (t.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8)
}

pub fn row_width(w: usize) -> usize {
    PANELS * w + (PANELS - 1) * GUTTER
}

/// Renders one row; every map must already be at the sample's resolution.
pub fn render_row(
    sample: &Sample,
    cam: &ChangeProbabilityMap,
    student: &ChangeProbabilityMap,
    msi: &ChangeProbabilityMap,
) -> Result<RgbImage> {
    let (h, w) = (sample.pair.height(), sample.pair.width());
    for m in [cam, student, msi] {
        if (m.height(), m.width()) != (h, w) {
            return Err(Error::shape("figure maps must match the sample size"));
        }
    }
    let mut img = RgbImage::from_pixel(row_width(w) as u32, h as u32, Rgb([255, 255, 255]));
    let gt = |y: usize, x: usize| [sample.mask.get(y, x) * 255; 3];
    let panels: [Box<dyn Fn(usize, usize) -> [u8; 3] + '_>; PANELS] = [
        Box::new(rgb_panel(&sample.pair.pre)),
        Box::new(rgb_panel(&sample.pair.post)),
        Box::new(gt),
        Box::new(heat_panel(cam)),
        Box::new(heat_panel(student)),
        Box::new(heat_panel(msi)),
    ];
    for (i, panel) in panels.iter().enumerate() {
        let x0 = i * (w + GUTTER);
        for y in 0..h {
            for x in 0..w {
                img.put_pixel((x0 + x) as u32, y as u32, Rgb(panel(y, x)));
            }
        }
    }
    Ok(img)
}

/// Reads a heatmap panel back as a mask: red-dominant pixels count as change.
pub fn panel_to_mask(img: &RgbImage, panel: usize, h: usize, w: usize) -> PixelMask {
    let x0 = panel * (w + GUTTER);
    PixelMask::from_fn(h, w, |y, x| {
        let p = img.get_pixel((x0 + x) as u32, y as u32);
        p[0] > p[2]
    })
}

#[derive(Clone, Debug, Default)]
pub struct FigureOutcome {
    pub written: Vec<PathBuf>,
    pub missing: Vec<String>,
}

/// One PNG per requested id found in `samples`; unknown ids are logged and skipped.
pub fn write_figures(
    dir: &Path,
    samples: &[Sample],
    ids: &[String],
    teacher: &SiameseNet,
    student: &SiameseNet,
    scales: &ScaleSet,
) -> Result<FigureOutcome> {
    std::fs::create_dir_all(dir)?;
    let mut out = FigureOutcome::default();
    for id in ids {
        let Some(sample) = samples.iter().find(|s| &s.pair.id == id) else {
            log::warn!("figure: sample {id} not found, skipping");
            out.missing.push(id.clone());
            continue;
        };
        let (h, w) = (sample.pair.height(), sample.pair.width());
        let f = kd_forward(teacher, student, &sample.pair)?;
        let msi = multiscale_sigmoid_inference(student, &sample.pair, scales)?;
        let img = render_row(sample, &f.cam.resize(h, w), &f.student_prob.resize(h, w), &msi)?;
        let path = dir.join(format!("{id}.png"));
        img.save(&path)?;
        out.written.push(path);
    }
    if out.written.is_empty() && !ids.is_empty() {
        return Err(Error::Config(format!("none of the requested samples exist: {}", ids.join(", "))));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ImageLabel, ImagePair};
    use crate::kd::Provenance;
    use crate::metrics::{class_iou, confusion, Class};

    fn sample() -> Sample {
        let mask = PixelMask::from_fn(16, 20, |y, x| (4..11).contains(&y) && (3..9).contains(&x));
        let pre = Tensor::full(3, 16, 20, 0.3);
        let post = Tensor::from_fn(3, 16, 20, |_, y, x| if mask.get(y, x) == 1 { 0.8 } else { 0.3 });
        Sample {
            pair: ImagePair::new("s", pre, post).unwrap(),
            mask,
            label: ImageLabel::Change,
        }
    }

    #[test]
    fn jet_endpoints() {
        assert_eq!(jet(0.0), [0, 0, 128]);
        assert_eq!(jet(1.0), [128, 0, 0]);
        assert_eq!(jet(0.5), [128, 255, 128]);
    }

    #[test]
    fn row_dimensions() {
        let s = sample();
        let m = ChangeProbabilityMap::from_tensor(Tensor::zeros(1, 16, 20), Provenance::Msi).unwrap();
        let img = render_row(&s, &m, &m, &m).unwrap();
        assert_eq!(img.dimensions(), ((6 * 20 + 5 * GUTTER) as u32, 16));
    }

    #[test]
    fn perfect_map_panel_matches_truth() {
        let s = sample();
        let t = Tensor::from_fn(1, 16, 20, |_, y, x| s.mask.get(y, x) as f64);
        let m = ChangeProbabilityMap::from_tensor(t, Provenance::Msi).unwrap();
        let img = render_row(&s, &m, &m, &m).unwrap();
        let back = panel_to_mask(&img, 5, 16, 20);
        assert!(class_iou(&confusion(&back, &s.mask).unwrap(), Class::Change) > 0.99);
    }
}
