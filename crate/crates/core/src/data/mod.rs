//! Bi-temporal samples, weak labels, tiling and dataset splits.

mod io;
mod synth;

pub use io::{
    fit_to_multiple, load_dataset_dir, load_mask_png, load_rgb_png, save_dataset_dir, save_mask_png, save_rgb_png,
    DatasetMeta, LoadOptions, Normalization,
};
pub use synth::{generate_synthetic_dataset, ObjectKind, SynthSpec};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FlipAxis, Tensor};

/// Co-registered pre-event / post-event rasters, `C × H × W` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub pre: Tensor,
    pub post: Tensor,
}

impl ImagePair {
    pub fn new(id: impl Into<String>, pre: Tensor, post: Tensor) -> Result<Self> {
        if pre.shape() != post.shape() {
            return Err(Error::shape(format!(
                "pre {:?} and post {:?} differ",
                pre.shape(),
                post.shape()
            )));
        }
        Ok(ImagePair {
            id: id.into(),
            pre,
            post,
        })
    }

    pub fn height(&self) -> usize {
        self.pre.height()
    }

    pub fn width(&self) -> usize {
        self.pre.width()
    }

    pub fn flip(&self, axis: FlipAxis) -> ImagePair {
        ImagePair {
            id: self.id.clone(),
            pre: self.pre.flip(axis),
            post: self.post.flip(axis),
        }
    }

    pub fn resize(&self, h: usize, w: usize) -> ImagePair {
        ImagePair {
            id: self.id.clone(),
            pre: self.pre.resize_bilinear(h, w),
            post: self.post.resize_bilinear(h, w),
        }
    }
}

/// Binary change mask; 1 marks a changed pixel.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PixelMask {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl PixelMask {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape(format!("mask buffer {} != {h}x{w}", data.len())));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::shape("mask values must be 0 or 1"));
        }
        Ok(PixelMask { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        PixelMask {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x) as u8);
            }
        }
        PixelMask { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v as u8;
    }

    pub fn count_changed(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> PixelMask {
        PixelMask::from_fn(h, w, |y, x| self.get(y0 + y, x0 + x) == 1)
    }

    pub fn flip(&self, axis: FlipAxis) -> PixelMask {
        PixelMask::from_fn(self.h, self.w, |y, x| match axis {
            FlipAxis::Horizontal => self.get(y, self.w - 1 - x) == 1,
            FlipAxis::Vertical => self.get(self.h - 1 - y, x) == 1,
        })
    }

    pub fn resize_nearest(&self, h: usize, w: usize) -> PixelMask {
        let ys = crate::tensor::nearest_index(self.h, h);
        let xs = crate::tensor::nearest_index(self.w, w);
        PixelMask::from_fn(h, w, |y, x| self.get(ys[y], xs[x]) == 1)
    }
}

/// Image-level weak label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImageLabel {
    NoChange = 0,
    Change = 1,
}

impl ImageLabel {
    pub fn from_bool(changed: bool) -> Self {
        if changed {
            ImageLabel::Change
        } else {
            ImageLabel::NoChange
        }
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub pair: ImagePair,
    pub mask: PixelMask,
    pub label: ImageLabel,
}

/// `y = 1` iff the fraction of changed pixels exceeds `min_fraction`.
pub fn derive_image_label(mask: &PixelMask, min_fraction: f64) -> ImageLabel {
    if mask.is_empty() {
        return ImageLabel::NoChange;
    }
    let frac = mask.count_changed() as f64 / mask.len() as f64;
    ImageLabel::from_bool(frac > min_fraction)
}

/// Cuts a scene into non-overlapping `tile × tile` patches in row-major order.
/// Partial tiles at the right/bottom edges are dropped.
pub fn tile_scene(pair: &ImagePair, mask: &PixelMask, tile: usize) -> Result<Vec<(ImagePair, PixelMask)>> {
    if tile == 0 {
        return Err(Error::config("tile side must be positive"));
    }
    if (mask.height(), mask.width()) != (pair.height(), pair.width()) {
        return Err(Error::shape("mask and image pair sizes differ"));
    }
    let rows = pair.height() / tile;
    let cols = pair.width() / tile;
    let crop = |t: &Tensor, y0: usize, x0: usize| {
        Tensor::from_fn(t.channels(), tile, tile, |c, y, x| t.get(c, y0 + y, x0 + x))
    };
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (y0, x0) = (r * tile, c * tile);
            let id = format!("{}_r{r}_c{c}", pair.id);
            out.push((
                ImagePair {
                    id,
                    pre: crop(&pair.pre, y0, x0),
                    post: crop(&pair.post, y0, x0),
                },
                mask.crop(y0, x0, tile, tile),
            ));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Seeded shuffle, then floor allocation of val/test with the remainder going to train.
pub fn split_dataset<S: AsRef<str>>(ids: &[S], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    let SplitRatios { train, val, test } = ratios;
    if !(train > 0.0 && val > 0.0 && test > 0.0) || ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split ratios must be positive and sum to 1, got ({train}, {val}, {test})"
        )));
    }
    let n = ids.len();
    if n < 3 {
        return Err(Error::config(format!("need at least 3 samples to split, got {n}")));
    }
    let mut order: Vec<String> = ids.iter().map(|s| s.as_ref().to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    // tolerance absorbs products like 0.1 * 30 landing just under an integer
    let n_val = (n as f64 * val + 1e-9).floor() as usize;
    let n_test = (n as f64 * test + 1e-9).floor() as usize;
    let test_ids = order.split_off(n - n_test);
    let val_ids = order.split_off(n - n_test - n_val);
    Ok(DatasetSplit {
        train: order,
        val: val_ids,
        test: test_ids,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scene(h: usize, w: usize) -> (ImagePair, PixelMask) {
        let pre = Tensor::from_fn(3, h, w, |c, y, x| ((c * 7 + y * 3 + x) % 255) as f64 / 255.0);
        let post = pre.map(|v| 1.0 - v);
        let mask = PixelMask::from_fn(h, w, |y, x| (y + x) % 5 == 0);
        (ImagePair::new("s", pre, post).unwrap(), mask)
    }

    #[test]
    fn tiles_512_into_four() {
        let (p, m) = scene(512, 512);
        assert_eq!(tile_scene(&p, &m, 256).unwrap().len(), 4);
    }

    #[test]
    fn single_tile_is_identity() {
        let (p, m) = scene(256, 256);
        let tiles = tile_scene(&p, &m, 256).unwrap();
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0].0.pre, p.pre);
        assert_eq!(tiles[0].0.post, p.post);
        assert_eq!(tiles[0].1, m);
    }

    #[test]
    fn partial_tiles_dropped() {
        let (p, m) = scene(300, 300);
        let tiles = tile_scene(&p, &m, 256).unwrap();
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0].0.pre.get(2, 255, 255), p.pre.get(2, 255, 255));
        assert_eq!(tiles[0].1, m.crop(0, 0, 256, 256));
    }

    #[test]
    fn oversized_tile_gives_nothing() {
        let (p, m) = scene(40, 50);
        assert!(tile_scene(&p, &m, 64).unwrap().is_empty());
    }

    #[test]
    fn tiles_reassemble_scene() {
        let (p, m) = scene(48, 32);
        let tiles = tile_scene(&p, &m, 16).unwrap();
        assert_eq!(tiles.len(), 6);
        let mut pre = Tensor::zeros(3, 48, 32);
        let mut mask = PixelMask::zeros(48, 32);
        for (i, (tp, tm)) in tiles.iter().enumerate() {
            let (r, c) = (i / 2, i % 2);
            for y in 0..16 {
                for x in 0..16 {
                    for ch in 0..3 {
                        pre.set(ch, r * 16 + y, c * 16 + x, tp.pre.get(ch, y, x));
                    }
                    mask.set(r * 16 + y, c * 16 + x, tm.get(y, x) == 1);
                }
            }
        }
        assert_eq!(pre, p.pre);
        assert_eq!(mask, m);
    }

    #[test]
    fn weak_label_rule() {
        assert_eq!(derive_image_label(&PixelMask::zeros(8, 8), 0.0), ImageLabel::NoChange);
        assert_eq!(derive_image_label(&PixelMask::zeros(8, 8), 0.5), ImageLabel::NoChange);
        let mut one = PixelMask::zeros(256, 256);
        one.set(17, 200, true);
        assert_eq!(derive_image_label(&one, 0.0), ImageLabel::Change);
        let five_pct = PixelMask::from_fn(10, 10, |y, x| y == 0 && x < 5);
        assert_eq!(derive_image_label(&five_pct, 0.1), ImageLabel::NoChange);
        assert_eq!(derive_image_label(&five_pct, 0.0), ImageLabel::Change);
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn split_sizes() {
        let s = split_dataset(&ids(10), SplitRatios::default(), 1).unwrap();
        assert_eq!(s.sizes(), (8, 1, 1));
        let s = split_dataset(&ids(7434), SplitRatios::default(), 1).unwrap();
        assert_eq!(s.sizes(), (5948, 743, 743));
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_dataset(&ids(50), SplitRatios::default(), 9).unwrap();
        let b = split_dataset(&ids(50), SplitRatios::default(), 9).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(&ids(50), SplitRatios::default(), 10).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(split_dataset(&ids(2), SplitRatios::default(), 0).is_err());
        let bad = SplitRatios {
            train: 0.5,
            val: 0.1,
            test: 0.1,
        };
        assert!(split_dataset(&ids(10), bad, 0).is_err());
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(PixelMask::new(1, 2, vec![0, 2]).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 3usize..400, seed in any::<u64>()) {
            let all = ids(n);
            let s = split_dataset(&all, SplitRatios::default(), seed).unwrap();
            let mut seen: Vec<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
            prop_assert_eq!(seen.len(), n);
            seen.sort();
            seen.dedup();
            prop_assert_eq!(seen.len(), n);
        }
    }
}
