//! Dense channel-major `c × h × w` arrays and the spatial operators shared by
//! every stage: bilinear/nearest resizing, flips and elementwise helpers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single-sample feature volume stored channel-major (`c`, then rows, then columns).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self::full(c, h, w, 0.0)
    }

    pub fn full(c: usize, h: usize, w: usize, value: f64) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![value; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::shape(format!(
                "buffer of {} values cannot hold {c}x{h}x{w}",
                data.len()
            )));
        }
        Ok(Tensor { c, h, w, data })
    }

    pub fn from_fn(c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ch, y, x));
                }
            }
        }
        Tensor { c, h, w, data }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.ensure_same_shape(other)?;
        Ok(Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.ensure_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn ensure_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Stacks the channels of `self` followed by those of `other`.
    pub fn concat_channels(&self, other: &Tensor) -> Result<Tensor> {
        if (self.h, self.w) != (other.h, other.w) {
            return Err(Error::shape(format!(
                "cannot concatenate {:?} with {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Tensor {
            c: self.c + other.c,
            h: self.h,
            w: self.w,
            data,
        })
    }

    /// Splits off the first `c0` channels; inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, c0: usize) -> (Tensor, Tensor) {
        let cut = c0 * self.plane_len();
        (
            Tensor {
                c: c0,
                h: self.h,
                w: self.w,
                data: self.data[..cut].to_vec(),
            },
            Tensor {
                c: self.c - c0,
                h: self.h,
                w: self.w,
                data: self.data[cut..].to_vec(),
            },
        )
    }

    pub fn flip(&self, axis: FlipAxis) -> Tensor {
        let (h, w) = (self.h, self.w);
        Tensor::from_fn(self.c, h, w, |c, y, x| match axis {
            FlipAxis::Horizontal => self.get(c, y, w - 1 - x),
            FlipAxis::Vertical => self.get(c, h - 1 - y, x),
        })
    }

    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Tensor {
        if (out_h, out_w) == (self.h, self.w) {
            return self.clone();
        }
        let ry = Interp1d::new(self.h, out_h);
        let rx = Interp1d::new(self.w, out_w);
        let mut out = Tensor::zeros(self.c, out_h, out_w);
        for c in 0..self.c {
            let src = self.plane(c);
            let dst = out.plane_mut(c);
            for y in 0..out_h {
                let (y0, y1, fy) = (ry.lo[y], ry.hi[y], ry.frac[y]);
                for x in 0..out_w {
                    let (x0, x1, fx) = (rx.lo[x], rx.hi[x], rx.frac[x]);
                    let top = src[y0 * self.w + x0] * (1.0 - fx) + src[y0 * self.w + x1] * fx;
                    let bot = src[y1 * self.w + x0] * (1.0 - fx) + src[y1 * self.w + x1] * fx;
                    dst[y * out_w + x] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        out
    }

    /// Adjoint of [`Tensor::resize_bilinear`]: maps a gradient at the output
    /// resolution back onto an `in_h × in_w` input.
    pub fn resize_bilinear_adjoint(&self, in_h: usize, in_w: usize) -> Tensor {
        if (in_h, in_w) == (self.h, self.w) {
            return self.clone();
        }
        let ry = Interp1d::new(in_h, self.h);
        let rx = Interp1d::new(in_w, self.w);
        let mut out = Tensor::zeros(self.c, in_h, in_w);
        for c in 0..self.c {
            let g = self.plane(c);
            let dst = out.plane_mut(c);
            for y in 0..self.h {
                let (y0, y1, fy) = (ry.lo[y], ry.hi[y], ry.frac[y]);
                for x in 0..self.w {
                    let (x0, x1, fx) = (rx.lo[x], rx.hi[x], rx.frac[x]);
                    let v = g[y * self.w + x];
                    dst[y0 * in_w + x0] += v * (1.0 - fy) * (1.0 - fx);
                    dst[y0 * in_w + x1] += v * (1.0 - fy) * fx;
                    dst[y1 * in_w + x0] += v * fy * (1.0 - fx);
                    dst[y1 * in_w + x1] += v * fy * fx;
                }
            }
        }
        out
    }

    pub fn resize_nearest(&self, out_h: usize, out_w: usize) -> Tensor {
        let ys = nearest_index(self.h, out_h);
        let xs = nearest_index(self.w, out_w);
        Tensor::from_fn(self.c, out_h, out_w, |c, y, x| self.get(c, ys[y], xs[x]))
    }
}

/// Flip axis used by test-time augmentation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlipAxis {
    /// Left-right mirror (columns reversed).
    #[default]
    Horizontal,
    /// Top-bottom mirror (rows reversed).
    Vertical,
}

/// Half-pixel-centred linear interpolation weights along one axis.
struct Interp1d {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

impl Interp1d {
    fn new(n_in: usize, n_out: usize) -> Self {
        let scale = n_in as f64 / n_out as f64;
        let mut lo = Vec::with_capacity(n_out);
        let mut hi = Vec::with_capacity(n_out);
        let mut frac = Vec::with_capacity(n_out);
        for i in 0..n_out {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            lo.push(i0);
            hi.push(i1);
            frac.push(if i1 == i0 { 0.0 } else { src - i0 as f64 });
        }
        Interp1d { lo, hi, frac }
    }
}

pub(crate) fn nearest_index(n_in: usize, n_out: usize) -> Vec<usize> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| (((i as f64 + 0.5) * scale).floor() as usize).min(n_in - 1))
        .collect()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_identity_and_constant() {
        let t = Tensor::from_fn(2, 3, 5, |c, y, x| (c * 100 + y * 10 + x) as f64);
        assert_eq!(t.resize_bilinear(3, 5), t);
        let k = Tensor::full(1, 4, 4, 2.5).resize_bilinear(7, 9);
        assert!(k.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn bilinear_halving_averages_pairs() {
        let t = Tensor::from_vec(1, 1, 4, vec![1.0, 3.0, 5.0, 9.0]).unwrap();
        let r = t.resize_bilinear(1, 2);
        assert_eq!(r.data(), &[2.0, 7.0]);
    }

    #[test]
    fn bilinear_adjoint_matches_inner_product() {
        let x = Tensor::from_fn(1, 4, 3, |_, y, x| (y * 3 + x) as f64 * 0.37 - 1.0);
        let g = Tensor::from_fn(1, 9, 7, |_, y, x| ((y * 7 + x) % 5) as f64 - 2.0);
        let ax = x.resize_bilinear(9, 7);
        let atg = g.resize_bilinear_adjoint(4, 3);
        let lhs: f64 = ax.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(atg.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn resize_commutes_with_flip() {
        let t = Tensor::from_fn(1, 5, 6, |_, y, x| ((y * 31 + x * 17) % 11) as f64);
        for (h, w) in [(10, 12), (3, 3), (8, 13)] {
            for axis in [FlipAxis::Horizontal, FlipAxis::Vertical] {
                let a = t.flip(axis).resize_bilinear(h, w);
                let b = t.resize_bilinear(h, w).flip(axis);
                for (u, v) in a.data().iter().zip(b.data()) {
                    assert!((u - v).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn concat_split_inverse() {
        let a = Tensor::full(2, 2, 2, 1.0);
        let b = Tensor::full(3, 2, 2, 2.0);
        let ab = a.concat_channels(&b).unwrap();
        assert_eq!(ab.shape(), (5, 2, 2));
        let (a2, b2) = ab.split_channels(2);
        assert_eq!((a2, b2), (a, b));
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
