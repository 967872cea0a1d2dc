//! Trainable layers with explicit forward/backward passes.
//!
//! Every `forward` returns the output together with a cache holding what the
//! matching `backward` needs. `backward` accumulates parameter gradients into
//! [`Param::grad`] and returns the gradient with respect to the layer input.
//! Calling `forward` twice and `backward` twice on the same layer (the two
//! branches of a Siamese pass) therefore sums both contributions into the
//! shared weights.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A named trainable buffer and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Param {
            shape: shape.to_vec(),
            value: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let mut p = Param::zeros(shape);
        let dist = Normal::new(0.0, std).expect("positive std");
        for v in &mut p.value {
            *v = dist.sample(rng);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Anything owning named parameters. Visit order is fixed, so optimizer state
/// and checkpoints can be keyed by position as well as by name.
pub trait Parameterized {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_params_mut("", &mut |_, p| p.zero_grad());
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.len());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// 2-D convolution with square kernels, zero padding, stride and dilation.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub weight: Param,
    pub bias: Option<Param>,
}

#[derive(Clone, Debug)]
pub struct ConvCache {
    cols: Vec<f64>,
    in_shape: (usize, usize, usize),
    out_hw: (usize, usize),
}

impl Conv2d {
    /// He-normal initialised convolution; `padding` keeps the spatial size for stride 1.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: dilation * (kernel - 1) / 2,
            dilation,
            weight: Param::normal(&[out_channels, in_channels, kernel, kernel], std, rng),
            bias: bias.then(|| Param::zeros(&[out_channels])),
        }
    }

    /// A 1×1 projection initialised with a small Gaussian.
    pub fn pointwise<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, std: f64, rng: &mut R) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel: 1,
            stride: 1,
            padding: 0,
            dilation: 1,
            weight: Param::normal(&[out_channels, in_channels, 1, 1], std, rng),
            bias: Some(Param::zeros(&[out_channels])),
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let span = self.dilation * (self.kernel - 1) + 1;
        (
            (h + 2 * self.padding - span) / self.stride + 1,
            (w + 2 * self.padding - span) / self.stride + 1,
        )
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn im2col(&self, x: &Tensor, oh: usize, ow: usize) -> Vec<f64> {
        let (c, h, w) = x.shape();
        let k = self.kernel;
        let p = oh * ow;
        if k == 1 && self.stride == 1 && self.padding == 0 {
            return x.data().to_vec();
        }
        let mut cols = vec![0.0; self.patch_len() * p];
        for ch in 0..c {
            let plane = x.plane(ch);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ch * k + ky) * k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky * self.dilation) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx * self.dilation) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, gcols: &[f64], in_shape: (usize, usize, usize), oh: usize, ow: usize) -> Tensor {
        let (c, h, w) = in_shape;
        let k = self.kernel;
        let p = oh * ow;
        if k == 1 && self.stride == 1 && self.padding == 0 {
            return Tensor::from_vec(c, h, w, gcols.to_vec()).expect("pointwise shape");
        }
        let mut gx = Tensor::zeros(c, h, w);
        for ch in 0..c {
            let plane = gx.plane_mut(ch);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ch * k + ky) * k + kx;
                    let src = &gcols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky * self.dilation) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = iy as usize * w;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx * self.dilation) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                plane[base + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        if x.channels() != self.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        let (h, w) = (x.height(), x.width());
        let span = self.dilation * (self.kernel - 1) + 1;
        if h + 2 * self.padding < span || w + 2 * self.padding < span {
            return Err(Error::shape(format!("input {h}x{w} smaller than kernel span {span}")));
        }
        let (oh, ow) = self.output_hw(h, w);
        let p = oh * ow;
        let kk = self.patch_len();
        let cols = self.im2col(x, oh, ow);
        let mut out = vec![0.0; self.out_channels * p];
        {
            let wv = ArrayView2::from_shape((self.out_channels, kk), &self.weight.value).expect("weight shape");
            let cv = ArrayView2::from_shape((kk, p), &cols).expect("cols shape");
            let mut ov = ArrayViewMut2::from_shape((self.out_channels, p), &mut out).expect("out shape");
            general_mat_mul(1.0, &wv, &cv, 0.0, &mut ov);
        }
        if let Some(b) = &self.bias {
            for (o, chunk) in out.chunks_mut(p).enumerate() {
                let bo = b.value[o];
                chunk.iter_mut().for_each(|v| *v += bo);
            }
        }
        let y = Tensor::from_vec(self.out_channels, oh, ow, out)?;
        Ok((
            y,
            ConvCache {
                cols,
                in_shape: x.shape(),
                out_hw: (oh, ow),
            },
        ))
    }

    /// Accumulates weight/bias gradients; returns the input gradient when requested.
    pub fn backward(&mut self, cache: &ConvCache, gy: &Tensor, want_input_grad: bool) -> Option<Tensor> {
        let (oh, ow) = cache.out_hw;
        let p = oh * ow;
        let kk = self.patch_len();
        debug_assert_eq!(gy.shape(), (self.out_channels, oh, ow));
        let gyv = ArrayView2::from_shape((self.out_channels, p), gy.data()).expect("grad shape");
        let cv = ArrayView2::from_shape((kk, p), &cache.cols).expect("cols shape");
        {
            let mut gw = ArrayViewMut2::from_shape((self.out_channels, kk), &mut self.weight.grad).expect("weight grad");
            general_mat_mul(1.0, &gyv, &cv.t(), 1.0, &mut gw);
        }
        if let Some(b) = &mut self.bias {
            for (o, chunk) in gy.data().chunks(p).enumerate() {
                b.grad[o] += chunk.iter().sum::<f64>();
            }
        }
        if !want_input_grad {
            return None;
        }
        let mut gcols = vec![0.0; kk * p];
        {
            let wv = ArrayView2::from_shape((self.out_channels, kk), &self.weight.value).expect("weight shape");
            let mut gc = ArrayViewMut2::from_shape((kk, p), &mut gcols).expect("gcols shape");
            general_mat_mul(1.0, &wv.t(), &gyv, 0.0, &mut gc);
        }
        Some(self.col2im(&gcols, cache.in_shape, oh, ow))
    }
}

impl Parameterized for Conv2d {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of ReLU given the forward *output*.
pub fn relu_backward(out: &Tensor, gy: &Tensor) -> Tensor {
    gy.zip_map(out, |g, o| if o > 0.0 { g } else { 0.0 })
        .expect("relu cache shape")
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
pub fn max_pool2(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (c, h, w) = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(c, oh, ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = x.plane(ch);
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * oy + dy) * w + 2 * ox + dx;
                    if plane[idx] > plane[best] {
                        best = idx;
                    }
                }
                out.set(ch, oy, ox, plane[best]);
                arg.push(base + best);
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward(argmax: &[usize], in_shape: (usize, usize, usize), gy: &Tensor) -> Tensor {
    let (c, h, w) = in_shape;
    let mut gx = Tensor::zeros(c, h, w);
    let d = gx.data_mut();
    for (&i, &g) in argmax.iter().zip(gy.data()) {
        d[i] += g;
    }
    gx
}

/// Per-channel spatial mean, returned as a `c × 1 × 1` tensor.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let n = x.plane_len() as f64;
    Tensor::from_fn(x.channels(), 1, 1, |c, _, _| x.plane(c).iter().sum::<f64>() / n)
}

pub fn global_avg_pool_backward(gy: &Tensor, h: usize, w: usize) -> Tensor {
    let n = (h * w) as f64;
    Tensor::from_fn(gy.channels(), h, w, |c, _, _| gy.get(c, 0, 0) / n)
}

/// Per-sample, per-channel normalisation with a learned affine map.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct NormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl InstanceNorm {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Param::zeros(&[channels]);
        gamma.value.iter_mut().for_each(|v| *v = 1.0);
        InstanceNorm {
            gamma,
            beta: Param::zeros(&[channels]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, NormCache)> {
        if x.channels() != self.gamma.len() {
            return Err(Error::shape(format!(
                "norm expects {} channels, got {}",
                self.gamma.len(),
                x.channels()
            )));
        }
        let (c, h, w) = x.shape();
        let n = (h * w) as f64;
        let mut xhat = Tensor::zeros(c, h, w);
        let mut y = Tensor::zeros(c, h, w);
        let mut inv_std = Vec::with_capacity(c);
        for k in 0..c {
            let plane = x.plane(k);
            let mean = plane.iter().sum::<f64>() / n;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std.push(inv);
            let (g, b) = (self.gamma.value[k], self.beta.value[k]);
            for ((xh, out), &v) in xhat.plane_mut(k).iter_mut().zip(y.plane_mut(k)).zip(plane) {
                *xh = (v - mean) * inv;
                *out = g * *xh + b;
            }
        }
        Ok((y, NormCache { xhat, inv_std }))
    }

    pub fn backward(&mut self, cache: &NormCache, gy: &Tensor) -> Tensor {
        let (c, h, w) = gy.shape();
        let n = (h * w) as f64;
        let mut gx = Tensor::zeros(c, h, w);
        for k in 0..c {
            let (g, xh) = (gy.plane(k), cache.xhat.plane(k));
            let sum_g: f64 = g.iter().sum();
            let sum_gx: f64 = g.iter().zip(xh).map(|(a, b)| a * b).sum();
            self.gamma.grad[k] += sum_gx;
            self.beta.grad[k] += sum_g;
            let gamma = self.gamma.value[k];
            let (mean_d, mean_dx) = (gamma * sum_g / n, gamma * sum_gx / n);
            let inv = cache.inv_std[k];
            for ((out, &gi), &xi) in gx.plane_mut(k).iter_mut().zip(g).zip(xh) {
                *out = inv * (gamma * gi - mean_d - xi * mean_dx);
            }
        }
        gx
    }
}

impl Parameterized for InstanceNorm {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// Sequential building blocks for backbones.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    Norm(InstanceNorm),
    Relu,
    MaxPool2,
    Bottleneck(Box<Bottleneck>),
}

#[derive(Clone, Debug)]
pub enum LayerCache {
    Conv(ConvCache),
    Norm(NormCache),
    Relu(Tensor),
    MaxPool2 {
        argmax: Vec<usize>,
        in_shape: (usize, usize, usize),
    },
    Bottleneck(Box<BottleneckCache>),
}

impl Layer {
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerCache)> {
        Ok(match self {
            Layer::Conv(conv) => {
                let (y, c) = conv.forward(x)?;
                (y, LayerCache::Conv(c))
            }
            Layer::Norm(norm) => {
                let (y, c) = norm.forward(x)?;
                (y, LayerCache::Norm(c))
            }
            Layer::Relu => {
                let y = relu(x);
                (y.clone(), LayerCache::Relu(y))
            }
            Layer::MaxPool2 => {
                let (y, argmax) = max_pool2(x);
                (
                    y,
                    LayerCache::MaxPool2 {
                        argmax,
                        in_shape: x.shape(),
                    },
                )
            }
            Layer::Bottleneck(b) => {
                let (y, c) = b.forward(x)?;
                (y, LayerCache::Bottleneck(Box::new(c)))
            }
        })
    }

    pub fn backward(&mut self, cache: &LayerCache, gy: &Tensor, want_input_grad: bool) -> Option<Tensor> {
        match (self, cache) {
            (Layer::Conv(conv), LayerCache::Conv(c)) => conv.backward(c, gy, want_input_grad),
            (Layer::Norm(norm), LayerCache::Norm(c)) => Some(norm.backward(c, gy)),
            (Layer::Relu, LayerCache::Relu(out)) => Some(relu_backward(out, gy)),
            (Layer::MaxPool2, LayerCache::MaxPool2 { argmax, in_shape }) => {
                Some(max_pool2_backward(argmax, *in_shape, gy))
            }
            (Layer::Bottleneck(b), LayerCache::Bottleneck(c)) => b.backward(c, gy, want_input_grad),
            _ => unreachable!("layer/cache kind mismatch"),
        }
    }
}

/// A chain of layers evaluated in order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<LayerCache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (y, c) = layer.forward(&cur)?;
            caches.push(c);
            cur = y;
        }
        Ok((cur, caches))
    }

    pub fn backward(&mut self, caches: &[LayerCache], gy: &Tensor, want_input_grad: bool) -> Option<Tensor> {
        let mut g = gy.clone();
        let n = self.layers.len();
        for (i, (layer, cache)) in self.layers.iter_mut().zip(caches).enumerate().rev() {
            let need = want_input_grad || i > 0;
            match layer.backward(cache, &g, need) {
                Some(gx) => g = gx,
                None => {
                    debug_assert_eq!(i, 0);
                    return None;
                }
            }
        }
        if n == 0 || want_input_grad {
            Some(g)
        } else {
            None
        }
    }
}

impl Parameterized for Sequential {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, layer) in self.layers.iter().enumerate() {
            let p = join(prefix, &i.to_string());
            match layer {
                Layer::Conv(c) => c.visit_params(&p, f),
                Layer::Norm(n) => n.visit_params(&p, f),
                Layer::Bottleneck(b) => b.visit_params(&p, f),
                Layer::Relu | Layer::MaxPool2 => {}
            }
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = join(prefix, &i.to_string());
            match layer {
                Layer::Conv(c) => c.visit_params_mut(&p, f),
                Layer::Norm(n) => n.visit_params_mut(&p, f),
                Layer::Bottleneck(b) => b.visit_params_mut(&p, f),
                Layer::Relu | Layer::MaxPool2 => {}
            }
        }
    }
}

/// ResNet bottleneck: 1×1 reduce, 3×3 (strided), 1×1 expand, plus shortcut.
/// The expanding conv starts at zero so every block is the identity (or its
/// projection) at initialisation; there is no normalisation layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Bottleneck {
    pub reduce: Conv2d,
    pub spatial: Conv2d,
    pub expand: Conv2d,
    pub shortcut: Option<Conv2d>,
}

#[derive(Clone, Debug)]
pub struct BottleneckCache {
    reduce: ConvCache,
    reduce_out: Tensor,
    spatial: ConvCache,
    spatial_out: Tensor,
    expand: ConvCache,
    shortcut: Option<ConvCache>,
    out: Tensor,
}

impl Bottleneck {
    pub fn new<R: Rng + ?Sized>(in_c: usize, mid_c: usize, out_c: usize, stride: usize, rng: &mut R) -> Self {
        let reduce = Conv2d::new(in_c, mid_c, 1, 1, 1, true, rng);
        let spatial = Conv2d::new(mid_c, mid_c, 3, stride, 1, true, rng);
        let mut expand = Conv2d::new(mid_c, out_c, 1, 1, 1, true, rng);
        expand.weight.value.iter_mut().for_each(|v| *v = 0.0);
        let shortcut = (in_c != out_c || stride != 1).then(|| Conv2d::new(in_c, out_c, 1, stride, 1, false, rng));
        Bottleneck {
            reduce,
            spatial,
            expand,
            shortcut,
        }
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, BottleneckCache)> {
        let (a, reduce) = self.reduce.forward(x)?;
        let a = relu(&a);
        let (b, spatial) = self.spatial.forward(&a)?;
        let b = relu(&b);
        let (mut c, expand) = self.expand.forward(&b)?;
        let shortcut = match &self.shortcut {
            Some(conv) => {
                let (s, cache) = conv.forward(x)?;
                c.add_assign(&s)?;
                Some(cache)
            }
            None => {
                c.add_assign(x)?;
                None
            }
        };
        let out = relu(&c);
        Ok((
            out.clone(),
            BottleneckCache {
                reduce,
                reduce_out: a,
                spatial,
                spatial_out: b,
                expand,
                shortcut,
                out,
            },
        ))
    }

    fn backward(&mut self, cache: &BottleneckCache, gy: &Tensor, want_input_grad: bool) -> Option<Tensor> {
        let g = relu_backward(&cache.out, gy);
        let gb = self.expand.backward(&cache.expand, &g, true).expect("requested");
        let gb = relu_backward(&cache.spatial_out, &gb);
        let ga = self.spatial.backward(&cache.spatial, &gb, true).expect("requested");
        let ga = relu_backward(&cache.reduce_out, &ga);
        let gx_main = self.reduce.backward(&cache.reduce, &ga, want_input_grad);
        let gx_short = match (&mut self.shortcut, &cache.shortcut) {
            (Some(conv), Some(c)) => conv.backward(c, &g, want_input_grad),
            _ => want_input_grad.then(|| g.clone()),
        };
        match (gx_main, gx_short) {
            (Some(mut a), Some(b)) => {
                a.add_assign(&b).expect("shortcut shape");
                Some(a)
            }
            _ => None,
        }
    }
}

impl Parameterized for Bottleneck {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.reduce.visit_params(&join(prefix, "reduce"), f);
        self.spatial.visit_params(&join(prefix, "spatial"), f);
        self.expand.visit_params(&join(prefix, "expand"), f);
        if let Some(s) = &self.shortcut {
            s.visit_params(&join(prefix, "shortcut"), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.reduce.visit_params_mut(&join(prefix, "reduce"), f);
        self.spatial.visit_params_mut(&join(prefix, "spatial"), f);
        self.expand.visit_params_mut(&join(prefix, "expand"), f);
        if let Some(s) = &mut self.shortcut {
            s.visit_params_mut(&join(prefix, "shortcut"), f);
        }
    }
}
