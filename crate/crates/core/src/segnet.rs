//! Siamese encoder/decoder change-segmentation network trained on pseudo labels.
//!
//! Layout: a shared backbone encodes both images; the high-level difference
//! `F1 − F2` goes through a multi-rate context block (parallel dilated 3×3
//! convolutions plus an image-pooling branch, fused by a 1×1 conv); the
//! decoder upsamples that context to the low-level tap, concatenates the
//! reduced low-level difference `F1low − F2low`, and predicts two-class
//! logits that are bilinearly upsampled to the input size.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ImagePair, PixelMask, Sample};
use crate::error::{Error, Result};
use crate::metrics::{class_iou, confusion, Class, ConfusionMatrix};
use crate::models::layers::{global_avg_pool, global_avg_pool_backward, join, relu, relu_backward};
use crate::models::{Backbone, BackboneConfig, BackboneOutput, Checkpoint, Conv2d, ConvCache, Param, Parameterized};
use crate::optim::{Optimizer, OptimizerKind, PolySchedule};
use crate::seed::derive_seed;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegNetConfig {
    pub backbone: BackboneConfig,
    pub dilations: Vec<usize>,
    pub context_channels: usize,
    pub low_channels: usize,
    pub decoder_channels: usize,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        SegNetConfig {
            backbone: BackboneConfig::default(),
            dilations: vec![1, 2, 4],
            context_channels: 32,
            low_channels: 16,
            decoder_channels: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegNet {
    config: SegNetConfig,
    seed: u64,
    pub encoder: Backbone,
    pub branches: Vec<Conv2d>,
    pub pool_proj: Conv2d,
    pub fuse: Conv2d,
    pub low_reduce: Conv2d,
    pub decode: Conv2d,
    pub classifier: Conv2d,
}

/// Internal activations of one forward pass.
#[derive(Clone, Debug)]
pub struct SegTrace {
    pub pre: BackboneOutput,
    pub post: BackboneOutput,
    pub diff_high: Tensor,
    pub diff_low: Tensor,
    branches: Vec<(ConvCache, Tensor)>,
    pool_in_hw: (usize, usize),
    pool: (ConvCache, Tensor),
    fuse: (ConvCache, Tensor),
    low: (ConvCache, Tensor),
    decode: (ConvCache, Tensor),
    classifier: ConvCache,
    ctx_hw: (usize, usize),
    logits_hw: (usize, usize),
}

impl SegNet {
    pub fn new(config: &SegNetConfig, seed: u64) -> Result<Self> {
        if config.dilations.is_empty() || config.context_channels == 0 || config.decoder_channels == 0 {
            return Err(Error::config("segnet needs dilations and non-zero widths"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Backbone::new(&config.backbone, &mut rng)?;
        let high = encoder.out_channels();
        let low = config.backbone.low_channels();
        let ctx = config.context_channels;
        let branches = config
            .dilations
            .iter()
            .map(|&d| Conv2d::new(high, ctx, 3, 1, d, true, &mut rng))
            .collect();
        let pool_proj = Conv2d::new(high, ctx, 1, 1, 1, true, &mut rng);
        let fuse = Conv2d::new(ctx * (config.dilations.len() + 1), ctx, 1, 1, 1, true, &mut rng);
        let low_reduce = Conv2d::new(low, config.low_channels, 1, 1, 1, true, &mut rng);
        let decode = Conv2d::new(ctx + config.low_channels, config.decoder_channels, 3, 1, 1, true, &mut rng);
        let classifier = Conv2d::pointwise(config.decoder_channels, 2, (1.0 / config.decoder_channels as f64).sqrt(), &mut rng);
        Ok(SegNet {
            config: config.clone(),
            seed,
            encoder,
            branches,
            pool_proj,
            fuse,
            low_reduce,
            decode,
            classifier,
        })
    }

    pub fn config(&self) -> &SegNetConfig {
        &self.config
    }

    pub fn input_multiple(&self) -> usize {
        self.encoder.output_stride()
    }

    pub fn forward(&self, pair: &ImagePair) -> Result<(Tensor, SegTrace)> {
        let pre = self.encoder.forward(&pair.pre)?;
        let post = self.encoder.forward(&pair.post)?;
        let diff_high = pre.features.zip_map(&post.features, |a, b| a - b)?;
        let diff_low = pre.low.zip_map(&post.low, |a, b| a - b)?;
        let (hh, hw) = (diff_high.height(), diff_high.width());

        let mut branches = Vec::with_capacity(self.branches.len());
        let mut ctx_in: Option<Tensor> = None;
        for conv in &self.branches {
            let (y, c) = conv.forward(&diff_high)?;
            let y = relu(&y);
            ctx_in = Some(match ctx_in {
                None => y.clone(),
                Some(acc) => acc.concat_channels(&y)?,
            });
            branches.push((c, y));
        }
        let pooled = global_avg_pool(&diff_high);
        let (p, pc) = self.pool_proj.forward(&pooled)?;
        let p = relu(&p);
        let p_wide = p.resize_bilinear(hh, hw);
        let ctx_in = ctx_in.expect("at least one branch").concat_channels(&p_wide)?;
        let (ctx, fc) = self.fuse.forward(&ctx_in)?;
        let ctx = relu(&ctx);

        let (low, lc) = self.low_reduce.forward(&diff_low)?;
        let low = relu(&low);
        let (lh, lw) = (low.height(), low.width());
        let ctx_up = ctx.resize_bilinear(lh, lw);
        let dec_in = ctx_up.concat_channels(&low)?;
        let (dec, dc) = self.decode.forward(&dec_in)?;
        let dec = relu(&dec);
        let (logits_low, cc) = self.classifier.forward(&dec)?;
        let logits = logits_low.resize_bilinear(pair.height(), pair.width());
        Ok((
            logits,
            SegTrace {
                pre,
                post,
                diff_high,
                diff_low,
                branches,
                pool_in_hw: (hh, hw),
                pool: (pc, p),
                fuse: (fc, ctx),
                low: (lc, low),
                decode: (dc, dec),
                classifier: cc,
                ctx_hw: (hh, hw),
                logits_hw: (lh, lw),
            },
        ))
    }

    /// Per-pixel two-channel logits (background, change) at input resolution.
    pub fn logits(&self, pair: &ImagePair) -> Result<Tensor> {
        Ok(self.forward(pair)?.0)
    }

    pub fn backward(&mut self, trace: &SegTrace, g_logits: &Tensor) {
        let (lh, lw) = trace.logits_hw;
        let g = g_logits.resize_bilinear_adjoint(lh, lw);
        let g = self.classifier.backward(&trace.classifier, &g, true).expect("requested");
        let g = relu_backward(&trace.decode.1, &g);
        let g = self.decode.backward(&trace.decode.0, &g, true).expect("requested");
        let (g_ctx_up, g_low) = g.split_channels(self.config.context_channels);
        let g_low = relu_backward(&trace.low.1, &g_low);
        let g_diff_low = self.low_reduce.backward(&trace.low.0, &g_low, true).expect("requested");

        let (hh, hw) = trace.ctx_hw;
        let g_ctx = g_ctx_up.resize_bilinear_adjoint(hh, hw);
        let g_ctx = relu_backward(&trace.fuse.1, &g_ctx);
        let g_ctx_in = self.fuse.backward(&trace.fuse.0, &g_ctx, true).expect("requested");
        let ctx = self.config.context_channels;
        let mut g_diff_high = Tensor::zeros(trace.diff_high.channels(), hh, hw);
        let mut rest = g_ctx_in;
        for (conv, (cache, out)) in self.branches.iter_mut().zip(&trace.branches) {
            let (g_branch, tail) = rest.split_channels(ctx);
            rest = tail;
            let g_branch = relu_backward(out, &g_branch);
            let gx = conv.backward(cache, &g_branch, true).expect("requested");
            g_diff_high.add_assign(&gx).expect("same shape");
        }
        let g_pool = rest.resize_bilinear_adjoint(1, 1);
        let g_pool = relu_backward(&trace.pool.1, &g_pool);
        let g_pooled = self.pool_proj.backward(&trace.pool.0, &g_pool, true).expect("requested");
        let (ph, pw) = trace.pool_in_hw;
        g_diff_high
            .add_assign(&global_avg_pool_backward(&g_pooled, ph, pw))
            .expect("same shape");

        self.encoder.backward(&trace.pre.trace, &g_diff_high, Some(&g_diff_low));
        let neg_high = g_diff_high.map(|v| -v);
        let neg_low = g_diff_low.map(|v| -v);
        self.encoder.backward(&trace.post.trace, &neg_high, Some(&neg_low));
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model("segnet", &self.config, &self.config.backbone, self.seed, self)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind("segnet")?;
        let config: SegNetConfig = ckpt.config()?;
        let mut net = SegNet::new(&config, ckpt.seed)?;
        ckpt.load_into(&mut net)?;
        Ok(net)
    }
}

impl Parameterized for SegNet {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        for (i, b) in self.branches.iter().enumerate() {
            b.visit_params(&join(prefix, &format!("context.branch{i}")), f);
        }
        self.pool_proj.visit_params(&join(prefix, "context.pool"), f);
        self.fuse.visit_params(&join(prefix, "context.fuse"), f);
        self.low_reduce.visit_params(&join(prefix, "decoder.low"), f);
        self.decode.visit_params(&join(prefix, "decoder.conv"), f);
        self.classifier.visit_params(&join(prefix, "decoder.classifier"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_params_mut(&join(prefix, "encoder"), f);
        for (i, b) in self.branches.iter_mut().enumerate() {
            b.visit_params_mut(&join(prefix, &format!("context.branch{i}")), f);
        }
        self.pool_proj.visit_params_mut(&join(prefix, "context.pool"), f);
        self.fuse.visit_params_mut(&join(prefix, "context.fuse"), f);
        self.low_reduce.visit_params_mut(&join(prefix, "decoder.low"), f);
        self.decode.visit_params_mut(&join(prefix, "decoder.conv"), f);
        self.classifier.visit_params_mut(&join(prefix, "decoder.classifier"), f);
    }
}

/// Per-pixel argmax over (background, change); ties go to background.
pub fn logits_to_mask(logits: &Tensor) -> PixelMask {
    PixelMask::from_fn(logits.height(), logits.width(), |y, x| logits.get(1, y, x) > logits.get(0, y, x))
}

pub fn predict_change_mask(net: &SegNet, pair: &ImagePair) -> Result<PixelMask> {
    Ok(logits_to_mask(&net.logits(pair)?))
}

/// Mean two-class cross-entropy over pixels and its gradient w.r.t. the logits.
pub fn pixel_cross_entropy(logits: &Tensor, target: &PixelMask) -> Result<(f64, Tensor)> {
    let (h, w) = (logits.height(), logits.width());
    if logits.channels() != 2 || (target.height(), target.width()) != (h, w) {
        return Err(Error::shape("logits must be 2×H×W matching the target"));
    }
    let n = (h * w) as f64;
    let mut grad = Tensor::zeros(2, h, w);
    let mut loss = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (z0, z1) = (logits.get(0, y, x), logits.get(1, y, x));
            let m = z0.max(z1);
            let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
            let lse = m + (e0 + e1).ln();
            let (p0, p1) = (e0 / (e0 + e1), e1 / (e0 + e1));
            let t = target.get(y, x);
            loss += lse - if t == 1 { z1 } else { z0 };
            grad.set(0, y, x, (p0 - (t == 0) as u8 as f64) / n);
            grad.set(1, y, x, (p1 - (t == 1) as u8 as f64) / n);
        }
    }
    Ok((loss / n, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegTrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub poly_power: f64,
    pub optimizer: OptimizerKind,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        SegTrainConfig {
            batch_size: 16,
            epochs: 50,
            initial_lr: 0.007,
            poly_power: 0.9,
            optimizer: OptimizerKind::sgd_momentum(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegEpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_ciou: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct SegOutcome {
    pub final_model: SegNet,
    /// Best validation change-IoU model; equals the final model without a validation set.
    pub best_model: SegNet,
    pub best_epoch: usize,
    pub history: Vec<SegEpochRecord>,
}

impl SegOutcome {
    pub fn write_history_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "loss", "val_ciou", "lr"])?;
        for r in &self.history {
            w.write_record([
                r.epoch.to_string(),
                r.loss.to_string(),
                r.val_ciou.map_or(String::new(), |v| v.to_string()),
                r.lr.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn change_iou(net: &SegNet, samples: &[Sample]) -> Result<f64> {
    let mut cm = ConfusionMatrix::default();
    for s in samples {
        cm += confusion(&predict_change_mask(net, &s.pair)?, &s.mask)?;
    }
    Ok(class_iou(&cm, Class::Change))
}

/// Minimises mean per-pixel cross-entropy against `targets` (pseudo labels).
pub fn train_segnet(
    targets: &[(ImagePair, PixelMask)],
    val: &[Sample],
    model: &SegNetConfig,
    config: &SegTrainConfig,
    seed: u64,
) -> Result<SegOutcome> {
    if targets.is_empty() {
        return Err(Error::config("segmentation training set is empty"));
    }
    if config.batch_size == 0 || config.epochs == 0 || !(config.initial_lr > 0.0) {
        return Err(Error::config("segmentation batch size, epochs and lr must be positive"));
    }
    let mut net = SegNet::new(model, derive_seed(seed, "segnet"))?;
    let mut opt = Optimizer::new(config.optimizer);
    let steps_per_epoch = targets.len().div_ceil(config.batch_size);
    let schedule = PolySchedule {
        initial_lr: config.initial_lr,
        total_steps: steps_per_epoch * config.epochs,
        power: config.poly_power,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "segnet-batches"));
    let mut order: Vec<usize> = (0..targets.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(SegNet, usize, f64)> = None;
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let epoch_lr = schedule.lr(step);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            net.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (pair, target) = &targets[i];
                let (logits, trace) = net.forward(pair)?;
                let (loss, mut g) = pixel_cross_entropy(&logits, target)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        step,
                        detail: format!("segmentation loss on {}", pair.id),
                    });
                }
                total += loss;
                g.scale(scale);
                net.backward(&trace, &g);
            }
            opt.step(&mut net, schedule.lr(step));
            step += 1;
        }
        let val_ciou = if val.is_empty() { None } else { Some(change_iou(&net, val)?) };
        let loss = total / targets.len() as f64;
        log::info!("seg epoch {epoch}: loss={loss:.4} val_ciou={val_ciou:?}");
        if let Some(v) = val_ciou {
            if best.as_ref().is_none_or(|b| v > b.2) {
                best = Some((net.clone(), epoch, v));
            }
        }
        history.push(SegEpochRecord {
            epoch,
            loss,
            val_ciou,
            lr: epoch_lr,
        });
    }
    let (best_model, best_epoch) = match best {
        Some((m, e, _)) => (m, e),
        None => (net.clone(), config.epochs - 1),
    };
    Ok(SegOutcome {
        final_model: net,
        best_model,
        best_epoch,
        history,
    })
}
