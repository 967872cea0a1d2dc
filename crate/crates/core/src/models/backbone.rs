use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{join, Bottleneck, Conv2d, InstanceNorm, Layer, LayerCache, Param, Parameterized, Sequential};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    /// Four conv/norm/ReLU/max-pool blocks, output stride 16.
    #[default]
    TinyCnn,
    /// ResNet-50 stage layout (3, 4, 6, 3 bottlenecks), output stride 32.
    Resnet50Shaped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    /// Block widths for `tiny-cnn`.
    pub channels: Vec<usize>,
    /// Divides the ResNet-50 widths (64..2048); 1 gives the full-size layout.
    pub width_divisor: usize,
    pub in_channels: usize,
    /// Instance normalisation after each `tiny-cnn` convolution.
    pub norm: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            kind: BackboneKind::TinyCnn,
            channels: vec![16, 32, 64, 64],
            width_divisor: 1,
            in_channels: 3,
            norm: true,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            BackboneKind::TinyCnn if self.channels.is_empty() || self.channels.contains(&0) => {
                Err(Error::config("tiny-cnn needs at least one non-zero block width"))
            }
            BackboneKind::Resnet50Shaped if self.width_divisor == 0 || 64 % self.width_divisor != 0 => {
                Err(Error::config("resnet width_divisor must divide 64"))
            }
            _ if self.in_channels == 0 => Err(Error::config("in_channels must be positive")),
            _ => Ok(()),
        }
    }

    pub fn output_stride(&self) -> usize {
        match self.kind {
            BackboneKind::TinyCnn => 1 << self.channels.len(),
            BackboneKind::Resnet50Shaped => 32,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self.kind {
            BackboneKind::TinyCnn => *self.channels.last().expect("validated"),
            BackboneKind::Resnet50Shaped => 2048 / self.width_divisor,
        }
    }

    /// Channels of the low-level tap (after the first downsampling stage).
    pub fn low_channels(&self) -> usize {
        match self.kind {
            BackboneKind::TinyCnn => self.channels[0],
            BackboneKind::Resnet50Shaped => 256 / self.width_divisor,
        }
    }

    /// Stride of the low-level tap.
    pub fn low_stride(&self) -> usize {
        match self.kind {
            BackboneKind::TinyCnn => 2,
            BackboneKind::Resnet50Shaped => 4,
        }
    }
}

/// Weight-shared feature extractor. The body is split at the low-level tap
/// so decoders can read (and backpropagate into) intermediate features.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    config: BackboneConfig,
    stem: Sequential,
    body: Sequential,
}

/// Everything a backward pass through the backbone needs.
#[derive(Clone, Debug)]
pub struct BackboneTrace {
    stem: Vec<LayerCache>,
    body: Vec<LayerCache>,
}

#[derive(Clone, Debug)]
pub struct BackboneOutput {
    pub features: Tensor,
    pub low: Tensor,
    pub trace: BackboneTrace,
}

impl Backbone {
    pub fn new<R: Rng + ?Sized>(config: &BackboneConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (stem, body) = match config.kind {
            BackboneKind::TinyCnn => {
                let mut blocks = Vec::new();
                let mut in_c = config.in_channels;
                for &c in &config.channels {
                    let mut block = vec![Layer::Conv(Conv2d::new(in_c, c, 3, 1, 1, true, rng))];
                    if config.norm {
                        block.push(Layer::Norm(InstanceNorm::new(c)));
                    }
                    block.extend([Layer::Relu, Layer::MaxPool2]);
                    blocks.push(block);
                    in_c = c;
                }
                let mut it = blocks.into_iter();
                let stem = it.next().expect("validated");
                (Sequential::new(stem), Sequential::new(it.flatten().collect()))
            }
            BackboneKind::Resnet50Shaped => {
                let d = config.width_divisor;
                let mut stem = vec![
                    Layer::Conv(Conv2d::new(config.in_channels, 64 / d, 7, 2, 1, true, rng)),
                    Layer::Relu,
                    Layer::MaxPool2,
                ];
                let mut in_c = 64 / d;
                let mut body = Vec::new();
                for (stage, (&blocks, &mid)) in [3usize, 4, 6, 3].iter().zip(&[64usize, 128, 256, 512]).enumerate() {
                    let mid = mid / d;
                    let out = mid * 4;
                    for i in 0..blocks {
                        let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                        let block = Layer::Bottleneck(Box::new(Bottleneck::new(in_c, mid, out, stride, rng)));
                        if stage == 0 {
                            stem.push(block);
                        } else {
                            body.push(block);
                        }
                        in_c = out;
                    }
                }
                (Sequential::new(stem), Sequential::new(body))
            }
        };
        Ok(Backbone {
            config: config.clone(),
            stem,
            body,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn output_stride(&self) -> usize {
        self.config.output_stride()
    }

    pub fn out_channels(&self) -> usize {
        self.config.out_channels()
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let d = self.output_stride();
        if x.channels() != self.config.in_channels {
            return Err(Error::shape(format!(
                "backbone expects {} channels, got {}",
                self.config.in_channels,
                x.channels()
            )));
        }
        if !x.height().is_multiple_of(d) || !x.width().is_multiple_of(d) || x.height() == 0 || x.width() == 0 {
            return Err(Error::shape(format!(
                "input {}x{} is not a positive multiple of the output stride {d}",
                x.height(),
                x.width()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<BackboneOutput> {
        self.check_input(x)?;
        let (low, stem) = self.stem.forward(x)?;
        let (features, body) = self.body.forward(&low)?;
        Ok(BackboneOutput {
            features,
            low,
            trace: BackboneTrace { stem, body },
        })
    }

    /// Feature map only; shorthand for `forward(x)?.features`.
    pub fn extract_features(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.features)
    }

    /// Backpropagates `g_features` (and optionally an extra gradient on the
    /// low-level tap) into the parameter gradients.
    pub fn backward(&mut self, trace: &BackboneTrace, g_features: &Tensor, g_low: Option<&Tensor>) {
        let mut g = self
            .body
            .backward(&trace.body, g_features, true)
            .expect("input gradient requested");
        if let Some(extra) = g_low {
            g.add_assign(extra).expect("low-level gradient shape");
        }
        self.stem.backward(&trace.stem, &g, false);
    }
}

impl Parameterized for Backbone {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.stem.visit_params(&join(prefix, "stem"), f);
        self.body.visit_params(&join(prefix, "body"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.stem.visit_params_mut(&join(prefix, "stem"), f);
        self.body.visit_params_mut(&join(prefix, "body"), f);
    }
}
