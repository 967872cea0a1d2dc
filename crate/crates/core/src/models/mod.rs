//! Siamese feature extraction, feature combination and 1×1 score heads.

pub mod backbone;
pub mod checkpoint;
pub mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use backbone::{Backbone, BackboneConfig, BackboneKind, BackboneOutput, BackboneTrace};
pub use checkpoint::Checkpoint;
pub use layers::{Conv2d, ConvCache, InstanceNorm, Param, Parameterized};

use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How the two branch features are merged before the head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineMode {
    Subtract,
    #[default]
    AbsSubtract,
    Concat,
}

impl CombineMode {
    pub const ALL: [CombineMode; 3] = [CombineMode::Subtract, CombineMode::AbsSubtract, CombineMode::Concat];

    pub fn output_channels(self, c: usize) -> usize {
        match self {
            CombineMode::Concat => 2 * c,
            _ => c,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CombineMode::Subtract => "subtract",
            CombineMode::AbsSubtract => "abs-subtract",
            CombineMode::Concat => "concat",
        }
    }
}

impl std::str::FromStr for CombineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CombineMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown combine mode {s:?}")))
    }
}

pub fn combine_features(f1: &Tensor, f2: &Tensor, mode: CombineMode) -> Result<Tensor> {
    f1.ensure_same_shape(f2)?;
    match mode {
        CombineMode::Subtract => f1.zip_map(f2, |a, b| a - b),
        CombineMode::AbsSubtract => f1.zip_map(f2, |a, b| (a - b).abs()),
        CombineMode::Concat => f1.concat_channels(f2),
    }
}

/// Gradients of [`combine_features`] with respect to both inputs.
pub fn combine_features_backward(f1: &Tensor, f2: &Tensor, mode: CombineMode, g: &Tensor) -> (Tensor, Tensor) {
    match mode {
        CombineMode::Subtract => (g.clone(), g.map(|v| -v)),
        CombineMode::AbsSubtract => {
            let sign = f1.zip_map(f2, |a, b| (a - b).signum() * ((a != b) as u8 as f64)).expect("same shape");
            let g1 = g.zip_map(&sign, |gv, s| gv * s).expect("same shape");
            let g2 = g1.map(|v| -v);
            (g1, g2)
        }
        CombineMode::Concat => g.split_channels(f1.channels()),
    }
}

/// Single-channel pre-activation map produced by a head.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap(Tensor);

impl ScoreMap {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.channels() != 1 {
            return Err(Error::shape(format!("score map must have 1 channel, got {}", t.channels())));
        }
        Ok(ScoreMap(t))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != w) {
            return Err(Error::shape("ragged rows"));
        }
        ScoreMap::new(Tensor::from_vec(1, h, w, rows.concat())?)
    }

    pub fn constant(h: usize, w: usize, v: f64) -> Self {
        ScoreMap(Tensor::full(1, h, w, v))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }
}

/// 1×1 projection from combined features to a single-channel score map.
pub fn head_project(features: &Tensor, head: &Conv2d) -> Result<ScoreMap> {
    if head.kernel != 1 || head.out_channels != 1 {
        return Err(Error::shape("head must be a 1x1 conv with one output channel"));
    }
    ScoreMap::new(head.forward(features)?.0)
}

/// Anything that maps a (pre, post) raster pair to a score map. Multiscale
/// inference is written against this so tests can substitute stubs.
pub trait ScoreNet {
    /// Spatial multiple every input side must satisfy.
    fn input_multiple(&self) -> usize;
    fn score(&self, pre: &Tensor, post: &Tensor) -> Result<ScoreMap>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiameseConfig {
    pub backbone: BackboneConfig,
    pub combine: CombineMode,
}

impl Default for SiameseConfig {
    fn default() -> Self {
        SiameseConfig {
            backbone: BackboneConfig::default(),
            combine: CombineMode::AbsSubtract,
        }
    }
}

/// Weight-shared two-branch network with a 1×1 single-channel head. Both the
/// teacher and the student are instances of this type.
#[derive(Clone, Debug, PartialEq)]
pub struct SiameseNet {
    config: SiameseConfig,
    seed: u64,
    pub backbone: Backbone,
    pub head: Conv2d,
}

#[derive(Clone, Debug)]
pub struct SiameseTrace {
    pre: BackboneOutput,
    post: BackboneOutput,
    head: ConvCache,
}

impl SiameseNet {
    pub fn new(config: &SiameseConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::new(&config.backbone, &mut rng)?;
        let in_c = config.combine.output_channels(backbone.out_channels());
        let head = Conv2d::pointwise(in_c, 1, (1.0 / in_c as f64).sqrt(), &mut rng);
        Ok(SiameseNet {
            config: config.clone(),
            seed,
            backbone,
            head,
        })
    }

    pub fn config(&self) -> &SiameseConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn combine_mode(&self) -> CombineMode {
        self.config.combine
    }

    pub fn output_stride(&self) -> usize {
        self.backbone.output_stride()
    }

    pub fn forward(&self, pre: &Tensor, post: &Tensor) -> Result<(ScoreMap, SiameseTrace)> {
        let a = self.backbone.forward(pre)?;
        let b = self.backbone.forward(post)?;
        let combined = combine_features(&a.features, &b.features, self.config.combine)?;
        let (g, head) = self.head.forward(&combined)?;
        Ok((ScoreMap::new(g)?, SiameseTrace { pre: a, post: b, head }))
    }

    pub fn forward_pair(&self, pair: &ImagePair) -> Result<ScoreMap> {
        Ok(self.forward(&pair.pre, &pair.post)?.0)
    }

    /// Accumulates parameter gradients for `d loss / d score`.
    pub fn backward(&mut self, trace: &SiameseTrace, g_score: &Tensor) {
        let g_comb = self.head.backward(&trace.head, g_score, true).expect("requested");
        let (g1, g2) = combine_features_backward(
            &trace.pre.features,
            &trace.post.features,
            self.config.combine,
            &g_comb,
        );
        self.backbone.backward(&trace.pre.trace, &g1, None);
        self.backbone.backward(&trace.post.trace, &g2, None);
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model("siamese", &self.config, &self.config.backbone, self.seed, self)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind("siamese")?;
        let config: SiameseConfig = ckpt.config()?;
        let mut net = SiameseNet::new(&config, ckpt.seed)?;
        ckpt.load_into(&mut net)?;
        Ok(net)
    }
}

impl ScoreNet for SiameseNet {
    fn input_multiple(&self) -> usize {
        self.output_stride()
    }

    fn score(&self, pre: &Tensor, post: &Tensor) -> Result<ScoreMap> {
        Ok(self.forward(pre, post)?.0)
    }
}

impl Parameterized for SiameseNet {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.backbone.visit_params(&layers::join(prefix, "backbone"), f);
        self.head.visit_params(&layers::join(prefix, "head"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.backbone.visit_params_mut(&layers::join(prefix, "backbone"), f);
        self.head.visit_params_mut(&layers::join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(seed: u64, c: usize, h: usize, w: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(c, h, w, |_, _, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn extract_features_shape_contract() {
        let cfg = BackboneConfig {
            channels: vec![8, 16, 32, 32],
            ..BackboneConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bb = Backbone::new(&cfg, &mut rng).unwrap();
        let x = random(1, 3, 64, 64).map(f64::abs);
        let f = bb.extract_features(&x).unwrap();
        assert_eq!(f.shape(), (32, 4, 4));
        assert_eq!(bb.output_stride(), 16);
        assert!(f.is_finite());
    }

    #[test]
    fn non_divisible_input_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bb = Backbone::new(&BackboneConfig::default(), &mut rng).unwrap();
        let err = bb.extract_features(&Tensor::zeros(3, 40, 64)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn shared_weights_give_identical_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bb = Backbone::new(&BackboneConfig::default(), &mut rng).unwrap();
        let x = random(2, 3, 32, 32);
        assert_eq!(bb.extract_features(&x).unwrap(), bb.extract_features(&x.clone()).unwrap());
    }

    #[test]
    fn subtract_of_equal_maps_is_zero() {
        let f = random(3, 4, 2, 2);
        let d = combine_features(&f, &f, CombineMode::Subtract).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn concat_doubles_channels() {
        let f = random(3, 4, 2, 3);
        let g = random(4, 4, 2, 3);
        assert_eq!(combine_features(&f, &g, CombineMode::Concat).unwrap().shape(), (8, 2, 3));
    }

    #[test]
    fn abs_subtract_commutes() {
        for seed in 0..20 {
            let a = random(seed, 5, 3, 3);
            let b = random(seed + 100, 5, 3, 3);
            let ab = combine_features(&a, &b, CombineMode::AbsSubtract).unwrap();
            let ba = combine_features(&b, &a, CombineMode::AbsSubtract).unwrap();
            for ((x, y), (p, q)) in ab.data().iter().zip(ba.data()).zip(a.data().iter().zip(b.data())) {
                assert_eq!(*x, *y);
                assert_eq!(*x, (p - q).abs());
            }
        }
    }

    #[test]
    fn combine_shape_mismatch_errors() {
        assert!(combine_features(&Tensor::zeros(2, 2, 2), &Tensor::zeros(2, 2, 3), CombineMode::AbsSubtract).is_err());
    }

    fn head_with(weights: Vec<f64>, bias: f64) -> Conv2d {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut head = Conv2d::pointwise(weights.len(), 1, 1.0, &mut rng);
        head.weight.value = weights;
        head.bias.as_mut().unwrap().value[0] = bias;
        head
    }

    #[test]
    fn zero_head_gives_zero_scores() {
        let s = head_project(&random(5, 3, 4, 4), &head_with(vec![0.0; 3], 0.0)).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn head_without_bias_is_linear() {
        let head = head_with(vec![0.3, -1.2, 0.7], 0.0);
        let f = random(6, 3, 4, 4);
        let s1 = head_project(&f, &head).unwrap();
        let s2 = head_project(&f.map(|v| 2.0 * v), &head).unwrap();
        for (a, b) in s1.values().iter().zip(s2.values()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn head_is_per_pixel_dot_product() {
        let w = vec![0.5, -0.25, 2.0];
        let b = 0.125;
        let head = head_with(w.clone(), b);
        let f = random(7, 3, 2, 2);
        let s = head_project(&f, &head).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                let mut acc = b;
                for (k, wk) in w.iter().enumerate() {
                    acc += wk * f.get(k, y, x);
                }
                assert!((s.tensor().get(0, y, x) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn head_channel_mismatch_errors() {
        assert!(head_project(&random(1, 4, 2, 2), &head_with(vec![1.0; 3], 0.0)).is_err());
    }

    #[test]
    fn swapping_inputs_preserves_abs_scores_and_negates_subtract_features() {
        let net = SiameseNet::new(&SiameseConfig::default(), 11).unwrap();
        let a = random(1, 3, 32, 32);
        let b = random(2, 3, 32, 32);
        assert_eq!(net.score(&a, &b).unwrap(), net.score(&b, &a).unwrap());
        let fa = net.backbone.extract_features(&a).unwrap();
        let fb = net.backbone.extract_features(&b).unwrap();
        let ab = combine_features(&fa, &fb, CombineMode::Subtract).unwrap();
        let ba = combine_features(&fb, &fa, CombineMode::Subtract).unwrap();
        assert_eq!(ab, ba.map(|v| -v));
    }

    #[test]
    fn resnet_shaped_backbone_strides_and_channels() {
        let cfg = BackboneConfig {
            kind: BackboneKind::Resnet50Shaped,
            width_divisor: 16,
            ..BackboneConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bb = Backbone::new(&cfg, &mut rng).unwrap();
        let out = bb.forward(&random(1, 3, 64, 64)).unwrap();
        assert_eq!(out.features.shape(), (128, 2, 2));
        assert_eq!(out.low.shape(), (16, 16, 16));
    }
}
