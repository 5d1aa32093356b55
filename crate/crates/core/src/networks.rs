//! Encoders, the depth network and the pose network.
//!
//! Stage `i` (1-based) of every pyramid has spatial extent `(H, W) / 2^i`
//! and `channels[i-1]` channels; each encoder stage is a stride-2 3x3
//! convolution followed by ReLU.

use posecue_tensor::{Bound, Graph, ParamStore, Real, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::{backproject, meshgrid, CameraIntrinsics};
use crate::error::{PipelineError, Result};
use crate::feature_flow::{caffe_forward, FlowConfig, FlowField};
use crate::injection::{GateMode, InjectionStage, PoseDecoder, StageOutput};
use crate::layers::{ConvLayer, Init};
use crate::positional::PositionalAggregator;

pub const MIN_DEPTH: f64 = 0.1;
pub const MAX_DEPTH: f64 = 100.0;

/// Seed offset separating the frozen branch from trainable weights.
const FROZEN_STREAM: u64 = 0x5eed_f402_e11a;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub channels: Vec<usize>,
    pub flow: FlowConfig,
    pub seed: u64,
    /// Depth the untrained network predicts everywhere.
    pub initial_depth: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            height: 64,
            width: 192,
            channels: vec![16, 32, 64, 128],
            flow: FlowConfig::default(),
            seed: 0,
            initial_depth: 5.0,
        }
    }
}

impl ModelConfig {
    pub fn stages(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.stages();
        if k < 2 {
            return Err(PipelineError::config("channels", format!("stage count k must be >= 2, got {k}")));
        }
        if self.flow.window == 0 || self.flow.window % 2 == 0 {
            return Err(PipelineError::config("window", format!("window d must be odd, got {}", self.flow.window)));
        }
        let step = 1usize << k;
        if self.height == 0 || self.width == 0 || self.height % step != 0 || self.width % step != 0 {
            return Err(PipelineError::config(
                "height,width",
                format!("{}x{} must be positive multiples of 2^k = {step}", self.height, self.width),
            ));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(PipelineError::config("channels", "channel counts must be positive"));
        }
        if !(self.flow.sharpness > 0.0) {
            return Err(PipelineError::config("flow_sharpness", "must be positive"));
        }
        if !(self.initial_depth > MIN_DEPTH && self.initial_depth < MAX_DEPTH) {
            return Err(PipelineError::config("initial_depth", format!("must lie in ({MIN_DEPTH}, {MAX_DEPTH})")));
        }
        Ok(())
    }

    /// Spatial extent of stage `i` (1-based).
    pub fn stage_extent(&self, i: usize) -> (usize, usize) {
        (self.height >> i, self.width >> i)
    }
}

/// `k` stride-2 conv + ReLU stages.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub stages: Vec<ConvLayer>,
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        channels: &[usize],
        init: Init,
        trainable: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut prev = inputs;
        let stages = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let layer = ConvLayer::new(store, &format!("{name}.{i}"), prev, c, 3, 2, init, trainable, rng);
                prev = c;
                layer
            })
            .collect();
        Encoder { stages }
    }

    pub fn forward<'g, T: Real>(&self, params: &Bound<'g, T>, x: Var<'g, T>) -> Result<Vec<Var<'g, T>>> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut h = x;
        for s in &self.stages {
            h = s.forward(params, h)?.relu();
            out.push(h);
        }
        Ok(out)
    }
}

/// U-shaped encoder-decoder with skip connections and a sigmoid head
/// decoded to depth in `[MIN_DEPTH, MAX_DEPTH]`.
#[derive(Clone, Debug)]
pub struct DepthNet {
    pub encoder: Encoder,
    pub decoder: Vec<ConvLayer>,
    pub head: ConvLayer,
}

/// `1 / (σ (1/d_min - 1/d_max) + 1/d_max)`.
pub fn decode_depth<'g, T: Real>(sigma: Var<'g, T>) -> Result<Var<'g, T>> {
    Ok(sigma.mul_scalar(1.0 / MIN_DEPTH - 1.0 / MAX_DEPTH).add_scalar(1.0 / MAX_DEPTH).recip()?)
}

/// Inverse of [`decode_depth`] followed by the sigmoid inverse.
fn depth_to_logit(depth: f64) -> f64 {
    let sigma = (1.0 / depth - 1.0 / MAX_DEPTH) / (1.0 / MIN_DEPTH - 1.0 / MAX_DEPTH);
    (sigma / (1.0 - sigma)).ln()
}

impl DepthNet {
    pub fn new<T: Real>(store: &mut ParamStore<T>, channels: &[usize], initial_depth: f64, rng: &mut ChaCha8Rng) -> Self {
        let encoder = Encoder::new(store, "depth.enc", 3, channels, Init::He, true, rng);
        let k = channels.len();
        let mut decoder = Vec::with_capacity(k);
        let mut below = channels[k - 1];
        for i in (0..k).rev() {
            let skip = if i == 0 { 3 } else { channels[i - 1] };
            let out = if i == 0 { channels[0] } else { channels[i - 1] };
            decoder.push(ConvLayer::new(store, &format!("depth.dec.{i}"), below + skip, out, 3, 1, Init::He, true, rng));
            below = out;
        }
        let head = ConvLayer::new(store, "depth.head", below, 1, 3, 1, Init::He, true, rng);
        let bias = store.get_mut(head.bias);
        bias.data_mut()[0] = T::cast(depth_to_logit(initial_depth));
        DepthNet { encoder, decoder, head }
    }

    /// `image: [3, H, W]` → depth `[H, W]`.
    pub fn forward<'g, T: Real>(&self, params: &Bound<'g, T>, image: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = image.shape();
        let feats = self.encoder.forward(params, standardize(image))?;
        let k = feats.len();
        let mut h = feats[k - 1];
        for (n, layer) in self.decoder.iter().enumerate() {
            let i = k - 1 - n;
            let skip = if i == 0 { image } else { feats[i - 1] };
            let up = h.upsample_nearest2()?;
            h = layer.forward(params, Var::concat(&[up, skip], 0)?)?.relu();
        }
        let sigma = self.head.forward(params, h)?.sigmoid().reshape(&[s[1], s[2]])?;
        decode_depth(sigma)
    }
}

/// Everything the pose network produces for one frame pair.
#[derive(Clone, Debug)]
pub struct PoseOutput<'g, T: Real> {
    /// Target→reference axis-angle + translation.
    pub vector: Var<'g, T>,
    pub flows: Vec<FlowField<'g, T>>,
    pub embeddings: Vec<Var<'g, T>>,
    pub stages: Vec<StageOutput<'g, T>>,
}

#[derive(Clone, Debug)]
pub struct PoseNet {
    pub semantic: Encoder,
    pub equivariant: Encoder,
    pub aggregators: Vec<PositionalAggregator>,
    pub injectors: Vec<InjectionStage>,
    pub decoder: PoseDecoder,
}

impl PoseNet {
    pub fn new<T: Real>(store: &mut ParamStore<T>, channels: &[usize], rng: &mut ChaCha8Rng, frozen_rng: &mut ChaCha8Rng) -> Self {
        let k = channels.len();
        let semantic = Encoder::new(store, "pose.semantic", 6, channels, Init::He, true, rng);
        let equivariant = Encoder::new(store, "pose.equivariant", 3, channels, Init::OrthogonalRows, false, frozen_rng);
        let aggregators =
            (0..k).map(|i| PositionalAggregator::new(store, &format!("pose.pca.{i}"), channels[i], rng)).collect();
        let injectors = (0..k)
            .map(|i| {
                InjectionStage::new(store, &format!("pose.hpei.{i}"), channels[i], channels[i], channels.get(i + 1).copied(), rng)
            })
            .collect();
        let decoder = PoseDecoder::new(store, "pose.decoder", channels[k - 1], rng);
        PoseNet { semantic, equivariant, aggregators, injectors, decoder }
    }

    /// Semantic pyramid of the channel-wise concatenated pair.
    pub fn semantic_branch<'g, T: Real>(
        &self,
        params: &Bound<'g, T>,
        reference: Var<'g, T>,
        target: Var<'g, T>,
    ) -> Result<Vec<Var<'g, T>>> {
        check_pair(reference, target)?;
        self.semantic.forward(params, standardize(Var::concat(&[reference, target], 0)?))
    }

    /// Frozen shared-weight pyramids of each frame, `(reference, target)`.
    pub fn equivariant_branch<'g, T: Real>(
        &self,
        params: &Bound<'g, T>,
        reference: Var<'g, T>,
        target: Var<'g, T>,
    ) -> Result<(Vec<Var<'g, T>>, Vec<Var<'g, T>>)> {
        check_pair(reference, target)?;
        Ok((self.equivariant.forward(params, reference)?, self.equivariant.forward(params, target)?))
    }

    /// Target→reference pose from the image pair and the target depth.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<'g, T: Real>(
        &self,
        params: &Bound<'g, T>,
        reference: Var<'g, T>,
        target: Var<'g, T>,
        depth: Var<'g, T>,
        k: &CameraIntrinsics,
        flow: &FlowConfig,
        gate: GateMode,
    ) -> Result<PoseOutput<'g, T>> {
        let g = reference.graph();
        let semantic = self.semantic_branch(params, reference, target)?;
        let (eq_ref, eq_tgt) = self.equivariant_branch(params, reference, target)?;
        let ds = depth.shape();
        let mut pooled = depth.reshape(&[1, ds[0], ds[1]])?;
        let mut previous = g.zeros(&semantic[0].shape());
        let mut flows = Vec::with_capacity(semantic.len());
        let mut embeddings = Vec::with_capacity(semantic.len());
        let mut stages = Vec::with_capacity(semantic.len());
        for (i, ((sem, (fr, ft)), (agg, inj))) in
            semantic.iter().zip(eq_ref.iter().zip(&eq_tgt)).zip(self.aggregators.iter().zip(&self.injectors)).enumerate()
        {
            let scale = (1usize << (i + 1)) as f64;
            pooled = pooled.avg_pool2()?;
            let (h, w) = (pooled.shape()[1], pooled.shape()[2]);
            let cloud = backproject(pooled.reshape(&[h, w])?, &k.downscaled(scale))?;
            let field = caffe_forward(*ft, *fr, flow)?;
            let positions = g.constant(meshgrid::<T>(h, w));
            let embedding = agg.aggregate(params, &field, positions, cloud)?;
            let out = inj.inject(params, previous, *sem, embedding, gate)?;
            previous = out.fused;
            flows.push(field);
            embeddings.push(embedding);
            stages.push(out);
        }
        let vector = self.decoder.decode(params, previous)?;
        Ok(PoseOutput { vector, flows, embeddings, stages })
    }
}

/// Shifts and scales `[0, 1]` intensities to roughly zero mean and unit
/// spread before the trainable encoders.
pub fn standardize<T: Real>(image: Var<'_, T>) -> Var<'_, T> {
    image.add_scalar(-INPUT_MEAN).mul_scalar(1.0 / INPUT_STD)
}

pub const INPUT_MEAN: f64 = 0.45;
pub const INPUT_STD: f64 = 0.225;

fn check_pair<T: Real>(a: Var<'_, T>, b: Var<'_, T>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb || sa.len() != 3 || sa[0] != 3 {
        return Err(PipelineError::Argument(format!("frames must both be [3,H,W], got {sa:?} and {sb:?}")));
    }
    Ok(())
}

/// Architecture description: parameter handles into a matching store.
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub depth: DepthNet,
    pub pose: PoseNet,
}

/// A network together with its parameter values.
#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    pub net: Network,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut frozen_rng = ChaCha8Rng::seed_from_u64(config.seed ^ FROZEN_STREAM);
        let depth = DepthNet::new(&mut params, &config.channels, config.initial_depth, &mut rng);
        let pose = PoseNet::new(&mut params, &config.channels, &mut rng, &mut frozen_rng);
        Ok(Model { net: Network { config, depth, pose }, params })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { net: self.net.clone(), params: self.params.cast() }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    /// Predicted depth of one image, as a plain tensor.
    pub fn predict_depth(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let g = Graph::new();
        let b = self.params.bind(&g);
        let d = self.net.depth.forward(&b, g.constant(image.clone()))?;
        Ok((*d.value()).clone())
    }

    /// Target→reference pose vector for a frame pair, using predicted
    /// target depth.
    pub fn predict_pose(&self, reference: &Tensor<T>, target: &Tensor<T>, k: &CameraIntrinsics) -> Result<[f64; 6]> {
        let g = Graph::new();
        let b = self.params.bind(&g);
        let (r, t) = (g.constant(reference.clone()), g.constant(target.clone()));
        let depth = self.net.depth.forward(&b, t)?;
        let out = self.net.pose.forward(&b, r, t, depth, k, &self.net.config.flow, GateMode::Learned)?;
        let v = out.vector.value().to_f64_vec();
        Ok([v[0], v[1], v[2], v[3], v[4], v[5]])
    }

    /// FNV-1a over the bit patterns of all frozen parameters.
    pub fn frozen_fingerprint(&self) -> u64 {
        fingerprint(self.params.entries().iter().filter(|e| !e.trainable).map(|e| &e.value))
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint(self.params.entries().iter().map(|e| &e.value))
    }
}

fn fingerprint<'a, T: Real + 'a>(tensors: impl Iterator<Item = &'a Tensor<T>>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in tensors {
        for v in t.data() {
            for b in v.as_f64().to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}
