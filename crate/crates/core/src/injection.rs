//! Gated hierarchical injection of positional embeddings into semantic
//! features, and the pose decoder.
//!
//! Stage `i` forms `S_i = γ_i f_c(F^p_i) + (1 - γ_i) F^s_i + F_{i-1}`; stages
//! before the last pass it through `f_i` (conv, ReLU, 2x2 average pool) to
//! get `F_i`, the last stage returns `S_k` unchanged. `F_0` is zero.

use posecue_tensor::{Bound, ParamId, ParamStore, Real, Tensor, Var};
use rand::Rng;

use crate::error::{PipelineError, Result};
use crate::layers::{ConvLayer, Init, Linear};

/// Scale applied to the raw decoder output before it is read as an
/// axis-angle + translation vector.
pub const POSE_SCALE: f64 = 0.01;

/// How the gate value is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum GateMode {
    /// `γ = sigmoid(logit)` with a learnable logit.
    #[default]
    Learned,
    /// Fixed `γ`, bypassing the logit; used to probe the gate limits.
    Fixed(f64),
}

#[derive(Clone, Copy, Debug)]
pub struct InjectionStage {
    pub gate_logit: ParamId,
    /// 1x1 channel reduction of the positional embedding.
    pub reduce: ConvLayer,
    /// Downsampling transition to the next stage; `None` at the last stage.
    pub transition: Option<ConvLayer>,
    pub channels: usize,
}

/// Tensors produced by one stage, kept for inspection.
#[derive(Clone, Copy, Debug)]
pub struct StageOutput<'g, T: Real> {
    pub gated_sum: Var<'g, T>,
    pub fused: Var<'g, T>,
}

impl InjectionStage {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        embed_channels: usize,
        channels: usize,
        next_channels: Option<usize>,
        rng: &mut R,
    ) -> Self {
        let gate_logit = store.add(format!("{name}.gate"), Tensor::zeros(&[]), true);
        let reduce = ConvLayer::new(store, &format!("{name}.reduce"), embed_channels, channels, 1, 1, Init::He, true, rng);
        let transition = next_channels
            .map(|n| ConvLayer::new(store, &format!("{name}.transition"), channels, n, 3, 1, Init::He, true, rng));
        InjectionStage { gate_logit, reduce, transition, channels }
    }

    pub fn gamma<'g, T: Real>(&self, params: &Bound<'g, T>) -> Var<'g, T> {
        params.get(self.gate_logit).sigmoid()
    }

    /// One step of the recursion. `previous` is `F_{i-1}`, shaped like
    /// `semantic`.
    pub fn inject<'g, T: Real>(
        &self,
        params: &Bound<'g, T>,
        previous: Var<'g, T>,
        semantic: Var<'g, T>,
        positional: Var<'g, T>,
        mode: GateMode,
    ) -> Result<StageOutput<'g, T>> {
        if semantic.shape() != previous.shape() {
            return Err(PipelineError::Tensor(posecue_tensor::TensorError::Dimension {
                op: "inject_stage",
                msg: format!("semantic {:?} vs previous {:?}", semantic.shape(), previous.shape()),
            }));
        }
        let reduced = self.reduce.forward(params, positional)?;
        if reduced.shape() != semantic.shape() {
            return Err(PipelineError::Tensor(posecue_tensor::TensorError::Dimension {
                op: "inject_stage",
                msg: format!("reduced positional {:?} vs semantic {:?}", reduced.shape(), semantic.shape()),
            }));
        }
        let (pos_part, sem_part) = match mode {
            GateMode::Learned => {
                let gamma = self.gamma(params);
                (reduced.mul(gamma)?, semantic.mul(gamma.neg().add_scalar(1.0))?)
            }
            GateMode::Fixed(gamma) => (reduced.mul_scalar(gamma), semantic.mul_scalar(1.0 - gamma)),
        };
        let gated_sum = pos_part.add(sem_part)?.add(previous)?;
        let fused = match &self.transition {
            Some(t) => t.forward(params, gated_sum)?.relu().avg_pool2()?,
            None => gated_sum,
        };
        Ok(StageOutput { gated_sum, fused })
    }
}

/// Global average pool, then an MLP with two ReLU hidden layers to 6
/// outputs scaled by [`POSE_SCALE`]. The output layer starts at zero, so an
/// untrained head predicts the identity motion.
#[derive(Clone, Copy, Debug)]
pub struct PoseDecoder {
    pub hidden1: Linear,
    pub hidden2: Linear,
    pub output: Linear,
}

impl PoseDecoder {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, inputs: usize, rng: &mut R) -> Self {
        PoseDecoder {
            hidden1: Linear::new(store, &format!("{name}.0"), inputs, 64, Init::He, rng),
            hidden2: Linear::new(store, &format!("{name}.1"), 64, 32, Init::He, rng),
            output: Linear::new(store, &format!("{name}.2"), 32, 6, Init::Zeros, rng),
        }
    }

    /// `features: [c, h, w]` → pose vector `[6]`.
    pub fn decode<'g, T: Real>(&self, params: &Bound<'g, T>, features: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = features.shape();
        if s.len() != 3 {
            return Err(PipelineError::Argument(format!("decoder expects [c,h,w], got {s:?}")));
        }
        let pooled = features.reshape(&[s[0], s[1] * s[2]])?.mean_axis(1)?.reshape(&[1, s[0]])?;
        let h1 = self.hidden1.forward(params, pooled)?.relu();
        let h2 = self.hidden2.forward(params, h1)?.relu();
        Ok(self.output.forward(params, h2)?.reshape(&[6])?.mul_scalar(POSE_SCALE))
    }
}
