//! Self-supervised training over three-frame snippets, plus direct pose
//! fitting against known depth.

use nalgebra::Vector3;
use posecue_tensor::{Adam, Graph, ParamStore, Real, Tensor, Var};

use crate::camera::{warp_reference, CameraIntrinsics, PoseSE3, PoseVar};
use crate::error::{PipelineError, Result};
use crate::injection::GateMode;
use crate::losses::{photometric_loss, smoothness_loss, LossWeights, Reconstruction};
use crate::networks::{Model, Network};
use crate::synth::{synth_snippet, MotionPrior, SceneParams, Snippet, SnippetStream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub photometric: f64,
    pub smoothness: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Fraction of final steps trained at a tenth of the learning rate.
    pub decay_fraction: f64,
    pub seed: u64,
    pub loss: LossWeights,
    pub scene: SceneParams,
    pub motion: MotionPrior,
    pub queue_capacity: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            learning_rate: 1e-4,
            decay_fraction: 1.0 / 6.0,
            seed: 0,
            loss: LossWeights::default(),
            scene: SceneParams::default(),
            motion: MotionPrior::default(),
            queue_capacity: 4,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let decay_start = ((1.0 - self.decay_fraction) * self.steps as f64).ceil() as usize;
        if step >= decay_start {
            self.learning_rate * 0.1
        } else {
            self.learning_rate
        }
    }
}

/// Scalar losses of one snippet, still attached to the graph.
pub struct SnippetLoss<'g, T: Real> {
    pub photometric: Var<'g, T>,
    pub smoothness: Var<'g, T>,
    pub total: Var<'g, T>,
    pub depth: Var<'g, T>,
    /// Target→previous and target→next pose vectors.
    pub poses: [Var<'g, T>; 2],
}

impl<T: Real> SnippetLoss<'_, T> {
    pub fn report(&self) -> LossReport {
        LossReport {
            photometric: self.photometric.item().as_f64(),
            smoothness: self.smoothness.item().as_f64(),
            total: self.total.item().as_f64(),
        }
    }

    fn diagnostics(&self) -> String {
        let d = self.depth.value();
        let (lo, hi) = d.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v.as_f64()), hi.max(v.as_f64()))
        });
        format!(
            "photometric={} smoothness={} depth_min={lo} depth_max={hi} pose_prev_max={} pose_next_max={}",
            self.photometric.item().as_f64(),
            self.smoothness.item().as_f64(),
            self.poses[0].value().max_abs().as_f64(),
            self.poses[1].value().max_abs().as_f64(),
        )
    }
}

/// Predicts depth and both poses, warps both neighbours into the target
/// view and returns `photometric + w · smoothness`.
pub fn snippet_loss<'g, T: Real>(
    net: &Network,
    params: &ParamStore<T>,
    graph: &'g Graph<T>,
    snippet: &Snippet,
    weights: &LossWeights,
    gate: GateMode,
) -> Result<(SnippetLoss<'g, T>, posecue_tensor::Bound<'g, T>)> {
    let b = params.bind(graph);
    let frames: Vec<Var<'g, T>> = snippet.frames.iter().map(|f| graph.constant(f.cast())).collect();
    let target = frames[1];
    let depth = net.depth.forward(&b, target)?;
    let k = &snippet.intrinsics;
    let mut recs = Vec::with_capacity(2);
    let mut poses = Vec::with_capacity(2);
    for r in [0, 2] {
        let out = net.pose.forward(&b, frames[r], target, depth, k, &net.config.flow, gate)?;
        let pose = PoseVar::from_vector(out.vector)?;
        let (warped, mask) = warp_reference(frames[r], depth, k, &pose)?;
        recs.push(Reconstruction { warped, mask, source: Some(frames[r]) });
        poses.push(out.vector);
    }
    let photometric = photometric_loss(target, &recs, weights)?;
    let smoothness = smoothness_loss(depth, target)?;
    let total = photometric.add(smoothness.mul_scalar(weights.smoothness))?;
    Ok((SnippetLoss { photometric, smoothness, total, depth, poses: [poses[0], poses[1]] }, b))
}

pub struct Trainer {
    pub model: Model<f32>,
    pub optimizer: Adam<f32>,
    pub config: TrainConfig,
    pub step: usize,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig) -> Self {
        let optimizer = Adam::new(config.learning_rate);
        Trainer { model, optimizer, config, step: 0 }
    }

    /// One forward/backward pass and optimizer update.
    pub fn train_step(&mut self, snippet: &Snippet) -> Result<LossReport> {
        let g = Graph::new();
        let (loss, bound) =
            snippet_loss(&self.model.net, &self.model.params, &g, snippet, &self.config.loss, GateMode::Learned)?;
        let report = loss.report();
        if !(report.total.is_finite() && report.photometric.is_finite() && report.smoothness.is_finite()) {
            return Err(PipelineError::Diverged(format!("non-finite loss at step {}: {}", self.step, loss.diagnostics())));
        }
        let grads = g.backward(loss.total)?;
        self.optimizer.lr = self.config.learning_rate_at(self.step);
        self.optimizer.step(&mut self.model.params, &bound, &grads);
        self.step += 1;
        Ok(report)
    }

    /// Runs the configured number of steps on the seeded snippet stream,
    /// calling `observer` after each step.
    pub fn run(&mut self, mut observer: impl FnMut(usize, &LossReport)) -> Result<Vec<LossReport>> {
        let remaining = self.config.steps.saturating_sub(self.step) as u64;
        let stream = SnippetStream::spawn(
            self.config.seed,
            remaining,
            self.config.queue_capacity,
            self.config.scene.clone(),
            self.config.motion.clone(),
        );
        let mut history = Vec::with_capacity(remaining as usize);
        for snippet in stream {
            let report = self.train_step(&snippet?)?;
            observer(self.step, &report);
            history.push(report);
        }
        Ok(history)
    }
}

/// Angle in degrees between two translation vectors; `None` when either
/// is zero.
pub fn direction_error_deg(predicted: &Vector3<f64>, truth: &Vector3<f64>) -> Option<f64> {
    let (a, b) = (predicted.norm(), truth.norm());
    if a == 0.0 || b == 0.0 {
        return None;
    }
    Some((predicted.dot(truth) / (a * b)).clamp(-1.0, 1.0).acos().to_degrees())
}

/// Translation-direction errors of the model's target→next and
/// target→previous predictions on held-out synthetic snippets.
pub fn held_out_direction_errors(
    model: &Model<f32>,
    seed: u64,
    count: u64,
    scene: &SceneParams,
    motion: &MotionPrior,
) -> Result<Vec<f64>> {
    let mut errors = Vec::with_capacity(2 * count as usize);
    for i in 0..count {
        let snip = synth_snippet(seed, i, scene, motion)?;
        let truth = snip.truth.as_ref().expect("synthetic snippets carry ground truth");
        for (r, rel) in [(0usize, &truth.relative[0]), (2, &truth.relative[1])] {
            let v = model.predict_pose(&snip.frames[r], &snip.frames[1], &snip.intrinsics)?;
            let pred = PoseSE3::from_vector(&v);
            if let Some(e) = direction_error_deg(&pred.translation, &rel.translation) {
                errors.push(e);
            }
        }
    }
    Ok(errors)
}

/// Mean photometric loss of the model over held-out snippets, without
/// updating it.
pub fn held_out_photometric(model: &Model<f32>, snippets: &[Snippet], weights: &LossWeights) -> Result<f64> {
    let mut total = 0.0;
    for s in snippets {
        let g = Graph::new();
        let (loss, _) = snippet_loss(&model.net, &model.params, &g, s, weights, GateMode::Learned)?;
        total += loss.photometric.item() as f64;
    }
    Ok(total / snippets.len().max(1) as f64)
}

/// Held-out snippets are drawn from a stream disjoint from training.
pub const HELD_OUT_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeldOutEval {
    pub photometric: f64,
    /// `None` when no prediction had a direction (an untrained head
    /// predicts exactly zero translation).
    pub direction_median_deg: Option<f64>,
    /// Predictions with a nonzero translation, out of `2 * count`.
    pub direction_defined: usize,
}

/// Mean photometric loss and median translation-direction error on
/// `count` held-out snippets.
pub fn evaluate_training(model: &Model<f32>, config: &TrainConfig, count: u64) -> Result<HeldOutEval> {
    let seed = config.seed ^ HELD_OUT_SEED_OFFSET;
    let snippets =
        (0..count).map(|i| synth_snippet(seed, i, &config.scene, &config.motion)).collect::<Result<Vec<_>>>()?;
    let photometric = held_out_photometric(model, &snippets, &config.loss)?;
    let errors = held_out_direction_errors(model, seed, count, &config.scene, &config.motion)?;
    let direction_median_deg = (!errors.is_empty()).then(|| median(&errors));
    Ok(HeldOutEval { photometric, direction_median_deg, direction_defined: errors.len() })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug)]
pub struct PoseFit {
    /// Fitted target→reference pose.
    pub pose: PoseSE3,
    pub vector: [f64; 6],
    pub iterations: usize,
    pub losses: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseFitConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Consecutive loss increases treated as divergence.
    pub patience: usize,
    pub ssim_weight: f64,
}

impl Default for PoseFitConfig {
    fn default() -> Self {
        PoseFitConfig { iterations: 400, learning_rate: 2e-3, patience: 50, ssim_weight: 0.85 }
    }
}

/// Fits the target→reference 6-vector alone by minimizing the photometric
/// error of warping `reference` into `target` through `depth`.
pub fn direct_pose_fit(
    target: &Tensor<f32>,
    reference: &Tensor<f32>,
    depth: &Tensor<f32>,
    k: &CameraIntrinsics,
    config: &PoseFitConfig,
) -> Result<PoseFit> {
    let (t64, r64, d64): (Tensor<f64>, Tensor<f64>, Tensor<f64>) = (target.cast(), reference.cast(), depth.cast());
    let mut store = ParamStore::<f64>::new();
    let id = store.add("pose", Tensor::zeros(&[6]), true);
    let mut opt = Adam::new(config.learning_rate);
    let weights = LossWeights { ssim: config.ssim_weight, smoothness: 0.0, automask: false };
    let mut losses = Vec::with_capacity(config.iterations);
    let mut rising = 0;
    for it in 0..config.iterations {
        let g = Graph::new();
        let b = store.bind(&g);
        let pose = PoseVar::from_vector(b.get(id))?;
        let (warped, mask) = warp_reference(g.constant(r64.clone()), g.constant(d64.clone()), k, &pose)?;
        let loss = photometric_loss(g.constant(t64.clone()), &[Reconstruction { warped, mask, source: None }], &weights)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(PipelineError::Diverged(format!("non-finite photometric loss at iteration {it}")));
        }
        if losses.last().is_some_and(|&prev| value > prev) {
            rising += 1;
            if rising >= config.patience {
                return Err(PipelineError::Diverged(format!(
                    "loss rose for {rising} consecutive iterations (at iteration {it}, loss {value})"
                )));
            }
        } else {
            rising = 0;
        }
        losses.push(value);
        let grads = g.backward(loss)?;
        opt.step(&mut store, &b, &grads);
    }
    let v = store.get(id).data();
    let vector = [v[0], v[1], v[2], v[3], v[4], v[5]];
    Ok(PoseFit { pose: PoseSE3::from_vector(&vector), vector, iterations: config.iterations, losses })
}
