//! Finite-difference gradient suite over the pipeline's differentiable
//! pieces, and the invariant checks run by `posecue selftest`.

use std::time::Instant;

use posecue_tensor::{gradient_check_many, Bound, GradCheckReport, Graph, ParamStore, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{backproject, meshgrid, warp_reference, CameraIntrinsics, PoseSE3, PoseVar};
use crate::error::{PipelineError, Result};
use crate::feature_flow::{
    affinity_volume, caffe_forward, confidence, hard_argmax_flow, normalize_channels, soft_argmax_flow, AffinityVolume,
    FlowConfig, FlowField,
};
use crate::injection::{GateMode, InjectionStage, PoseDecoder};
use crate::losses::{photometric_loss, smoothness_loss, ssim_dissimilarity, LossWeights, Reconstruction};
use crate::networks::decode_depth;
use crate::odometry::{evaluate, kitti_relative_errors, umeyama_align, AteMode, SegmentConfig, Trajectory};
use crate::positional::{normalize_unit_range, PositionalAggregator};
use crate::synth::{Scene, SceneParams};
use crate::training::{direct_pose_fit, PoseFitConfig};

pub const GRAD_EPSILON: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-3;

/// One line of a diagnostic run.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// Wall time of timed checks; kept out of `line` so output is
    /// reproducible.
    pub seconds: Option<f64>,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckOutcome { name: name.to_string(), passed, detail, seconds: None }
    }

    fn timed(mut self, seconds: f64) -> Self {
        self.seconds = Some(seconds);
        self
    }

    pub fn line(&self) -> String {
        format!("{} {} {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn lift<V>(r: Result<V>) -> posecue_tensor::Result<V> {
    r.map_err(|e| match e {
        PipelineError::Tensor(t) => t,
        other => TensorError::Contract(other.to_string()),
    })
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Fixed pseudo-random weights so the scalarization is the same on every
/// re-evaluation.
fn weighted_sum<'g>(v: Var<'g, f64>, salt: u64) -> posecue_tensor::Result<Var<'g, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1_ab1e ^ salt);
    let w = Tensor::from_fn(&v.shape(), |_| rng.random_range(-1.0..1.0));
    Ok(v.mul_const(&w)?.sum())
}

fn store_points(store: &ParamStore<f64>) -> Vec<Tensor<f64>> {
    store.entries().iter().map(|e| e.value.clone()).collect()
}

fn bind_tail<'g>(vars: &[Var<'g, f64>], from: usize) -> Bound<'g, f64> {
    Bound::from_vars(vars[from..].to_vec())
}

/// Small camera matching `h x w` test images.
fn small_camera(h: usize, w: usize) -> CameraIntrinsics {
    CameraIntrinsics::new(w as f64, w as f64, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0).expect("valid intrinsics")
}

/// Gradient checks of every differentiable stage in 64-bit precision.
pub fn gradient_suite(seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<(String, GradCheckReport)> = Vec::new();
    let eps = GRAD_EPSILON;
    let flow_cfg = FlowConfig::default();

    let x = uniform(&mut rng, &[4, 3, 3], -1.0, 1.0);
    out.push((
        "normalize_channels".into(),
        gradient_check_many(|_, v| weighted_sum(lift(normalize_channels(v[0]))?, 1), &[x], eps)?,
    ));

    let pair = [uniform(&mut rng, &[4, 4, 5], -1.0, 1.0), uniform(&mut rng, &[4, 4, 5], -1.0, 1.0)];
    out.push((
        "affinity_volume".into(),
        gradient_check_many(|_, v| weighted_sum(lift(affinity_volume(v[0], v[1], 3))?.values, 2), &pair, eps)?,
    ));

    // Kept inside the unsaturated range of the sharpened softmax: saturated
    // entries have gradients below the finite-difference noise floor.
    let spread = 3.0 / flow_cfg.sharpness;
    let a = uniform(&mut rng, &[2, 3, 5, 5], -spread, spread);
    out.push((
        "soft_argmax_flow".into(),
        gradient_check_many(
            |_, v| {
                let av = lift(AffinityVolume::from_values(v[0]))?;
                weighted_sum(lift(soft_argmax_flow(&av, flow_cfg.sharpness))?, 3)
            },
            std::slice::from_ref(&a),
            eps,
        )?,
    ));
    out.push((
        "confidence".into(),
        gradient_check_many(
            |_, v| {
                let av = lift(AffinityVolume::from_values(v[0]))?;
                weighted_sum(lift(confidence(&av))?, 4)
            },
            &[a],
            eps,
        )?,
    ));

    let feats = [uniform(&mut rng, &[4, 6, 6], -1.0, 1.0), uniform(&mut rng, &[4, 6, 6], -1.0, 1.0)];
    out.push((
        "caffe_forward".into(),
        gradient_check_many(
            |_, v| {
                let f = lift(caffe_forward(v[0], v[1], &flow_cfg))?;
                Ok(weighted_sum(f.flow, 5)?.add(weighted_sum(f.confidence, 6)?)?)
            },
            &feats,
            eps,
        )?,
    ));

    let x = uniform(&mut rng, &[2, 4, 4], -2.0, 2.0);
    out.push((
        "normalize_unit_range".into(),
        gradient_check_many(|_, v| weighted_sum(lift(normalize_unit_range(v[0]))?, 7), &[x], eps)?,
    ));

    let k = small_camera(4, 5);
    let depth = uniform(&mut rng, &[4, 5], 1.0, 4.0);
    out.push((
        "backproject".into(),
        gradient_check_many(|_, v| weighted_sum(lift(backproject(v[0], &k))?, 8), &[depth], eps)?,
    ));

    let (h, w, e) = (5, 6, 4);
    let mut store = ParamStore::<f64>::new();
    let agg = PositionalAggregator::new(&mut store, "pca", e, &mut rng);
    let mut points = vec![
        uniform(&mut rng, &[h, w, 2], -2.0, 2.0),
        uniform(&mut rng, &[h, w, 1], 0.05, 0.95),
        uniform(&mut rng, &[h, w, 3], -3.0, 3.0),
    ];
    points.extend(store_points(&store));
    out.push((
        "aggregate".into(),
        gradient_check_many(
            |g, v| {
                let b = bind_tail(v, 3);
                let field = FlowField { flow: v[0], confidence: v[1] };
                let pos = g.constant(meshgrid(h, w));
                weighted_sum(lift(agg.aggregate(&b, &field, pos, v[2]))?, 9)
            },
            &points,
            eps,
        )?,
    ));

    let (c, next) = (4, 6);
    let mut store = ParamStore::<f64>::new();
    let stage = InjectionStage::new(&mut store, "hpei", e, c, Some(next), &mut rng);
    let decoder = PoseDecoder::new(&mut store, "dec", next, &mut rng);
    store.get_mut(stage.gate_logit).data_mut()[0] = 0.3;
    // a zero output layer would hide the hidden-layer gradients
    *store.get_mut(decoder.output.weight) = uniform(&mut rng, &[32, 6], -0.5, 0.5);
    let mut points = vec![
        uniform(&mut rng, &[c, 4, 4], -1.0, 1.0),
        uniform(&mut rng, &[c, 4, 4], -1.0, 1.0),
        uniform(&mut rng, &[e, 4, 4], -1.0, 1.0),
    ];
    points.extend(store_points(&store));
    out.push((
        "inject_stage".into(),
        gradient_check_many(
            |_, v| {
                let b = bind_tail(v, 3);
                let s = lift(stage.inject(&b, v[0], v[1], v[2], GateMode::Learned))?;
                Ok(weighted_sum(s.fused, 10)?.add(weighted_sum(s.gated_sum, 11)?)?)
            },
            &points,
            eps,
        )?,
    ));
    out.push((
        "decode_pose_after_inject".into(),
        gradient_check_many(
            |_, v| {
                let b = bind_tail(v, 3);
                let s = lift(stage.inject(&b, v[0], v[1], v[2], GateMode::Learned))?;
                weighted_sum(lift(decoder.decode(&b, s.fused))?, 12)
            },
            &points,
            eps,
        )?,
    ));

    let sigma = uniform(&mut rng, &[3, 4], 0.05, 0.95);
    out.push((
        "decode_depth".into(),
        gradient_check_many(|_, v| weighted_sum(lift(decode_depth(v[0]))?, 13), &[sigma], eps)?,
    ));

    let (h, w) = (6, 8);
    let k = small_camera(h, w);
    let reference = Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        let (y, x) = ((p / w) as f64, (p % w) as f64);
        0.5 + 0.3 * (0.9 * x + 0.7 * y + c as f64).sin()
    });
    let pose_points = [
        Tensor::from_f64(&[6], &[0.01, -0.02, 0.015, 0.03, -0.02, 0.05])?,
        uniform(&mut rng, &[h, w], 2.0, 3.0),
        reference.clone(),
    ];
    out.push((
        "warp_reference".into(),
        gradient_check_many(
            |_, v| {
                let pose = lift(PoseVar::from_vector(v[0]))?;
                let (warped, _) = lift(warp_reference(v[2], v[1], &k, &pose))?;
                weighted_sum(warped, 14)
            },
            &pose_points,
            eps,
        )?,
    ));

    let imgs = [uniform(&mut rng, &[3, 5, 6], 0.1, 0.9), uniform(&mut rng, &[3, 5, 6], 0.1, 0.9)];
    out.push((
        "ssim_dissimilarity".into(),
        gradient_check_many(|_, v| weighted_sum(lift(ssim_dissimilarity(v[0], v[1]))?, 15), &imgs, eps)?,
    ));

    let weights = LossWeights::default();
    let target = uniform(&mut rng, &[3, h, w], 0.1, 0.9);
    let loss_points = [pose_points[0].clone(), pose_points[1].clone(), target];
    out.push((
        "photometric_loss".into(),
        gradient_check_many(
            |g, v| {
                let pose = lift(PoseVar::from_vector(v[0]))?;
                let reference = g.constant(reference.clone());
                let (warped, mask) = lift(warp_reference(reference, v[1], &k, &pose))?;
                let recs = [
                    Reconstruction { warped, mask, source: Some(reference) },
                    Reconstruction { warped: reference, mask: Tensor::ones(&[h, w]), source: None },
                ];
                lift(photometric_loss(v[2], &recs, &weights))
            },
            &loss_points,
            eps,
        )?,
    ));

    let smooth = [uniform(&mut rng, &[5, 6], 1.0, 5.0), uniform(&mut rng, &[3, 5, 6], 0.0, 1.0)];
    out.push((
        "smoothness_loss".into(),
        gradient_check_many(|_, v| lift(smoothness_loss(v[0], v[1])), &smooth, eps)?,
    ));
    Ok(out)
}

/// The gradient suite as pass/fail lines.
pub fn gradient_outcomes(seed: u64) -> Result<Vec<CheckOutcome>> {
    Ok(gradient_suite(seed)?
        .into_iter()
        .map(|(name, r)| {
            CheckOutcome::new(
                &format!("gradcheck.{name}"),
                r.passes(GRAD_TOLERANCE),
                format!("max_rel_err={:.3e} evaluated={}", r.max_relative_error, r.evaluated),
            )
        })
        .collect())
}

/// Soft vs. hard argmax on random `d x d` affinity windows whose sharpened
/// softmax peaks above 0.99.
pub fn soft_argmax_oracle(seed: u64, windows: usize, d: usize, sharpness: f64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = d * d;
    let mut data = Vec::with_capacity(windows * n);
    let mut accepted = 0;
    while accepted < windows {
        let peak = rng.random_range(0..n);
        let top = rng.random_range(0.5..1.0);
        let window: Vec<f64> =
            (0..n).map(|p| if p == peak { top } else { rng.random_range(-1.0..top - 0.75) }).collect();
        let m = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = window.iter().map(|a| (sharpness * (a - m)).exp()).sum();
        if 1.0 / z > 0.99 {
            data.extend(window);
            accepted += 1;
        }
    }
    let values = Tensor::from_vec(&[windows, 1, d, d], data)?;
    let hard = hard_argmax_flow(&values)?;
    let g = Graph::new();
    let av = AffinityVolume::from_values(g.constant(values))?;
    let soft = soft_argmax_flow(&av, sharpness)?.value();
    let mut worst = 0.0f64;
    let mut within = 0;
    for i in 0..windows {
        let dx = soft.data()[2 * i] - hard.data()[2 * i];
        let dy = soft.data()[2 * i + 1] - hard.data()[2 * i + 1];
        let e = (dx * dx + dy * dy).sqrt();
        worst = worst.max(e);
        if e < 0.05 {
            within += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(CheckOutcome::new(
        "soft_argmax_matches_hard_argmax",
        within == windows && secs < 5.0,
        format!("windows={windows} within_0.05px={within} worst={worst:.4} limit_seconds=5"),
    )
    .timed(secs))
}

/// Confidence against explicit exp/sum loops, plus the uniform window case.
pub fn confidence_oracle(seed: u64, windows: usize, d: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = d * d;
    let values = Tensor::from_fn(&[windows, 1, d, d], |_| rng.random_range(-1.0..1.0));
    let g = Graph::new();
    let c = confidence(&AffinityVolume::from_values(g.constant(values.clone()))?)?.value();
    let mut worst = 0.0f64;
    for (i, window) in values.data().chunks(n).enumerate() {
        let window: &[f64] = window;
        let mut max = window[0];
        for &a in window {
            if a > max {
                max = a;
            }
        }
        let mut total = 0.0;
        let mut best_prob = 0.0f64;
        for &a in window {
            total += a.exp();
        }
        for &a in window {
            best_prob = best_prob.max(a.exp() / total);
        }
        let expected = if max > 0.0 { max } else { 0.0 } * best_prob;
        worst = worst.max((c.data()[i] - expected).abs());
    }
    let mut uniform_exact = true;
    for a in [0.0, 0.25, 0.5, 0.9, 1.0] {
        let g = Graph::new();
        let av = AffinityVolume::from_values(g.constant(Tensor::full(&[1, 1, 3, 3], a)))?;
        uniform_exact &= confidence(&av)?.item() == a / 9.0;
    }
    Ok(CheckOutcome::new(
        "confidence_matches_brute_force",
        worst < 1e-6 && uniform_exact,
        format!("windows={windows} max_abs_err={worst:.2e} uniform_3x3_exact={uniform_exact}"),
    ))
}

/// Integer-shift recovery: `reference(y, x) = target(y - dy, x - dx)`
/// puts the match for target `(y, x)` at offset `(dx, dy)`.
pub fn shift_recovery(seed: u64, config: &FlowConfig) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h, w) = (32, 24, 24);
    let r = (config.window / 2) as i64;
    let mut total = 0usize;
    let mut good = 0usize;
    let mut shifts = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            shifts.push((dx, dy));
        }
    }
    for (dx, dy) in shifts {
        let base = Tensor::<f64>::from_fn(&[c, h + 2 * r as usize, w + 2 * r as usize], |_| rng.random_range(-1.0..1.0));
        let (bh, bw) = (h + 2 * r as usize, w + 2 * r as usize);
        let crop = |ox: i64, oy: i64| {
            Tensor::from_fn(&[c, h, w], |i| {
                let (ch, p) = (i / (h * w), i % (h * w));
                let (y, x) = ((p / w) as i64 + r + oy, (p % w) as i64 + r + ox);
                base.data()[ch * bh * bw + y as usize * bw + x as usize]
            })
        };
        let target = crop(0, 0);
        let reference = crop(-dx, -dy);
        let g = Graph::new();
        let f = caffe_forward(g.constant(target), g.constant(reference), config)?.flow.value();
        for y in r as usize..h - r as usize {
            for x in r as usize..w - r as usize {
                let fx = f.data()[(y * w + x) * 2];
                let fy = f.data()[(y * w + x) * 2 + 1];
                total += 1;
                if (fx - dx as f64).abs() <= 0.1 && (fy - dy as f64).abs() <= 0.1 {
                    good += 1;
                }
            }
        }
    }
    let frac = good as f64 / total as f64;
    Ok(CheckOutcome::new(
        "integer_shift_flow_recovery",
        frac >= 0.95,
        format!("interior_pixels={total} within_0.1px={:.2}%", 100.0 * frac),
    ))
}

/// Fits the pose of a textured plane seen after a 5 cm sideways step,
/// given its true depth.
pub fn pose_fit_check(seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let params = SceneParams::default();
    let scene = Scene::single_plane(seed, 4.0, &params);
    let snippet = scene.snippet(&[0.0, 0.0, 0.0, 0.05, 0.0, 0.0], &params, seed)?;
    let truth = snippet.truth.as_ref().expect("synthetic snippet");
    let cfg = PoseFitConfig::default();
    let fit = direct_pose_fit(&snippet.frames[1], &snippet.frames[2], &truth.depths[1], &snippet.intrinsics, &cfg)?;
    let expected = truth.relative[1].translation;
    let rel = (fit.pose.translation - expected).norm() / expected.norm();
    let secs = start.elapsed().as_secs_f64();
    Ok(CheckOutcome::new(
        "direct_pose_fit_recovers_5cm",
        rel < 0.05 && fit.iterations < 500 && secs < 60.0,
        format!("relative_error={:.4} iterations={} limit_seconds=60", rel, fit.iterations),
    )
    .timed(secs))
}

fn straight_line(n: usize, step: f64) -> Vec<PoseSE3> {
    (0..n).map(|i| PoseSE3::from_translation(0.0, 0.0, i as f64 * step)).collect()
}

/// Constructed-drift, similarity-recovery and identical-input checks.
pub fn odometry_checks() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    // a gently turning path so segments are not collinear
    let mut reference = Vec::new();
    let mut pose = PoseSE3::identity();
    for i in 0..60 {
        reference.push(pose.clone());
        let turn = if i % 2 == 0 { 0.02 } else { -0.015 };
        pose = pose.compose(&PoseSE3::from_vector(&[0.0, turn, 0.0, 0.0, 0.0, 0.5]));
    }
    let reference = Trajectory::from_poses(reference)?;
    // straight, so every segment's chord equals its traversed length
    let straight = Trajectory::from_poses(straight_line(40, 0.5))?;
    let drifted = Trajectory::from_poses(
        straight
            .poses
            .iter()
            .map(|p| PoseSE3::new(p.rotation, p.translation * 1.01))
            .collect(),
    )?;
    let cfg = SegmentConfig::default();
    let rel = kitti_relative_errors(&drifted, &straight, &cfg)?;
    let e_t = rel.as_ref().map(|r| r.e_t).unwrap_or(f64::NAN);
    out.push(CheckOutcome::new("one_percent_drift", (e_t - 1.0).abs() <= 1e-6, format!("e_t={e_t:.9}")));

    let rot = PoseSE3::from_vector(&[0.3, -0.2, 0.5, 0.0, 0.0, 0.0]).rotation;
    let offset = nalgebra::Vector3::new(1.0, -2.0, 0.5);
    let estimate = Trajectory::from_poses(
        reference.poses.iter().map(|p| PoseSE3::new(p.rotation, (rot * p.translation) * 0.5 + offset)).collect(),
    )?;
    let sim = umeyama_align(&estimate, &reference)?;
    out.push(CheckOutcome::new(
        "umeyama_recovers_scale",
        (sim.scale - 2.0).abs() <= 1e-9,
        format!("scale={:.12}", sim.scale),
    ));

    let line = Trajectory::from_poses(straight_line(20, 0.5))?;
    let same = evaluate(&line, &line, &cfg, AteMode::Snippet)?;
    let zero = same.ate == 0.0 && same.relative.as_ref().is_none_or(|r| r.e_t == 0.0 && r.e_r == 0.0);
    out.push(CheckOutcome::new("identical_trajectories_zero", zero, same.to_key_values().replace('\n', " ")));
    Ok(out)
}

/// `γ = 0` and `γ = 1` reproduce the semantic-only and positional-only
/// gated sums bit for bit.
pub fn gate_limit_check(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f32>::new();
    let (c, e) = (8, 8);
    let stage = InjectionStage::new(&mut store, "hpei", e, c, Some(16), &mut rng);
    let g = Graph::new();
    let b = store.bind(&g);
    let rand = |rng: &mut ChaCha8Rng, s: &[usize]| Tensor::<f32>::from_fn(s, |_| rng.random_range(-1.0..1.0));
    let prev = g.constant(rand(&mut rng, &[c, 6, 6]));
    let sem = g.constant(rand(&mut rng, &[c, 6, 6]));
    let pos = g.constant(rand(&mut rng, &[e, 6, 6]));
    let zero = stage.inject(&b, prev, sem, pos, GateMode::Fixed(0.0))?.gated_sum.value();
    let one = stage.inject(&b, prev, sem, pos, GateMode::Fixed(1.0))?.gated_sum.value();
    let semantic_only = sem.add(prev)?.value();
    let positional_only = stage.reduce.forward(&b, pos)?.add(prev)?.value();
    let bits = |a: &Tensor<f32>, b: &Tensor<f32>| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    let (z, o) = (bits(&zero, &semantic_only), bits(&one, &positional_only));
    Ok(CheckOutcome::new("gate_limits_bitwise", z && o, format!("gamma0_semantic_only={z} gamma1_positional_only={o}")))
}

/// Everything `selftest` runs, in order.
pub fn selftest(seed: u64) -> Result<Vec<CheckOutcome>> {
    let flow = FlowConfig::default();
    let mut out = vec![
        soft_argmax_oracle(seed, 10_000, flow.window, flow.sharpness)?,
        confidence_oracle(seed, 1_000, flow.window)?,
    ];
    out.extend(gradient_outcomes(seed)?);
    out.push(shift_recovery(seed, &flow)?);
    out.push(pose_fit_check(seed)?);
    out.extend(odometry_checks()?);
    out.push(gate_limit_check(seed)?);
    Ok(out)
}
