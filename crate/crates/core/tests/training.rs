use posecue::camera::CameraIntrinsics;
use posecue::checkpoint::{load_into, write_checkpoint};
use posecue::losses::{photometric_loss, LossWeights, Reconstruction};
use posecue::networks::{Model, ModelConfig};
use posecue::synth::{synth_snippet, MotionPrior, Scene, SceneParams, Snippet};
use posecue::training::{direct_pose_fit, PoseFitConfig, TrainConfig, Trainer};
use posecue::PipelineError;
use posecue_tensor::{Graph, Tensor};

fn small() -> (ModelConfig, TrainConfig) {
    let model = ModelConfig { height: 32, width: 96, ..ModelConfig::default() };
    let scene = SceneParams { height: 32, width: 96, ..SceneParams::default() };
    (model, TrainConfig { steps: 6, scene, ..TrainConfig::default() })
}

fn snippet(cfg: &TrainConfig, index: u64) -> Snippet {
    synth_snippet(21, index, &cfg.scene, &cfg.motion).unwrap()
}

#[test]
fn zero_learning_rate_leaves_parameters_bitwise_unchanged() {
    let (mc, tc) = small();
    let model = Model::<f32>::new(mc).unwrap();
    let before = model.fingerprint();
    let mut t = Trainer::new(model, TrainConfig { learning_rate: 0.0, ..tc.clone() });
    for i in 0..3 {
        t.train_step(&snippet(&tc, i)).unwrap();
    }
    assert_eq!(t.model.fingerprint(), before);
}

#[test]
fn training_never_touches_the_frozen_branch() {
    let (mc, tc) = small();
    let model = Model::<f32>::new(mc).unwrap();
    let (frozen, all) = (model.frozen_fingerprint(), model.fingerprint());
    let mut t = Trainer::new(model, tc);
    t.run(|_, _| {}).unwrap();
    assert_eq!(t.step, 6);
    assert_eq!(t.model.frozen_fingerprint(), frozen);
    assert_ne!(t.model.fingerprint(), all);
}

#[test]
fn same_seed_gives_same_losses_and_checkpoint() {
    let (mc, tc) = small();
    let run = || {
        let mut t = Trainer::new(Model::<f32>::new(mc.clone()).unwrap(), tc.clone());
        let losses = t.run(|_, _| {}).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&t.model.params, &mut bytes).unwrap();
        (losses, bytes)
    };
    let (la, ca) = run();
    let (lb, cb) = run();
    assert_eq!(la, lb);
    assert_eq!(ca, cb);
}

#[test]
fn checkpoint_restores_predictions() {
    let (mc, tc) = small();
    let mut t = Trainer::new(Model::<f32>::new(mc.clone()).unwrap(), tc.clone());
    t.run(|_, _| {}).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&t.model.params, &mut bytes).unwrap();
    let mut fresh = Model::<f32>::new(ModelConfig { seed: 99, ..mc }).unwrap();
    load_into(&mut fresh.params, bytes.as_slice()).unwrap();
    let s = snippet(&tc, 0);
    assert_eq!(
        t.model.predict_pose(&s.frames[0], &s.frames[1], &s.intrinsics).unwrap(),
        fresh.predict_pose(&s.frames[0], &s.frames[1], &s.intrinsics).unwrap()
    );
}

#[test]
fn checkpoint_for_another_architecture_is_rejected() {
    let (mc, _) = small();
    let a = Model::<f32>::new(mc.clone()).unwrap();
    let mut b = Model::<f32>::new(ModelConfig { channels: vec![8, 16, 32, 64], ..mc }).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&a.params, &mut bytes).unwrap();
    assert!(load_into(&mut b.params, bytes.as_slice()).is_err());
}

#[test]
fn automask_keeps_only_pixels_the_warp_explains_better() {
    let g = Graph::<f64>::new();
    let (h, w) = (6, 8);
    let target = Tensor::from_fn(&[3, h, w], |i| 0.2 + 0.05 * (i % 7) as f64);
    let left = |i: usize| (i % w) < w / 2;
    // the unwarped frame is off by 0.3 on the left half and exact on the right
    let source = Tensor::from_fn(&[3, h, w], |i| target.data()[i] + if left(i) { 0.3 } else { 0.0 });
    let warped = Tensor::from_fn(&[3, h, w], |i| target.data()[i] + if left(i) { 0.1 } else { 0.2 });
    let loss = |automask: bool| {
        let rec = Reconstruction { warped: g.constant(warped.clone()), mask: Tensor::ones(&[h, w]), source: Some(g.constant(source.clone())) };
        let weights = LossWeights { ssim: 0.0, smoothness: 0.0, automask };
        photometric_loss(g.constant(target.clone()), &[rec], &weights).unwrap().item()
    };
    assert!((loss(true) - 0.1).abs() < 1e-12, "{}", loss(true));
    assert!((loss(false) - 0.15).abs() < 1e-12, "{}", loss(false));
}

#[test]
fn non_finite_input_aborts_with_diagnostics() {
    let (mc, tc) = small();
    let mut s = snippet(&tc, 0);
    s.frames[0].data_mut()[5] = f32::NAN;
    let mut t = Trainer::new(Model::<f32>::new(mc).unwrap(), tc);
    let err = t.train_step(&s).unwrap_err();
    match err {
        PipelineError::Diverged(msg) => assert!(msg.contains("depth_max") && msg.contains("pose_next_max"), "{msg}"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn overfitting_one_snippet_reduces_the_loss() {
    let (mc, tc) = small();
    let s = snippet(&tc, 3);
    let mut t = Trainer::new(Model::<f32>::new(mc).unwrap(), TrainConfig { steps: 10_000, ..tc });
    let losses: Vec<f64> = (0..200).map(|_| t.train_step(&s).unwrap().total).collect();
    // non-increasing when averaged over 20-step blocks
    let blocks: Vec<f64> = losses.chunks(20).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    for w in blocks.windows(2) {
        assert!(w[1] <= w[0], "{blocks:?}");
    }
}

#[test]
fn static_pairs_train_toward_identity() {
    let (mc, tc) = small();
    let still = MotionPrior { speed: (0.0, 0.0), yaw: 0.0, pitch_roll: 0.0, ..MotionPrior::default() };
    let cfg = TrainConfig { steps: 20, motion: still.clone(), loss: LossWeights { automask: false, ..LossWeights::default() }, ..tc };
    let mut t = Trainer::new(Model::<f32>::new(mc).unwrap(), cfg.clone());
    t.run(|_, _| {}).unwrap();
    let s = synth_snippet(5, 0, &cfg.scene, &still).unwrap();
    let v = t.model.predict_pose(&s.frames[0], &s.frames[1], &s.intrinsics).unwrap();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(norm < 0.01, "{v:?}");
}

#[test]
fn pose_fit_stays_at_identity_without_motion() {
    let params = SceneParams::default();
    let s = Scene::single_plane(2, 4.0, &params).snippet(&[0.0; 6], &params, 2).unwrap();
    let truth = s.truth.as_ref().unwrap();
    let fit = direct_pose_fit(&s.frames[1], &s.frames[2], &truth.depths[1], &s.intrinsics, &PoseFitConfig::default()).unwrap();
    let norm = fit.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(norm < 1e-3, "{:?}", fit.vector);
}

#[test]
fn pose_fit_error_falls_with_texture_contrast() {
    let errors: Vec<f64> = [0.15, 0.4, 1.0]
        .iter()
        .map(|&contrast| {
            let params = SceneParams { contrast, noise: 0.02, ..SceneParams::default() };
            let s = Scene::single_plane(7, 4.0, &params).snippet(&[0.0, 0.0, 0.0, 0.05, 0.0, 0.0], &params, 7).unwrap();
            let truth = s.truth.as_ref().unwrap();
            let cfg = PoseFitConfig { iterations: 200, ..PoseFitConfig::default() };
            let fit = direct_pose_fit(&s.frames[1], &s.frames[2], &truth.depths[1], &s.intrinsics, &cfg).unwrap();
            (fit.pose.translation - truth.relative[1].translation).norm()
        })
        .collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
}

#[test]
fn learning_rate_decays_for_the_final_sixth() {
    let cfg = TrainConfig { steps: 600, learning_rate: 1e-4, ..TrainConfig::default() };
    assert_eq!(cfg.learning_rate_at(0), 1e-4);
    assert_eq!(cfg.learning_rate_at(499), 1e-4);
    assert!((cfg.learning_rate_at(500) - 1e-5).abs() < 1e-20);
}

#[test]
fn camera_files_round_trip() {
    let k = CameraIntrinsics::new(110.0, 112.5, 95.5, 31.5).unwrap();
    assert_eq!(CameraIntrinsics::parse(&k.to_line()).unwrap(), k);
    assert!(CameraIntrinsics::parse("1 2 3").is_err());
}
