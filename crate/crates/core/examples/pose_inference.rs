//! Predicts the pose between two rendered frames with an untrained model
//! and with the ground truth for comparison.

use posecue::camera::PoseSE3;
use posecue::networks::{Model, ModelConfig};
use posecue::synth::{synth_snippet, MotionPrior, SceneParams};

fn main() -> posecue::Result<()> {
    let model = Model::<f32>::new(ModelConfig::default())?;
    let snippet = synth_snippet(1, 0, &SceneParams::default(), &MotionPrior::default())?;
    let truth = snippet.truth.as_ref().expect("ground truth");
    let v = model.predict_pose(&snippet.frames[2], &snippet.frames[1], &snippet.intrinsics)?;
    let depth = model.predict_depth(&snippet.frames[1])?;
    println!("predicted target->next {:?}", PoseSE3::from_vector(&v).translation.as_slice());
    println!("true      target->next {:?}", truth.relative[1].translation.as_slice());
    println!("predicted depth range {:.2}..{:.2} m", depth.data().iter().copied().fold(f32::MAX, f32::min), depth.data().iter().copied().fold(0.0, f32::max));
    Ok(())
}
