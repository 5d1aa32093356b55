//! Warps the previous frame into the target view and compares the
//! photometric loss at the true pose against the identity pose.

use posecue::camera::{warp_reference, PoseSE3, PoseVar};
use posecue::losses::{photometric_loss, LossWeights, Reconstruction};
use posecue::synth::{synth_snippet, MotionPrior, SceneParams};
use posecue_tensor::Graph;

fn loss_at(snippet: &posecue::synth::Snippet, pose: &PoseSE3) -> posecue::Result<f64> {
    let truth = snippet.truth.as_ref().expect("ground truth");
    let g = Graph::<f64>::new();
    let reference = g.constant(snippet.frames[0].cast());
    let depth = g.constant(truth.depths[1].cast());
    let (warped, mask) = warp_reference(reference, depth, &snippet.intrinsics, &PoseVar::constant(&g, pose))?;
    let weights = LossWeights { automask: false, ..LossWeights::default() };
    let rec = Reconstruction { warped, mask, source: None };
    Ok(photometric_loss(g.constant(snippet.frames[1].cast()), &[rec], &weights)?.item())
}

fn main() -> posecue::Result<()> {
    let snippet = synth_snippet(5, 0, &SceneParams::default(), &MotionPrior::default())?;
    let truth = snippet.truth.as_ref().expect("ground truth");
    println!("identity pose loss {:.5}", loss_at(&snippet, &PoseSE3::identity())?);
    println!("true pose loss     {:.5}", loss_at(&snippet, &truth.relative[0])?);
    Ok(())
}
