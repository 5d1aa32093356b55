//! Fits a camera translation by gradient descent on the photometric error,
//! using ground-truth depth from a rendered plane.

use posecue::synth::{Scene, SceneParams};
use posecue::training::{direct_pose_fit, PoseFitConfig};

fn main() -> posecue::Result<()> {
    let params = SceneParams::default();
    let scene = Scene::single_plane(11, 4.0, &params);
    let snippet = scene.snippet(&[0.0, 0.0, 0.0, 0.05, 0.0, 0.0], &params, 11)?;
    let truth = snippet.truth.as_ref().expect("rendered snippets carry ground truth");
    let fit = direct_pose_fit(
        &snippet.frames[1],
        &snippet.frames[2],
        &truth.depths[1],
        &snippet.intrinsics,
        &PoseFitConfig::default(),
    )?;
    let t = fit.pose.translation;
    let want = truth.relative[1].translation;
    println!("fitted t = ({:+.4}, {:+.4}, {:+.4})", t.x, t.y, t.z);
    println!("true   t = ({:+.4}, {:+.4}, {:+.4})", want.x, want.y, want.z);
    println!(
        "loss {:.5} -> {:.5} over {} iterations",
        fit.losses[0],
        fit.losses.last().copied().unwrap_or(f64::NAN),
        fit.iterations
    );
    Ok(())
}
