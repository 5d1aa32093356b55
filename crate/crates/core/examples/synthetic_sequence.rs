//! Renders a short synthetic sequence and writes it as a manifest
//! directory of PPM frames, depth tensors and KITTI poses.

use posecue::dataset::{read_sequence, render_sequence, write_sequence};
use posecue::synth::{MotionPrior, SceneParams};

fn main() -> posecue::Result<()> {
    let dir = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("posecue-seq"));
    let seq = render_sequence(9, 6, &SceneParams::default(), &MotionPrior::default())?;
    write_sequence(&dir, &seq)?;
    let back = read_sequence(&dir)?;
    println!("wrote {} frames to {}", back.frames.len(), dir.display());
    for (i, p) in back.poses.iter().enumerate() {
        let t = p.translation;
        println!("  frame {i}: camera at ({:+.3}, {:+.3}, {:+.3})", t.x, t.y, t.z);
    }
    Ok(())
}
