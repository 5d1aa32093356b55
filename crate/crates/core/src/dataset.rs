//! Continuous synthetic sequences and their on-disk manifest:
//! `frame_XXXX.ppm`, `depth_XXXX.bin` (TNSR), `poses.txt` (KITTI rows of
//! world-from-camera poses), `intrinsics.txt` and `manifest.txt`.

use std::fmt::Write as _;
use std::path::Path;

use posecue_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{CameraIntrinsics, PoseSE3};
use crate::error::{PipelineError, Result};
use crate::image_io::{load_ppm, save_ppm};
use crate::odometry::{parse_kitti_poses, Trajectory};
use crate::synth::{MotionPrior, Scene, SceneParams};

#[derive(Clone, Debug)]
pub struct Sequence {
    pub frames: Vec<Tensor<f32>>,
    pub depths: Vec<Tensor<f32>>,
    /// World-from-camera; the first camera is the world frame.
    pub poses: Vec<PoseSE3>,
    pub intrinsics: CameraIntrinsics,
}

/// One random scene traversed for `count` frames with per-step motion
/// drawn from `prior`; retries with a new scene if the path leaves it.
pub fn render_sequence(seed: u64, count: usize, params: &SceneParams, prior: &MotionPrior) -> Result<Sequence> {
    if count == 0 {
        return Err(PipelineError::Argument("a sequence needs at least one frame".into()));
    }
    let k = params.intrinsics();
    let mut last = None;
    for attempt in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(attempt));
        let scene = Scene::random(rng.random(), params);
        let mut pose = PoseSE3::identity();
        let mut seq = Sequence { frames: Vec::new(), depths: Vec::new(), poses: Vec::new(), intrinsics: k };
        let mut failed = None;
        for i in 0..count {
            match scene.render(&pose, &k, params.height, params.width, rng.random()) {
                Ok((img, depth)) => {
                    seq.frames.push(img);
                    seq.depths.push(depth);
                    seq.poses.push(pose);
                }
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
            if i + 1 < count {
                pose = pose.compose(&PoseSE3::from_vector(&prior.sample(&mut rng)));
            }
        }
        match failed {
            None => return Ok(seq),
            Some(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:04}.ppm")
}

pub fn depth_name(i: usize) -> String {
    format!("depth_{i:04}.bin")
}

/// Writes the manifest directory, creating it if needed.
pub fn write_sequence(dir: &Path, seq: &Sequence) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut listing = String::new();
    for (i, (img, depth)) in seq.frames.iter().zip(&seq.depths).enumerate() {
        save_ppm(img, &dir.join(frame_name(i)))?;
        std::fs::write(dir.join(depth_name(i)), depth.to_tnsr_bytes())?;
        let _ = writeln!(listing, "{} {}", frame_name(i), depth_name(i));
    }
    let trajectory = Trajectory::from_poses(seq.poses.clone())?;
    std::fs::write(dir.join("poses.txt"), trajectory.to_kitti())?;
    std::fs::write(dir.join("intrinsics.txt"), format!("{}\n", seq.intrinsics.to_line()))?;
    std::fs::write(dir.join("manifest.txt"), listing)?;
    Ok(())
}

/// Reads a directory written by [`write_sequence`]. Frames are quantized
/// to 8 bits by the PPM round trip.
pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    let listing = std::fs::read_to_string(dir.join("manifest.txt"))?;
    let mut frames = Vec::new();
    let mut depths = Vec::new();
    for (n, line) in listing.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let names: Vec<&str> = line.split_whitespace().collect();
        let [frame, depth] = names[..] else {
            return Err(PipelineError::Parse { line: n + 1, reason: "expected `frame depth` file names".into() });
        };
        frames.push(load_ppm(&dir.join(frame))?);
        depths.push(Tensor::read_tnsr(std::fs::File::open(dir.join(depth))?)?);
    }
    let poses = parse_kitti_poses(&std::fs::read_to_string(dir.join("poses.txt"))?)?.poses;
    if poses.len() != frames.len() {
        return Err(PipelineError::Data(format!("{} poses for {} frames", poses.len(), frames.len())));
    }
    let intrinsics = CameraIntrinsics::parse(&std::fs::read_to_string(dir.join("intrinsics.txt"))?)?;
    Ok(Sequence { frames, depths, poses, intrinsics })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let params = SceneParams { height: 16, width: 48, ..SceneParams::default() };
        let seq = render_sequence(3, 4, &params, &MotionPrior::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_sequence(dir.path(), &seq).unwrap();
        let back = read_sequence(dir.path()).unwrap();
        assert_eq!(back.frames.len(), 4);
        assert_eq!(back.depths, seq.depths);
        for (a, b) in back.poses.iter().zip(&seq.poses) {
            assert!(a.max_abs_diff(b) < 1e-9);
        }
        for (a, b) in back.frames.iter().zip(&seq.frames) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-6));
        }
    }
}
