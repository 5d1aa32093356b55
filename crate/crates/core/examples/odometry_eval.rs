//! Evaluates a drifting estimate against a reference trajectory and
//! writes both as KITTI pose files plus an SVG plot.

use posecue::camera::PoseSE3;
use posecue::odometry::{evaluate, trajectory_svg, AteMode, SegmentConfig, Trajectory};

fn main() -> posecue::Result<()> {
    let turn = |yaw: f64, step: f64| PoseSE3::from_vector(&[0.0, yaw, 0.0, 0.0, 0.0, step]);
    let reference = Trajectory::from_relative(&(0..60).map(|i| turn(if i < 30 { 0.0 } else { 0.02 }, 0.2)).collect::<Vec<_>>())?;
    let estimate = Trajectory::from_relative(&(0..60).map(|i| turn(if i < 30 { 0.001 } else { 0.021 }, 0.19)).collect::<Vec<_>>())?;
    for mode in [AteMode::Snippet, AteMode::Full] {
        let report = evaluate(&estimate, &reference, &SegmentConfig::default(), mode)?;
        print!("{}", report.to_table());
    }
    let dir = std::env::temp_dir();
    std::fs::write(dir.join("estimate.txt"), estimate.to_kitti())?;
    std::fs::write(dir.join("reference.txt"), reference.to_kitti())?;
    std::fs::write(dir.join("trajectories.svg"), trajectory_svg(&estimate, &reference))?;
    println!("wrote estimate.txt, reference.txt, trajectories.svg to {}", dir.display());
    Ok(())
}
