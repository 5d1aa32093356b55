//! Recovers a known similarity transform between two point sets.

use nalgebra::{Rotation3, Vector3};
use posecue::camera::PoseSE3;
use posecue::odometry::{umeyama_align, Trajectory};

fn main() -> posecue::Result<()> {
    let rotation = *Rotation3::from_euler_angles(0.1, -0.4, 0.2).matrix();
    let (scale, shift) = (1.7, Vector3::new(2.0, -1.0, 0.5));
    let points: Vec<Vector3<f64>> =
        (0..20).map(|i| Vector3::new((i as f64 * 0.3).sin() * 3.0, 0.1 * i as f64, i as f64 * 0.5)).collect();
    let at = |p: Vector3<f64>| PoseSE3::from_translation(p.x, p.y, p.z);
    let source = Trajectory::from_poses(points.iter().map(|p| at(*p)).collect())?;
    let target = Trajectory::from_poses(points.iter().map(|p| at(scale * (rotation * p) + shift)).collect())?;
    let sim = umeyama_align(&source, &target)?;
    println!("scale {:.9} (true {scale})", sim.scale);
    println!("rotation error {:.2e}", (sim.rotation - rotation).abs().max());
    println!("translation {:?}", sim.translation.as_slice());
    Ok(())
}
