//! Ray-cast fronto-parallel plane scenes with known depth and motion.
//!
//! The camera at the middle frame sits at the world origin looking along
//! `+z`. A motion vector `M` gives `C_{t+1} = C_t ∘ M` and
//! `C_{t-1} = C_t ∘ M⁻¹` (world-from-camera poses).

use std::f64::consts::TAU;
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use nalgebra::Vector3;
use posecue_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::{CameraIntrinsics, PoseSE3};
use crate::error::{PipelineError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Wave {
    pub amplitude: [f64; 3],
    /// Cycles per meter along world x and y.
    pub frequency: [f64; 2],
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    pub base: [f64; 3],
    pub waves: Vec<Wave>,
}

impl Texture {
    pub fn color(&self, x: f64, y: f64, contrast: f64) -> [f64; 3] {
        let mut c = self.base;
        for w in &self.waves {
            let s = (TAU * (w.frequency[0] * x + w.frequency[1] * y) + w.phase).sin();
            for ch in 0..3 {
                c[ch] += contrast * w.amplitude[ch] * s;
            }
        }
        c.map(|v| v.clamp(0.0, 1.0))
    }
}

/// A plane `z = depth` in world coordinates, optionally bounded to a
/// rectangle `[x0, x1] x [y0, y1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub depth: f64,
    pub bounds: Option<[f64; 4]>,
    pub texture: Texture,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// Background first; later planes are closer.
    pub planes: Vec<Plane>,
    pub contrast: f64,
    /// Standard deviation of additive per-pixel sensor noise.
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    pub contrast: f64,
    pub noise: f64,
    /// Number of rectangles in front of the background.
    pub foreground: std::ops::RangeInclusive<usize>,
    pub background_depth: (f64, f64),
    pub foreground_depth: (f64, f64),
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            height: 64,
            width: 192,
            contrast: 1.0,
            noise: 0.0,
            foreground: 1..=3,
            background_depth: (8.0, 14.0),
            foreground_depth: (2.5, 6.0),
        }
    }
}

impl SceneParams {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::kitti_like(self.height, self.width)
    }
}

/// Known depth and relative poses of a rendered snippet.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub depths: [Tensor<f32>; 3],
    /// Target→reference poses for the previous and next frames.
    pub relative: [PoseSE3; 2],
    pub motion: [f64; 6],
}

/// Three consecutive frames `(t-1, t, t+1)`; the middle one is the target.
#[derive(Clone, Debug)]
pub struct Snippet {
    pub frames: [Tensor<f32>; 3],
    pub intrinsics: CameraIntrinsics,
    pub truth: Option<GroundTruth>,
}

impl Snippet {
    pub fn target(&self) -> &Tensor<f32> {
        &self.frames[1]
    }
}

fn random_texture(rng: &mut ChaCha8Rng, depth: f64, k: &CameraIntrinsics) -> Texture {
    // keep projected periods >= ~6 px at the plane's own depth
    let max_freq = k.fx.min(k.fy) / (6.0 * depth);
    let base = [0.0; 3].map(|_| rng.random_range(0.3..0.7));
    let waves = (0..16)
        .map(|_| {
            let f = rng.random_range(0.1..1.0) * max_freq;
            let theta = rng.random_range(0.0..TAU);
            Wave {
                amplitude: [0.0; 3].map(|_| rng.random_range(0.03..0.1)),
                frequency: [f * theta.cos(), f * theta.sin()],
                phase: rng.random_range(0.0..TAU),
            }
        })
        .collect();
    Texture { base, waves }
}

impl Scene {
    pub fn random(seed: u64, params: &SceneParams) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = params.intrinsics();
        let bg = rng.random_range(params.background_depth.0..params.background_depth.1);
        let mut planes = vec![Plane { depth: bg, bounds: None, texture: random_texture(&mut rng, bg, &k) }];
        let n = rng.random_range(params.foreground.clone());
        let mut depths: Vec<f64> =
            (0..n).map(|_| rng.random_range(params.foreground_depth.0..params.foreground_depth.1)).collect();
        depths.sort_by(|a, b| b.total_cmp(a));
        for z in depths {
            let half_w = z * params.width as f64 / (2.0 * k.fx);
            let half_h = z * params.height as f64 / (2.0 * k.fy);
            let cx = rng.random_range(-0.8..0.8) * half_w;
            let cy = rng.random_range(-0.6..0.6) * half_h;
            let sx = rng.random_range(0.2..0.5) * half_w;
            let sy = rng.random_range(0.3..0.8) * half_h;
            planes.push(Plane {
                depth: z,
                bounds: Some([cx - sx, cx + sx, cy - sy, cy + sy]),
                texture: random_texture(&mut rng, z, &k),
            });
        }
        Scene { planes, contrast: params.contrast, noise: params.noise }
    }

    /// A single infinite textured plane at `depth`.
    pub fn single_plane(seed: u64, depth: f64, params: &SceneParams) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let texture = random_texture(&mut rng, depth, &params.intrinsics());
        Scene { planes: vec![Plane { depth, bounds: None, texture }], contrast: params.contrast, noise: params.noise }
    }

    /// Renders image `[3, h, w]` and depth `[h, w]` from a world-from-camera
    /// pose. Errors if any pixel sees no surface.
    pub fn render(
        &self,
        camera: &PoseSE3,
        k: &CameraIntrinsics,
        h: usize,
        w: usize,
        noise_seed: u64,
    ) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let mut image = vec![0f32; 3 * h * w];
        let mut depth = vec![0f32; h * w];
        let origin = camera.translation;
        for y in 0..h {
            for x in 0..w {
                let ray = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
                let dir = camera.rotation * ray;
                let mut hit: Option<(f64, usize, f64, f64)> = None;
                for (i, p) in self.planes.iter().enumerate() {
                    if dir.z.abs() < 1e-12 {
                        continue;
                    }
                    let lambda = (p.depth - origin.z) / dir.z;
                    if lambda <= 1e-3 || hit.is_some_and(|(l, ..)| l <= lambda) {
                        continue;
                    }
                    let px = origin.x + lambda * dir.x;
                    let py = origin.y + lambda * dir.y;
                    if let Some([x0, x1, y0, y1]) = p.bounds {
                        if px < x0 || px > x1 || py < y0 || py > y1 {
                            continue;
                        }
                    }
                    hit = Some((lambda, i, px, py));
                }
                let Some((lambda, i, px, py)) = hit else {
                    return Err(PipelineError::Degenerate(format!(
                        "pixel ({x}, {y}) sees no surface; motion leaves the scene"
                    )));
                };
                let c = self.planes[i].texture.color(px, py, self.contrast);
                for ch in 0..3 {
                    image[ch * h * w + y * w + x] = c[ch] as f32;
                }
                depth[y * w + x] = lambda as f32;
            }
        }
        if self.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            let normal = Normal::new(0.0, self.noise).expect("finite noise");
            for v in image.iter_mut() {
                *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
            }
        }
        Ok((Tensor::from_vec(&[3, h, w], image)?, Tensor::from_vec(&[h, w], depth)?))
    }

    /// Renders `(t-1, t, t+1)` under `motion`.
    pub fn snippet(&self, motion: &[f64; 6], params: &SceneParams, noise_seed: u64) -> Result<Snippet> {
        let k = params.intrinsics();
        let m = PoseSE3::from_vector(motion);
        let cams = [m.inverse(), PoseSE3::identity(), m];
        let mut frames = Vec::with_capacity(3);
        let mut depths = Vec::with_capacity(3);
        for (i, c) in cams.iter().enumerate() {
            let (img, d) = self.render(c, &k, params.height, params.width, noise_seed.wrapping_add(i as u64))?;
            frames.push(img);
            depths.push(d);
        }
        let relative = [cams[0].inverse().compose(&cams[1]), cams[2].inverse().compose(&cams[1])];
        let [f0, f1, f2]: [Tensor<f32>; 3] = frames.try_into().expect("three frames");
        let [d0, d1, d2]: [Tensor<f32>; 3] = depths.try_into().expect("three depths");
        Ok(Snippet {
            frames: [f0, f1, f2],
            intrinsics: k,
            truth: Some(GroundTruth { depths: [d0, d1, d2], relative, motion: *motion }),
        })
    }
}

/// Distribution of per-step camera motion: mostly forward translation
/// with lateral and vertical components and small rotations.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionPrior {
    pub speed: (f64, f64),
    pub lateral: f64,
    pub vertical: f64,
    pub yaw: f64,
    pub pitch_roll: f64,
}

impl Default for MotionPrior {
    fn default() -> Self {
        MotionPrior { speed: (0.1, 0.4), lateral: 0.5, vertical: 0.2, yaw: 0.02, pitch_roll: 0.005 }
    }
}

impl MotionPrior {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> [f64; 6] {
        let speed = rng.random_range(self.speed.0..=self.speed.1);
        let dir = Vector3::new(
            rng.random_range(-self.lateral..=self.lateral),
            rng.random_range(-self.vertical..=self.vertical),
            1.0,
        )
        .normalize()
            * speed;
        [
            rng.random_range(-self.pitch_roll..=self.pitch_roll),
            rng.random_range(-self.yaw..=self.yaw),
            rng.random_range(-self.pitch_roll..=self.pitch_roll),
            dir.x,
            dir.y,
            dir.z,
        ]
    }
}

/// Renders the snippet with index `index` of a seeded stream; retries
/// with a fresh scene when a draw leaves the scene.
pub fn synth_snippet(seed: u64, index: u64, params: &SceneParams, prior: &MotionPrior) -> Result<Snippet> {
    let mut last = None;
    for attempt in 0..8u64 {
        let s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index.wrapping_mul(1000) + attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let scene = Scene::random(rng.random(), params);
        let motion = prior.sample(&mut rng);
        match scene.snippet(&motion, params, rng.random()) {
            Ok(snip) => return Ok(snip),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Renders snippets on a background thread into a bounded queue. The
/// sequence is a pure function of `(seed, params, prior)`.
pub struct SnippetStream {
    receiver: Receiver<Result<Snippet>>,
    worker: Option<JoinHandle<()>>,
}

impl SnippetStream {
    pub fn spawn(seed: u64, count: u64, capacity: usize, params: SceneParams, prior: MotionPrior) -> Self {
        let (tx, receiver) = sync_channel(capacity.max(1));
        let worker = std::thread::spawn(move || {
            for i in 0..count {
                if tx.send(synth_snippet(seed, i, &params, &prior)).is_err() {
                    break;
                }
            }
        });
        SnippetStream { receiver, worker: Some(worker) }
    }
}

impl Iterator for SnippetStream {
    type Item = Result<Snippet>;

    fn next(&mut self) -> Option<Self::Item> {
        self.receiver.recv().ok()
    }
}

impl Drop for SnippetStream {
    fn drop(&mut self) {
        // unblock a producer waiting on a full queue
        while self.receiver.try_recv().is_ok() {}
        if let Some(w) = self.worker.take() {
            drop(std::mem::replace(&mut self.receiver, sync_channel(1).1));
            let _ = w.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneParams {
        SceneParams { height: 16, width: 48, ..SceneParams::default() }
    }

    #[test]
    fn zero_motion_gives_identical_frames() {
        let p = small();
        let snip = Scene::random(4, &p).snippet(&[0.0; 6], &p, 0).unwrap();
        assert_eq!(snip.frames[0], snip.frames[1]);
        assert_eq!(snip.frames[2], snip.frames[1]);
        let t = snip.truth.unwrap();
        assert!(t.relative.iter().all(|r| r.max_abs_diff(&PoseSE3::identity()) == 0.0));
    }

    #[test]
    fn turning_around_is_degenerate() {
        let p = small();
        let err = Scene::random(1, &p).snippet(&[0.0, std::f64::consts::PI, 0.0, 0.0, 0.0, 0.0], &p, 0);
        assert!(matches!(err, Err(PipelineError::Degenerate(_))));
    }

    #[test]
    fn stream_is_deterministic() {
        let p = small();
        let a: Vec<_> = SnippetStream::spawn(9, 3, 1, p.clone(), MotionPrior::default()).map(|s| s.unwrap()).collect();
        let b: Vec<_> = SnippetStream::spawn(9, 3, 2, p, MotionPrior::default()).map(|s| s.unwrap()).collect();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.frames[1], y.frames[1]);
        }
    }
}
