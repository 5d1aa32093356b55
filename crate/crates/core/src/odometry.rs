//! Trajectory parsing, similarity alignment and odometry metrics.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use crate::camera::PoseSE3;
use crate::error::{PipelineError, Result};

/// Largest rotation drift repaired when parsing.
pub const ORTHONORMAL_REPAIR_TOL: f64 = 1e-3;

/// World-from-camera poses with strictly increasing frame indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<PoseSE3>,
    pub indices: Vec<usize>,
}

impl Trajectory {
    pub fn new(poses: Vec<PoseSE3>, indices: Vec<usize>) -> Result<Self> {
        if poses.is_empty() || poses.len() != indices.len() {
            return Err(PipelineError::Data(format!("{} poses with {} indices", poses.len(), indices.len())));
        }
        if indices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(PipelineError::Data("frame indices must be strictly increasing".into()));
        }
        Ok(Trajectory { poses, indices })
    }

    pub fn from_poses(poses: Vec<PoseSE3>) -> Result<Self> {
        let n = poses.len();
        Trajectory::new(poses, (0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| p.translation).collect()
    }

    /// Cumulative path length at each pose.
    pub fn path_lengths(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.poses.windows(2) {
            acc += (w[1].translation - w[0].translation).norm();
            out.push(acc);
        }
        out
    }

    /// Chains relative frame-to-frame motions starting at the identity.
    pub fn from_relative(steps: &[PoseSE3]) -> Result<Self> {
        let mut poses = Vec::with_capacity(steps.len() + 1);
        poses.push(PoseSE3::identity());
        for s in steps {
            let last = *poses.last().expect("non-empty");
            poses.push(last.compose(s));
        }
        Trajectory::from_poses(poses)
    }

    /// KITTI text: one row-major 3x4 `[R|t]` per line.
    pub fn to_kitti(&self) -> String {
        let mut s = String::new();
        for p in &self.poses {
            let row = p.to_row_major();
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

/// Nearest rotation matrix (polar decomposition via SVD).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

/// Parses KITTI pose text. Rotations off by at most
/// [`ORTHONORMAL_REPAIR_TOL`] are re-orthonormalized; worse ones are
/// rejected.
pub fn parse_kitti_poses(text: &str) -> Result<Trajectory> {
    let mut poses = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| PipelineError::Parse { line: n + 1, reason: e.to_string() })?;
        if vals.len() != 12 {
            return Err(PipelineError::Parse { line: n + 1, reason: format!("expected 12 values, got {}", vals.len()) });
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(PipelineError::Parse { line: n + 1, reason: "non-finite value".into() });
        }
        let r = Matrix3::new(vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10]);
        let t = Vector3::new(vals[3], vals[7], vals[11]);
        let mut pose = PoseSE3::new(r, t);
        let drift = pose.orthonormality_error();
        if drift > ORTHONORMAL_REPAIR_TOL {
            return Err(PipelineError::Data(format!("line {}: rotation is not orthonormal (drift {drift:e})", n + 1)));
        }
        if drift > 0.0 {
            pose.rotation = nearest_rotation(&r);
        }
        poses.push(pose);
    }
    if poses.is_empty() {
        return Err(PipelineError::Data("no poses".into()));
    }
    Trajectory::from_poses(poses)
}

/// `q ≈ s R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }
}

fn umeyama_core(src: &[Vector3<f64>], dst: &[Vector3<f64>], strict: bool) -> Result<Similarity> {
    if src.len() != dst.len() {
        return Err(PipelineError::Argument(format!("point counts differ: {} vs {}", src.len(), dst.len())));
    }
    let n = src.len();
    if n == 0 {
        return Err(PipelineError::Argument("no points to align".into()));
    }
    let nf = n as f64;
    let mu_p = src.iter().sum::<Vector3<f64>>() / nf;
    let mu_q = dst.iter().sum::<Vector3<f64>>() / nf;
    let var_p = src.iter().map(|p| (p - mu_p).norm_squared()).sum::<f64>() / nf;
    let mut cov = Matrix3::zeros();
    for (p, q) in src.iter().zip(dst) {
        cov += (q - mu_q) * (p - mu_p).transpose();
    }
    cov /= nf;
    let svd = cov.svd(true, true);
    let (u, vt, sv) = (svd.u.expect("u"), svd.v_t.expect("v_t"), svd.singular_values);
    let top = sv.max();
    let rank = sv.iter().filter(|s| **s > 1e-12 * top.max(f64::MIN_POSITIVE)).count();
    if strict && (n < 3 || rank < 2) {
        return Err(PipelineError::Degenerate(format!("covariance rank {rank} < 2 (collinear or coincident points)")));
    }
    if var_p == 0.0 || top == 0.0 {
        return Ok(Similarity { scale: 1.0, rotation: Matrix3::identity(), translation: mu_q - mu_p });
    }
    let mut s = Matrix3::identity();
    if u.determinant() * vt.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * vt;
    let scale = (sv[0] * s[(0, 0)] + sv[1] * s[(1, 1)] + sv[2] * s[(2, 2)]) / var_p;
    Ok(Similarity { scale, rotation, translation: mu_q - scale * (rotation * mu_p) })
}

/// Closed-form similarity minimizing `Σ ‖s R p_i + t - q_i‖²` over the
/// trajectory positions. Collinear or coincident positions are an error.
pub fn umeyama_align(estimate: &Trajectory, reference: &Trajectory) -> Result<Similarity> {
    if estimate.len() != reference.len() {
        return Err(PipelineError::Argument(format!("lengths differ: {} vs {}", estimate.len(), reference.len())));
    }
    umeyama_core(&estimate.positions(), &reference.positions(), true)
}

/// Like [`umeyama_align`] on raw points, but returns one of the optimal
/// transforms when the geometry is degenerate.
pub fn umeyama_points_lenient(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Similarity> {
    umeyama_core(src, dst, false)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AteMode {
    /// Mean over all 5-frame windows of the per-window aligned RMSE.
    #[default]
    Snippet,
    /// One alignment over the whole trajectory.
    Full,
}

pub const SNIPPET_LEN: usize = 5;

/// RMSE under the closed-form alignment. The identity is also a feasible
/// similarity, so the smaller of the two is taken; this keeps exact matches
/// at exactly zero instead of SVD round-off.
fn aligned_rmse(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<f64> {
    let sim = umeyama_points_lenient(src, dst)?;
    let n = src.len() as f64;
    let aligned: f64 = src.iter().zip(dst).map(|(p, q)| (sim.apply(p) - q).norm_squared()).sum();
    let raw: f64 = src.iter().zip(dst).map(|(p, q)| (p - q).norm_squared()).sum();
    Ok((aligned.min(raw) / n).sqrt())
}

/// Absolute trajectory error in meters after 7-DoF alignment.
pub fn ate(estimate: &Trajectory, reference: &Trajectory, mode: AteMode) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(PipelineError::Argument(format!("lengths differ: {} vs {}", estimate.len(), reference.len())));
    }
    let (p, q) = (estimate.positions(), reference.positions());
    match mode {
        AteMode::Full => aligned_rmse(&p, &q),
        AteMode::Snippet => {
            if p.len() < SNIPPET_LEN {
                return Err(PipelineError::Argument(format!(
                    "snippet ATE needs at least {SNIPPET_LEN} frames, got {}",
                    p.len()
                )));
            }
            let windows = p.len() - SNIPPET_LEN + 1;
            let mut total = 0.0;
            for s in 0..windows {
                total += aligned_rmse(&p[s..s + SNIPPET_LEN], &q[s..s + SNIPPET_LEN])?;
            }
            Ok(total / windows as f64)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentConfig {
    /// Segment path lengths in meters.
    pub lengths: Vec<f64>,
    /// Stride between segment start frames.
    pub step: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig { lengths: vec![2.0, 4.0, 6.0, 8.0], step: 1 }
    }
}

impl SegmentConfig {
    /// The KITTI benchmark lengths of 100..800 m with a 10-frame stride.
    pub fn kitti() -> Self {
        SegmentConfig { lengths: (1..=8).map(|i| 100.0 * i as f64).collect(), step: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentError {
    pub first: usize,
    pub last: usize,
    pub nominal_length: f64,
    /// Reference path length actually traversed between the two frames.
    pub length: f64,
    /// Translation error in meters.
    pub translation: f64,
    /// Rotation error in radians.
    pub rotation: f64,
}

/// Relative-pose errors of every segment: for each start frame and each
/// nominal length, the first frame whose path distance exceeds it.
pub fn segment_errors(estimate: &Trajectory, reference: &Trajectory, config: &SegmentConfig) -> Result<Vec<SegmentError>> {
    if estimate.len() != reference.len() {
        return Err(PipelineError::Argument(format!("lengths differ: {} vs {}", estimate.len(), reference.len())));
    }
    if config.step == 0 {
        return Err(PipelineError::Argument("segment step must be positive".into()));
    }
    let dist = reference.path_lengths();
    let mut out = Vec::new();
    for first in (0..reference.len()).step_by(config.step) {
        for &len in &config.lengths {
            let Some(last) = (first..reference.len()).find(|&j| dist[j] > dist[first] + len) else { continue };
            let gt = reference.poses[first].inverse().compose(&reference.poses[last]);
            let est = estimate.poses[first].inverse().compose(&estimate.poses[last]);
            let err = est.inverse().compose(&gt);
            out.push(SegmentError {
                first,
                last,
                nominal_length: len,
                length: dist[last] - dist[first],
                translation: err.translation.norm(),
                rotation: err.angle(),
            });
        }
    }
    Ok(out)
}

/// `e_t` in percent and `e_r` in degrees per 100 m.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeErrors {
    pub e_t: f64,
    pub e_r: f64,
    pub segments: usize,
}

/// Averages segment errors, each normalized by its traversed length.
/// `None` when the trajectory is shorter than every segment length.
pub fn kitti_relative_errors(
    estimate: &Trajectory,
    reference: &Trajectory,
    config: &SegmentConfig,
) -> Result<Option<RelativeErrors>> {
    let segs = segment_errors(estimate, reference, config)?;
    if segs.is_empty() {
        return Ok(None);
    }
    let n = segs.len() as f64;
    let e_t = segs.iter().map(|s| s.translation / s.length).sum::<f64>() / n * 100.0;
    let e_r = segs.iter().map(|s| s.rotation / s.length).sum::<f64>() / n * 100.0 * 180.0 / std::f64::consts::PI;
    Ok(Some(RelativeErrors { e_t, e_r, segments: segs.len() }))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdometryReport {
    pub relative: Option<RelativeErrors>,
    pub ate: f64,
    pub mode: AteMode,
}

pub fn evaluate(
    estimate: &Trajectory,
    reference: &Trajectory,
    segments: &SegmentConfig,
    mode: AteMode,
) -> Result<OdometryReport> {
    Ok(OdometryReport { relative: kitti_relative_errors(estimate, reference, segments)?, ate: ate(estimate, reference, mode)?, mode })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| format!("{x}"))
}

impl OdometryReport {
    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mode = match self.mode {
            AteMode::Snippet => "snippet",
            AteMode::Full => "full",
        };
        format!(
            "e_t={}\ne_r={}\nate={}\nsegments={}\nate_mode={mode}\n",
            fmt_opt(self.relative.map(|r| r.e_t)),
            fmt_opt(self.relative.map(|r| r.e_r)),
            self.ate,
            self.relative.map_or(0, |r| r.segments),
        )
    }

    /// Aligned plain-text table with units.
    pub fn to_table(&self) -> String {
        let rows = [
            ("e_t", "%", fmt_opt(self.relative.map(|r| r.e_t))),
            ("e_r", "deg/100m", fmt_opt(self.relative.map(|r| r.e_r))),
            ("ATE", "m", format!("{}", self.ate)),
        ];
        let mut s = String::new();
        let _ = writeln!(s, "{:<8}{:<10}{:>24}", "metric", "unit", "value");
        for (m, u, v) in rows {
            let _ = writeln!(s, "{m:<8}{u:<10}{v:>24}");
        }
        s
    }
}

/// Top-down (x, z) plot of both trajectories as SVG polylines.
pub fn trajectory_svg(estimate: &Trajectory, reference: &Trajectory) -> String {
    let all: Vec<(f64, f64)> = estimate
        .poses
        .iter()
        .chain(&reference.poses)
        .map(|p| (p.translation.x, p.translation.z))
        .collect();
    let (mut x0, mut x1, mut z0, mut z1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, z) in &all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        z0 = z0.min(*z);
        z1 = z1.max(*z);
    }
    let span = (x1 - x0).max(z1 - z0).max(1e-9);
    let (size, pad) = (400.0, 10.0);
    let map = |x: f64, z: f64| (pad + (x - x0) / span * size, pad + size - (z - z0) / span * size);
    let line = |t: &Trajectory| {
        t.poses
            .iter()
            .map(|p| {
                let (u, v) = map(p.translation.x, p.translation.z);
                format!("{u:.3},{v:.3}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let dim = size + 2.0 * pad;
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{dim}\" height=\"{dim}\">\n\
         <polyline fill=\"none\" stroke=\"black\" points=\"{}\"/>\n\
         <polyline fill=\"none\" stroke=\"red\" points=\"{}\"/>\n</svg>\n",
        line(reference),
        line(estimate)
    )
}
