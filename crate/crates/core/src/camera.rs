//! Pinhole intrinsics, rigid poses, back-projection and photometric warping.
//!
//! Relative poses map target-frame points into the reference frame:
//! `P_ref = R * P_tgt + t`.

use nalgebra::{Matrix3, Rotation3, Vector3};
use posecue_tensor::{Graph, Real, Tensor, Var};

use crate::error::{PipelineError, Result};

/// Minimum camera-frame depth for a projected point to count as visible.
pub const MIN_PROJECT_DEPTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(PipelineError::Data(format!("intrinsics need fx, fy > 0, got fx={fx} fy={fy}")));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }

    /// Normalized KITTI-like intrinsics for an `h x w` image.
    pub fn kitti_like(h: usize, w: usize) -> Self {
        CameraIntrinsics { fx: 0.58 * w as f64, fy: 1.92 * h as f64, cx: 0.5 * w as f64, cy: 0.5 * h as f64 }
    }

    /// Intrinsics of an image downsampled by `factor`, treating pixel
    /// centers consistently with 2x2 average pooling.
    pub fn downscaled(&self, factor: f64) -> Self {
        CameraIntrinsics {
            fx: self.fx / factor,
            fy: self.fy / factor,
            cx: (self.cx + 0.5) / factor - 0.5,
            cy: (self.cy + 0.5) / factor - 0.5,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Parses a `fx fy cx cy` line.
    pub fn parse(text: &str) -> Result<Self> {
        let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| PipelineError::Parse { line: 1, reason: e.to_string() })?;
        if vals.len() != 4 {
            return Err(PipelineError::Parse { line: 1, reason: format!("expected 4 values, got {}", vals.len()) });
        }
        CameraIntrinsics::new(vals[0], vals[1], vals[2], vals[3])
    }

    pub fn to_line(&self) -> String {
        format!("{} {} {} {}", self.fx, self.fy, self.cx, self.cy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        PoseSE3 { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        PoseSE3 { rotation, translation }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        PoseSE3 { rotation: Matrix3::identity(), translation: Vector3::new(x, y, z) }
    }

    /// Axis-angle rotation `v[0..3]` and translation `v[3..6]`.
    pub fn from_vector(v: &[f64; 6]) -> Self {
        let rot = Rotation3::from_scaled_axis(Vector3::new(v[0], v[1], v[2]));
        PoseSE3 { rotation: rot.into_inner(), translation: Vector3::new(v[3], v[4], v[5]) }
    }

    pub fn to_vector(&self) -> [f64; 6] {
        let w = Rotation3::from_matrix_unchecked(self.rotation).scaled_axis();
        [w.x, w.y, w.z, self.translation.x, self.translation.y, self.translation.z]
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation.transpose();
        PoseSE3 { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotation angle in radians. `atan2` of the skew and trace parts stays
    /// accurate for tiny angles, where `acos` of the trace loses half the digits.
    pub fn angle(&self) -> f64 {
        let r = &self.rotation;
        let skew = nalgebra::Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
        (skew.norm() / 2.0).atan2((r.trace() - 1.0) / 2.0)
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from 1.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        e.max((self.rotation.determinant() - 1.0).abs())
    }

    /// Row-major 3x4 `[R|t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let (r, t) = (&self.rotation, &self.translation);
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    pub fn max_abs_diff(&self, other: &PoseSE3) -> f64 {
        (self.rotation - other.rotation).abs().max().max((self.translation - other.translation).abs().max())
    }
}

/// Differentiable rotation `[3,3]` and translation `[3]`.
#[derive(Clone, Copy, Debug)]
pub struct PoseVar<'g, T: Real> {
    pub rotation: Var<'g, T>,
    pub translation: Var<'g, T>,
}

impl<'g, T: Real> PoseVar<'g, T> {
    /// Rodrigues on the first three entries of a `[6]` vector.
    pub fn from_vector(v: Var<'g, T>) -> Result<Self> {
        if v.shape() != [6] {
            return Err(PipelineError::Argument(format!("pose vector must have shape [6], got {:?}", v.shape())));
        }
        Ok(PoseVar { rotation: v.narrow(0, 0, 3)?.rodrigues()?, translation: v.narrow(0, 3, 3)? })
    }

    pub fn constant(graph: &'g Graph<T>, pose: &PoseSE3) -> Self {
        let r: Vec<f64> = (0..9).map(|k| pose.rotation[(k / 3, k % 3)]).collect();
        let t = [pose.translation.x, pose.translation.y, pose.translation.z];
        PoseVar {
            rotation: graph.constant(Tensor::from_f64(&[3, 3], &r).expect("3x3")),
            translation: graph.constant(Tensor::from_f64(&[3], &t).expect("3")),
        }
    }

    /// Applies the transform to `points: [n, 3]`.
    pub fn transform(&self, points: Var<'g, T>) -> Result<Var<'g, T>> {
        let n = points.shape()[0];
        let g = points.graph();
        let rotated = points.matmul(self.rotation.permute(&[1, 0])?)?;
        let ones = g.constant(Tensor::ones(&[n, 1]));
        let shift = ones.matmul(self.translation.reshape(&[1, 3])?)?;
        Ok(rotated.add(shift)?)
    }
}

/// Absolute pixel positions: entry `(y, x)` holds `(x, y)`.
pub fn meshgrid<T: Real>(h: usize, w: usize) -> Tensor<T> {
    Tensor::from_fn(&[h, w, 2], |k| {
        let p = k / 2;
        T::cast(if k % 2 == 0 { (p % w) as f64 } else { (p / w) as f64 })
    })
}

/// Rays `K⁻¹ (x, y, 1)` for every pixel, `[h, w, 3]`.
pub fn pixel_rays<T: Real>(h: usize, w: usize, k: &CameraIntrinsics) -> Tensor<T> {
    Tensor::from_fn(&[h, w, 3], |i| {
        let p = i / 3;
        let (x, y) = ((p % w) as f64, (p / w) as f64);
        T::cast(match i % 3 {
            0 => (x - k.cx) / k.fx,
            1 => (y - k.cy) / k.fy,
            _ => 1.0,
        })
    })
}

/// Camera-frame point cloud `[h, w, 3]` with `point = depth · K⁻¹ (x, y, 1)`.
pub fn backproject<'g, T: Real>(depth: Var<'g, T>, k: &CameraIntrinsics) -> Result<Var<'g, T>> {
    let (h, w) = match *depth.shape() {
        [h, w] => (h, w),
        ref s => return Err(PipelineError::Argument(format!("depth must be [h,w], got {s:?}"))),
    };
    if let Some(bad) = depth.value().data().iter().find(|d| !(d.as_f64() > 0.0)) {
        return Err(posecue_tensor::TensorError::Domain {
            op: "backproject",
            msg: format!("depth must be positive, found {}", bad.as_f64()),
        }
        .into());
    }
    let rays = depth.graph().constant(pixel_rays::<T>(h, w, k));
    Ok(rays.mul(depth)?)
}

/// Pixel coordinates `[h, w, 2]` of camera-frame points `[h, w, 3]`, plus a
/// mask of points in front of the camera. Depth is clamped below at
/// [`MIN_PROJECT_DEPTH`] so masked points stay finite.
pub fn project<'g, T: Real>(points: Var<'g, T>, k: &CameraIntrinsics) -> Result<(Var<'g, T>, Tensor<T>)> {
    let shape = points.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(PipelineError::Argument(format!("points must be [h,w,3], got {shape:?}")));
    }
    let (h, w) = (shape[0], shape[1]);
    let flat = points.reshape(&[h * w, 3])?;
    let z_raw = flat.narrow(1, 2, 1)?;
    let front = z_raw.value().map(|z| if z.as_f64() > MIN_PROJECT_DEPTH { T::one() } else { T::zero() });
    let z = z_raw.clamp_min(MIN_PROJECT_DEPTH);
    let u = flat.narrow(1, 0, 1)?.div(z)?.mul_scalar(k.fx).add_scalar(k.cx);
    let v = flat.narrow(1, 1, 1)?.div(z)?.mul_scalar(k.fy).add_scalar(k.cy);
    let coords = Var::concat(&[u, v], 1)?.reshape(&[h, w, 2])?;
    Ok((coords, front.reshaped(&[h, w])?))
}

/// Synthesizes the target view by sampling `reference: [c, h, w]` where
/// target pixels land under `depth: [h, w]` and the target→reference pose.
/// Returns the warped image and its validity mask.
pub fn warp_reference<'g, T: Real>(
    reference: Var<'g, T>,
    depth: Var<'g, T>,
    k: &CameraIntrinsics,
    pose: &PoseVar<'g, T>,
) -> Result<(Var<'g, T>, Tensor<T>)> {
    let rs = reference.shape();
    let ds = depth.shape();
    if rs.len() != 3 || ds.len() != 2 || rs[1..] != ds[..] {
        return Err(PipelineError::Argument(format!("reference {rs:?} and depth {ds:?} disagree")));
    }
    let (h, w) = (ds[0], ds[1]);
    let cloud = backproject(depth, k)?.reshape(&[h * w, 3])?;
    let moved = pose.transform(cloud)?.reshape(&[h, w, 3])?;
    let (coords, front) = project(moved, k)?;
    let (warped, inside) = reference.grid_sample(coords)?;
    let mask = Tensor::from_fn(&[h, w], |i| inside.data()[i] * front.data()[i]);
    let masked = warped.mul_const(&Tensor::from_fn(&rs, |i| mask.data()[i % (h * w)]))?;
    Ok((masked, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meshgrid_layout() {
        let g = meshgrid::<f64>(2, 2);
        assert_eq!(g.data(), &[0., 0., 1., 0., 0., 1., 1., 1.]);
        assert_eq!(meshgrid::<f64>(1, 3).data(), &[0., 0., 1., 0., 2., 0.]);
    }

    #[test]
    fn backproject_hand_example() {
        let g = Graph::<f64>::new();
        let mut d = Tensor::ones(&[6, 4]);
        d.set(&[5, 3], 4.0);
        let k = CameraIntrinsics::new(2.0, 2.0, 1.0, 1.0).unwrap();
        let p = backproject(g.constant(d), &k).unwrap().value();
        assert_eq!([p.at(&[5, 3, 0]), p.at(&[5, 3, 1]), p.at(&[5, 3, 2])], [4.0, 8.0, 4.0]);
    }

    #[test]
    fn nonpositive_depth_is_domain_error() {
        let g = Graph::<f64>::new();
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let err = backproject(g.constant(Tensor::zeros(&[2, 2])), &k).unwrap_err();
        assert!(matches!(err, PipelineError::Tensor(posecue_tensor::TensorError::Domain { .. })));
    }

    #[test]
    fn quarter_turn_vector() {
        let p = PoseSE3::from_vector(&[0., 0., std::f64::consts::FRAC_PI_2, 0., 0., 0.]);
        let expect = Matrix3::new(0., -1., 0., 1., 0., 0., 0., 0., 1.);
        assert!((p.rotation - expect).abs().max() < 1e-12);
    }

    #[test]
    fn downscaled_intrinsics_match_pooling_centers() {
        let k = CameraIntrinsics::new(10.0, 10.0, 3.5, 1.5).unwrap();
        let k2 = k.downscaled(2.0);
        // pooled pixel 1 covers full-res pixels 2 and 3, centre 2.5
        assert!((k2.cx - 1.5).abs() < 1e-12 && (k2.cy - 0.5).abs() < 1e-12);
    }
}
