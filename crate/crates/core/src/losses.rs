//! Self-supervised reconstruction and regularization losses.

use posecue_tensor::{Real, Tensor, Var};

use crate::error::{PipelineError, Result};

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Error assigned to pixels with no valid reconstruction before taking
/// the per-pixel minimum; larger than any achievable photometric error.
const INVALID_ERROR: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the SSIM term; the L1 term gets `1 - ssim`.
    pub ssim: f64,
    pub smoothness: f64,
    /// Drop pixels whose identity reprojection beats the warp.
    pub automask: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { ssim: 0.85, smoothness: 1e-3, automask: true }
    }
}

/// `(1 - SSIM) / 2` per pixel and channel, from 3x3 reflect-padded
/// local statistics, clamped to `[0, 1]`.
pub fn ssim_dissimilarity<'g, T: Real>(x: Var<'g, T>, y: Var<'g, T>) -> Result<Var<'g, T>> {
    let mu_x = x.box_filter3()?;
    let mu_y = y.box_filter3()?;
    let mu_xx = mu_x.mul(mu_x)?;
    let mu_yy = mu_y.mul(mu_y)?;
    let mu_xy = mu_x.mul(mu_y)?;
    let sigma_x = x.mul(x)?.box_filter3()?.sub(mu_xx)?;
    let sigma_y = y.mul(y)?.box_filter3()?.sub(mu_yy)?;
    let sigma_xy = x.mul(y)?.box_filter3()?.sub(mu_xy)?;
    let num = mu_xy.mul_scalar(2.0).add_scalar(C1).mul(sigma_xy.mul_scalar(2.0).add_scalar(C2))?;
    let den = mu_xx.add(mu_yy)?.add_scalar(C1).mul(sigma_x.add(sigma_y)?.add_scalar(C2))?;
    Ok(num.div(den)?.neg().add_scalar(1.0).mul_scalar(0.5).clamp_min(0.0).clamp_max(1.0))
}

/// Components of the per-pixel reconstruction error, each `[h, w]`.
#[derive(Clone, Copy, Debug)]
pub struct ErrorMaps<'g, T: Real> {
    pub ssim: Var<'g, T>,
    pub l1: Var<'g, T>,
    pub combined: Var<'g, T>,
}

/// Channel-averaged `ssim·(1-SSIM)/2 + (1-ssim)·|x - y|` for `[c, h, w]`
/// images.
pub fn photometric_error<'g, T: Real>(x: Var<'g, T>, y: Var<'g, T>, ssim_weight: f64) -> Result<ErrorMaps<'g, T>> {
    if x.shape() != y.shape() || x.shape().len() != 3 {
        return Err(PipelineError::Argument(format!("images disagree: {:?} vs {:?}", x.shape(), y.shape())));
    }
    let ssim = ssim_dissimilarity(x, y)?.mean_axis(0)?;
    let l1 = x.sub(y)?.abs().mean_axis(0)?;
    let combined = ssim.mul_scalar(ssim_weight).add(l1.mul_scalar(1.0 - ssim_weight))?;
    Ok(ErrorMaps { ssim, l1, combined })
}

/// A reconstruction of the target from one reference frame.
#[derive(Clone, Debug)]
pub struct Reconstruction<'g, T: Real> {
    pub warped: Var<'g, T>,
    /// `[h, w]`, 1 where the warp is valid.
    pub mask: Tensor<T>,
    /// The unwarped reference, used for automasking.
    pub source: Option<Var<'g, T>>,
}

/// Per-pixel minimum of the reconstruction errors over the references,
/// averaged over pixels valid in at least one reference (and, with
/// automasking, not better explained by an unwarped reference).
pub fn photometric_loss<'g, T: Real>(
    target: Var<'g, T>,
    recs: &[Reconstruction<'g, T>],
    weights: &LossWeights,
) -> Result<Var<'g, T>> {
    if recs.is_empty() {
        return Err(PipelineError::Argument("photometric loss needs at least one reconstruction".into()));
    }
    let g = target.graph();
    let mut best: Option<Var<'g, T>> = None;
    let mut identity_best: Option<Tensor<T>> = None;
    let mut any_valid: Option<Tensor<T>> = None;
    for rec in recs {
        let err = photometric_error(target, rec.warped, weights.ssim)?.combined;
        if err.shape() != rec.mask.shape() {
            return Err(PipelineError::Argument(format!("mask {:?} vs image {:?}", rec.mask.shape(), err.shape())));
        }
        let penalty = rec.mask.map(|m| T::cast(INVALID_ERROR) * (T::one() - m));
        let err = err.mul_const(&rec.mask)?.add(g.constant(penalty))?;
        best = Some(match best {
            None => err,
            Some(b) => b.minimum(err)?,
        });
        any_valid = Some(match any_valid {
            None => rec.mask.clone(),
            Some(v) => Tensor::from_fn(v.shape(), |i| if v.data()[i] > rec.mask.data()[i] { v.data()[i] } else { rec.mask.data()[i] }),
        });
        if weights.automask {
            if let Some(src) = rec.source {
                let id_err = photometric_error(target.detach(), src.detach(), weights.ssim)?.combined.value();
                identity_best = Some(match identity_best {
                    None => (*id_err).clone(),
                    Some(b) => Tensor::from_fn(b.shape(), |i| if id_err.data()[i] < b.data()[i] { id_err.data()[i] } else { b.data()[i] }),
                });
            }
        }
    }
    let best = best.expect("at least one reconstruction");
    let mut keep = any_valid.expect("at least one reconstruction");
    if let Some(id) = identity_best {
        let b = best.value();
        keep = Tensor::from_fn(keep.shape(), |i| if b.data()[i] <= id.data()[i] { keep.data()[i] } else { T::zero() });
    }
    let count: f64 = keep.data().iter().map(|v| v.as_f64()).sum();
    if count == 0.0 {
        return Err(PipelineError::Degenerate("no valid pixels in any reconstruction".into()));
    }
    Ok(best.mul_const(&keep)?.sum().mul_scalar(1.0 / count))
}

/// Edge-aware smoothness of mean-normalized disparity:
/// `mean|∂x d*| e^{-|∂x I|} + mean|∂y d*| e^{-|∂y I|}`, `d* = d / mean(d)`.
pub fn smoothness_loss<'g, T: Real>(depth: Var<'g, T>, image: Var<'g, T>) -> Result<Var<'g, T>> {
    let ds = depth.shape();
    let is = image.shape();
    if ds.len() != 2 || is.len() != 3 || is[1..] != ds[..] {
        return Err(PipelineError::Argument(format!("depth {ds:?} and image {is:?} disagree")));
    }
    let (h, w) = (ds[0], ds[1]);
    let disp = depth.recip()?;
    let disp = disp.div(disp.mean())?;
    let mut total = depth.graph().scalar(0.0);
    if w > 1 {
        let dx = disp.narrow(1, 0, w - 1)?.sub(disp.narrow(1, 1, w - 1)?)?.abs();
        let ix = image.narrow(2, 0, w - 1)?.sub(image.narrow(2, 1, w - 1)?)?.abs().mean_axis(0)?;
        total = total.add(dx.mul(ix.neg().exp())?.mean())?;
    }
    if h > 1 {
        let dy = disp.narrow(0, 0, h - 1)?.sub(disp.narrow(0, 1, h - 1)?)?.abs();
        let iy = image.narrow(1, 0, h - 1)?.sub(image.narrow(1, 1, h - 1)?)?.abs().mean_axis(0)?;
        total = total.add(dy.mul(iy.neg().exp())?.mean())?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use posecue_tensor::Graph;

    fn image(g: &Graph<f64>, f: impl Fn(usize, usize, usize) -> f64) -> Var<'_, f64> {
        g.constant(Tensor::from_fn(&[3, 6, 7], |k| f(k / 42, (k / 7) % 6, k % 7)))
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let g = Graph::<f64>::new();
        let x = image(&g, |c, y, x| ((c + 2 * y + 3 * x) % 5) as f64 * 0.2);
        let rec = Reconstruction { warped: x, mask: Tensor::ones(&[6, 7]), source: None };
        assert_eq!(photometric_loss(x, &[rec], &LossWeights::default()).unwrap().item(), 0.0);
    }

    #[test]
    fn brightness_shift_l1_term() {
        let g = Graph::<f64>::new();
        let x = image(&g, |c, y, x| 0.1 + ((c + y * x) % 4) as f64 * 0.15);
        let y = x.add_scalar(0.1);
        let maps = photometric_error(x, y, 0.85).unwrap();
        let l1 = maps.l1.mul_scalar(0.15).value();
        assert!(l1.data().iter().all(|v| (v - 0.015).abs() < 1e-12));
    }

    #[test]
    fn empty_valid_region_is_error() {
        let g = Graph::<f64>::new();
        let x = image(&g, |_, _, _| 0.5);
        let rec = Reconstruction { warped: x, mask: Tensor::zeros(&[6, 7]), source: None };
        assert!(photometric_loss(x, &[rec], &LossWeights::default()).is_err());
    }

    #[test]
    fn smoothness_of_disparity_ramp() {
        let g = Graph::<f64>::new();
        let disp = Tensor::<f64>::from_fn(&[6, 7], |k| 1.0 + 0.25 * (k % 7) as f64);
        let depth = g.constant(disp.map(|d| 1.0 / d));
        let flat = g.constant(Tensor::full(&[3, 6, 7], 0.3));
        let s = smoothness_loss(depth, flat).unwrap().item();
        let mean = disp.data().iter().sum::<f64>() / 42.0;
        assert!((s - 0.25 / mean).abs() < 1e-12, "{s}");
        let constant = smoothness_loss(g.constant(Tensor::full(&[6, 7], 3.0)), flat).unwrap().item();
        assert_eq!(constant, 0.0);
    }
}
