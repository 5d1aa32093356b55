use crate::error::{Result, TensorError};
use crate::graph::Var;
use crate::real::Real;
use crate::tensor::Tensor;

fn check_window(op: &'static str, d: usize) -> Result<()> {
    if d == 0 || d % 2 == 0 {
        return Err(TensorError::arg(op, format!("window must be a positive odd integer, got {d}")));
    }
    Ok(())
}

/// Sliding `d x d` blocks of `x: [c, h, w]` as `[h, w, c, d*d]`, zero
/// outside the image. Block slot `j*d + i` holds `x(:, y+j-r, x+i-r)`
/// with `r = (d-1)/2`.
pub fn unfold_blocks<T: Real>(x: &Tensor<T>, d: usize) -> Result<Tensor<T>> {
    check_window("unfold", d)?;
    let (c, h, w) = match *x.shape() {
        [c, h, w] if c * h * w > 0 => (c, h, w),
        _ => return Err(TensorError::dim("unfold", format!("expected non-empty [c,h,w], got {:?}", x.shape()))),
    };
    let r = (d / 2) as isize;
    let dd = d * d;
    let xd = x.data();
    let mut out = vec![T::zero(); h * w * c * dd];
    for y in 0..h {
        for xx in 0..w {
            let base = (y * w + xx) * c * dd;
            for j in 0..d {
                let sy = y as isize + j as isize - r;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for i in 0..d {
                    let sx = xx as isize + i as isize - r;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = sy as usize * w + sx as usize;
                    for ch in 0..c {
                        out[base + ch * dd + j * d + i] = xd[ch * h * w + src];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![h, w, c, dd], out))
}

/// Adjoint of [`unfold_blocks`]: scatters `[h, w, c, d*d]` blocks back onto
/// a `[c, h, w]` image, summing overlaps and dropping out-of-image slots.
pub fn fold_blocks<T: Real>(blocks: &Tensor<T>, d: usize) -> Result<Tensor<T>> {
    check_window("fold", d)?;
    let (h, w, c) = match *blocks.shape() {
        [h, w, c, dd] if dd == d * d => (h, w, c),
        _ => {
            return Err(TensorError::dim(
                "fold",
                format!("expected [h,w,c,{}], got {:?}", d * d, blocks.shape()),
            ))
        }
    };
    let r = (d / 2) as isize;
    let dd = d * d;
    let bd = blocks.data();
    let mut out = vec![T::zero(); c * h * w];
    for y in 0..h {
        for xx in 0..w {
            let base = (y * w + xx) * c * dd;
            for j in 0..d {
                let sy = y as isize + j as isize - r;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for i in 0..d {
                    let sx = xx as isize + i as isize - r;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let dst = sy as usize * w + sx as usize;
                    for ch in 0..c {
                        out[ch * h * w + dst] += bd[base + ch * dd + j * d + i];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], out))
}

impl<'g, T: Real> Var<'g, T> {
    /// Differentiable [`unfold_blocks`].
    pub fn unfold(self, d: usize) -> Result<Var<'g, T>> {
        let out = unfold_blocks(&self.value(), d)?;
        Ok(self.graph.record(
            out,
            &[self],
            Box::new(move |g, _| vec![Some(fold_blocks(g, d).expect("shape fixed at forward"))]),
        ))
    }

    /// Differentiable [`fold_blocks`].
    pub fn fold(self, d: usize) -> Result<Var<'g, T>> {
        let out = fold_blocks(&self.value(), d)?;
        Ok(self.graph.record(
            out,
            &[self],
            Box::new(move |g, _| vec![Some(unfold_blocks(g, d).expect("shape fixed at forward"))]),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_one_adds_singleton_axis() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        let u = unfold_blocks(&x, 1).unwrap();
        assert_eq!(u.shape(), &[3, 4, 2, 1]);
        for y in 0..3 {
            for xx in 0..4 {
                for c in 0..2 {
                    assert_eq!(u.at(&[y, xx, c, 0]), x.at(&[c, y, xx]));
                }
            }
        }
    }

    #[test]
    fn centre_block_is_full_patch_row_major() {
        let x = Tensor::<f64>::from_fn(&[1, 3, 3], |i| i as f64 + 1.0);
        let u = unfold_blocks(&x, 3).unwrap();
        let block: Vec<f64> = (0..9).map(|k| u.at(&[1, 1, 0, k])).collect();
        assert_eq!(block, vec![1., 2., 3., 4., 5., 6., 7., 8., 9.]);
    }

    #[test]
    fn corner_block_has_five_zero_slots() {
        let x = Tensor::<f64>::from_fn(&[1, 3, 3], |i| i as f64 + 1.0);
        let u = unfold_blocks(&x, 3).unwrap();
        let block: Vec<f64> = (0..9).map(|k| u.at(&[0, 0, 0, k])).collect();
        assert_eq!(block, vec![0., 0., 0., 0., 1., 2., 0., 4., 5.]);
        assert_eq!(block.iter().filter(|v| **v == 0.0).count(), 5);
    }

    #[test]
    fn even_or_zero_window_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 3, 3]);
        assert!(matches!(unfold_blocks(&x, 2), Err(TensorError::Argument { .. })));
        assert!(matches!(unfold_blocks(&x, 0), Err(TensorError::Argument { .. })));
    }
}
