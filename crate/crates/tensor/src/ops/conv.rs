use crate::error::{Result, TensorError};
use crate::graph::Var;
use crate::real::{gemm, MatView, Real};
use crate::tensor::Tensor;

/// Stride and symmetric zero padding of a 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Conv2dSpec { stride, padding }
    }

    /// Stride 1 with padding that preserves extent for an odd kernel.
    pub const fn same(kernel: usize) -> Self {
        Conv2dSpec { stride: 1, padding: kernel / 2 }
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// `[c*kh*kw, oh*ow]` patch matrix with zero padding.
    fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let n = self.cols();
        let mut cols = vec![T::zero(); self.rows() * n];
        for ch in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ch * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &x[(ch * self.h + iy as usize) * self.w..][..self.w];
                        let drow = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`Geometry::im2col`].
    fn col2im<T: Real>(&self, cols: &[T]) -> Vec<T> {
        let n = self.cols();
        let mut x = vec![T::zero(); self.c * self.h * self.w];
        for ch in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ch * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut x[(ch * self.h + iy as usize) * self.w..][..self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

impl<'g, T: Real> Var<'g, T> {
    /// 2D cross-correlation of `self: [c, h, w]` with `weight: [o, c, kh, kw]`
    /// plus an optional `bias: [o]`, giving `[o, oh, ow]`.
    pub fn conv2d(
        self,
        weight: Var<'g, T>,
        bias: Option<Var<'g, T>>,
        spec: Conv2dSpec,
    ) -> Result<Var<'g, T>> {
        let x = self.value();
        let w = weight.value();
        if x.rank() != 3 || w.rank() != 4 {
            return Err(TensorError::dim(
                "conv2d",
                format!("expected [c,h,w] input and [o,c,kh,kw] weight, got {:?} and {:?}", x.shape(), w.shape()),
            ));
        }
        if spec.stride == 0 {
            return Err(TensorError::arg("conv2d", "stride must be positive"));
        }
        let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (o, wc, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        if wc != c {
            return Err(TensorError::AxisMismatch {
                op: "conv2d",
                axis: 0,
                lhs: x.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        if h + 2 * spec.padding < kh || wd + 2 * spec.padding < kw {
            return Err(TensorError::dim("conv2d", "kernel larger than padded input"));
        }
        if let Some(b) = bias {
            let bs = b.shape();
            if bs != [o] {
                return Err(TensorError::AxisMismatch { op: "conv2d", axis: 0, lhs: vec![o], rhs: bs });
            }
        }
        let geo = Geometry {
            c,
            h,
            w: wd,
            kh,
            kw,
            oh: (h + 2 * spec.padding - kh) / spec.stride + 1,
            ow: (wd + 2 * spec.padding - kw) / spec.stride + 1,
            stride: spec.stride,
            pad: spec.padding,
        };
        let (k, n) = (geo.rows(), geo.cols());
        let cols = geo.im2col(x.data());
        let mut out = vec![T::zero(); o * n];
        if let Some(b) = bias {
            let bv = b.value();
            for (row, &bi) in out.chunks_exact_mut(n).zip(bv.data()) {
                row.iter_mut().for_each(|v| *v = bi);
            }
        }
        gemm(MatView::new(w.data(), o, k), MatView::new(&cols, k, n), &mut out, bias.is_some());
        let out_shape = vec![o, geo.oh, geo.ow];
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        let x_shape = x.shape().to_vec();
        let w_shape = w.shape().to_vec();
        Ok(self.graph.record(
            Tensor::from_parts(out_shape, out),
            &parents,
            Box::new(move |g, needs| {
                let gd = g.data();
                let gx = needs[0].then(|| {
                    let mut dcols = vec![T::zero(); k * n];
                    gemm(MatView::transpose_of(w.data(), k, o), MatView::new(gd, o, n), &mut dcols, false);
                    Tensor::from_parts(x_shape.clone(), geo.col2im(&dcols))
                });
                let gw = needs[1].then(|| {
                    let mut dw = vec![T::zero(); o * k];
                    gemm(MatView::new(gd, o, n), MatView::transpose_of(&cols, n, k), &mut dw, false);
                    Tensor::from_parts(w_shape.clone(), dw)
                });
                let mut grads = vec![gx, gw];
                if has_bias {
                    grads.push(needs[2].then(|| {
                        let db = gd.chunks_exact(n).map(|row| row.iter().copied().sum()).collect();
                        Tensor::from_parts(vec![o], db)
                    }));
                }
                grads
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::Conv2dSpec;
    use crate::{Graph, Tensor};

    /// Direct nested-loop convolution used as reference.
    fn direct(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (o, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[o, oh, ow]);
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.at(&[ic, iy as usize, ix as usize]) * w.at(&[oc, ic, ky, kx]);
                                }
                            }
                        }
                    }
                    out.set(&[oc, y, xx], acc);
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_reproduces_image() {
        let g = Graph::<f64>::new();
        let img = Tensor::from_fn(&[1, 4, 4], |i| (i * i % 7) as f64);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.set(&[0, 0, 1, 1], 1.0);
        let y = g.constant(img.clone()).conv2d(g.constant(k), None, Conv2dSpec::same(3)).unwrap();
        assert_eq!(y.value().data(), img.data());
    }

    #[test]
    fn box_kernel_zero_pads_border() {
        // All-ones 3x3 kernel on an all-ones 4x4 image counts in-image neighbours.
        let g = Graph::<f64>::new();
        let img = Tensor::ones(&[1, 4, 4]);
        let k = Tensor::ones(&[1, 1, 3, 3]);
        let y = g.constant(img).conv2d(g.constant(k), None, Conv2dSpec::same(3)).unwrap();
        let expected = [4., 6., 6., 4., 6., 9., 9., 6., 6., 9., 9., 6., 4., 6., 6., 4.];
        assert_eq!(y.value().data(), &expected);
    }

    #[test]
    fn matches_direct_loops_with_stride_and_bias() {
        let g = Graph::<f64>::new();
        let x = Tensor::from_fn(&[2, 5, 7], |i| ((i * 37) % 11) as f64 - 5.0);
        let w = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 13) % 7) as f64 * 0.1 - 0.3);
        let b = Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap();
        for (stride, pad) in [(1, 1), (2, 1), (2, 0), (1, 0)] {
            let y = g
                .constant(x.clone())
                .conv2d(g.constant(w.clone()), Some(g.constant(b.clone())), Conv2dSpec::new(stride, pad))
                .unwrap();
            let mut r = direct(&x, &w, stride, pad);
            for oc in 0..3 {
                let n = r.shape()[1] * r.shape()[2];
                for v in &mut r.data_mut()[oc * n..(oc + 1) * n] {
                    *v += b.data()[oc];
                }
            }
            assert_eq!(y.shape(), r.shape().to_vec());
            for (a, e) in y.value().data().iter().zip(r.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[2, 4, 4]));
        let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
        assert!(x.conv2d(w, None, Conv2dSpec::same(3)).is_err());
    }
}
