use crate::error::{Result, TensorError};
use crate::graph::Var;
use crate::real::Real;
use crate::tensor::Tensor;

fn chw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(TensorError::dim(op, format!("expected [c,h,w], got {shape:?}"))),
    }
}

/// Separable 1D linear interpolation taps for 2x upsampling with
/// half-pixel centres: `(lo, hi, weight_of_hi)` per output index.
fn bilinear_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

fn reflect(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * n - 2 - i as usize
    } else {
        i as usize
    }
}

impl<'g, T: Real> Var<'g, T> {
    /// 2x2 average pooling with stride 2 on `[c, h, w]`; odd trailing
    /// rows/columns are dropped.
    pub fn avg_pool2(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let (c, h, w) = chw("avg_pool2", x.shape())?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(TensorError::dim("avg_pool2", format!("input {h}x{w} too small")));
        }
        let quarter = T::cast(0.25);
        let xd = x.data();
        let mut out = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                let r0 = &xd[(ch * h + 2 * y) * w..][..w];
                let r1 = &xd[(ch * h + 2 * y + 1) * w..][..w];
                for xo in 0..ow {
                    out[(ch * oh + y) * ow + xo] =
                        (r0[2 * xo] + r0[2 * xo + 1] + r1[2 * xo] + r1[2 * xo + 1]) * quarter;
                }
            }
        }
        Ok(self.graph.record(
            Tensor::from_parts(vec![c, oh, ow], out),
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..oh {
                        for xo in 0..ow {
                            let v = g.data()[(ch * oh + y) * ow + xo] * quarter;
                            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                gx[(ch * h + 2 * y + dy) * w + 2 * xo + dx] = v;
                            }
                        }
                    }
                }
                vec![Some(Tensor::from_parts(vec![c, h, w], gx))]
            }),
        ))
    }

    /// Nearest-neighbour 2x upsampling of `[c, h, w]`.
    pub fn upsample_nearest2(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let (c, h, w) = chw("upsample_nearest2", x.shape())?;
        let (oh, ow) = (2 * h, 2 * w);
        let xd = x.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                let row = &xd[(ch * h + y / 2) * w..][..w];
                out.extend((0..ow).map(|xo| row[xo / 2]));
            }
        }
        Ok(self.graph.record(
            Tensor::from_parts(vec![c, oh, ow], out),
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..oh {
                        for xo in 0..ow {
                            gx[(ch * h + y / 2) * w + xo / 2] += g.data()[(ch * oh + y) * ow + xo];
                        }
                    }
                }
                vec![Some(Tensor::from_parts(vec![c, h, w], gx))]
            }),
        ))
    }

    /// Bilinear 2x upsampling of `[c, h, w]` with half-pixel centres and
    /// edge clamping.
    pub fn upsample_bilinear2(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let (c, h, w) = chw("upsample_bilinear2", x.shape())?;
        if h == 0 || w == 0 {
            return Err(TensorError::dim("upsample_bilinear2", "empty input"));
        }
        let (oh, ow) = (2 * h, 2 * w);
        let ty = bilinear_taps(h);
        let tx = bilinear_taps(w);
        let xd = x.data();
        let mut out = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for (yo, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::cast(fy);
                for (xo, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::cast(fx);
                    let at = |y: usize, xx: usize| xd[(ch * h + y) * w + xx];
                    let top = at(y0, x0) * (T::one() - fx) + at(y0, x1) * fx;
                    let bot = at(y1, x0) * (T::one() - fx) + at(y1, x1) * fx;
                    out[(ch * oh + yo) * ow + xo] = top * (T::one() - fy) + bot * fy;
                }
            }
        }
        Ok(self.graph.record(
            Tensor::from_parts(vec![c, oh, ow], out),
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for (yo, &(y0, y1, fy)) in ty.iter().enumerate() {
                        let fy = T::cast(fy);
                        for (xo, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let fx = T::cast(fx);
                            let gv = g.data()[(ch * oh + yo) * ow + xo];
                            let base = ch * h * w;
                            gx[base + y0 * w + x0] += gv * (T::one() - fy) * (T::one() - fx);
                            gx[base + y0 * w + x1] += gv * (T::one() - fy) * fx;
                            gx[base + y1 * w + x0] += gv * fy * (T::one() - fx);
                            gx[base + y1 * w + x1] += gv * fy * fx;
                        }
                    }
                }
                vec![Some(Tensor::from_parts(vec![c, h, w], gx))]
            }),
        ))
    }

    /// 3x3 box mean of `[c, h, w]` with reflection padding (extent
    /// preserved). Needs `h, w >= 2`.
    pub fn box_filter3(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let (c, h, w) = chw("box_filter3", x.shape())?;
        if h < 2 || w < 2 {
            return Err(TensorError::dim("box_filter3", format!("input {h}x{w} too small to reflect")));
        }
        let ninth = T::cast(1.0 / 9.0);
        let xd = x.data();
        // Horizontal then vertical 3-tap sums.
        let mut rows = vec![T::zero(); c * h * w];
        for r in 0..c * h {
            let src = &xd[r * w..][..w];
            let dst = &mut rows[r * w..][..w];
            for xx in 0..w {
                let l = reflect(xx as isize - 1, w);
                let rr = reflect(xx as isize + 1, w);
                dst[xx] = src[l] + src[xx] + src[rr];
            }
        }
        let mut out = vec![T::zero(); c * h * w];
        for ch in 0..c {
            for y in 0..h {
                let u = reflect(y as isize - 1, h);
                let d = reflect(y as isize + 1, h);
                for xx in 0..w {
                    let at = |yy: usize| rows[(ch * h + yy) * w + xx];
                    out[(ch * h + y) * w + xx] = (at(u) + at(y) + at(d)) * ninth;
                }
            }
        }
        Ok(self.graph.record(
            Tensor::from_parts(vec![c, h, w], out),
            &[self],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut mid = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..h {
                        let u = reflect(y as isize - 1, h);
                        let d = reflect(y as isize + 1, h);
                        for xx in 0..w {
                            let v = gd[(ch * h + y) * w + xx] * ninth;
                            mid[(ch * h + u) * w + xx] += v;
                            mid[(ch * h + y) * w + xx] += v;
                            mid[(ch * h + d) * w + xx] += v;
                        }
                    }
                }
                let mut gx = vec![T::zero(); c * h * w];
                for r in 0..c * h {
                    for xx in 0..w {
                        let v = mid[r * w + xx];
                        gx[r * w + reflect(xx as isize - 1, w)] += v;
                        gx[r * w + xx] += v;
                        gx[r * w + reflect(xx as isize + 1, w)] += v;
                    }
                }
                vec![Some(Tensor::from_parts(vec![c, h, w], gx))]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Graph, Tensor};

    #[test]
    fn avg_pool_averages_quads() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[1, 2, 4], |i| i as f64));
        let y = x.avg_pool2().unwrap();
        assert_eq!(y.shape(), vec![1, 1, 2]);
        assert_eq!(y.value().data(), &[2.5, 4.5]);
    }

    #[test]
    fn nearest_upsample_replicates() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[1, 1, 2], &[1., 2.]).unwrap());
        let y = x.upsample_nearest2().unwrap();
        assert_eq!(y.value().data(), &[1., 1., 2., 2., 1., 1., 2., 2.]);
    }

    #[test]
    fn bilinear_upsample_interpolates_ramp() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[1, 1, 3], &[0., 4., 8.]).unwrap());
        let y = x.upsample_bilinear2().unwrap();
        // Half-pixel centres: outputs sit at source coords -0.25, 0.25, 0.75, ...
        assert_eq!(&y.value().data()[..6], &[0., 1., 3., 5., 7., 8.]);
    }

    #[test]
    fn box_filter_of_constant_is_constant() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[2, 3, 5], 0.7));
        let y = x.box_filter3().unwrap();
        for v in y.value().data() {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }
}
