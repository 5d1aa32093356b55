use crate::error::{Result, TensorError};
use crate::graph::Var;
use crate::real::Real;
use crate::tensor::Tensor;

/// Interpolation cell for a coordinate along an axis of extent `n`:
/// `(lo, hi, frac)`, or `None` outside `[0, n-1]`. The upper edge maps to
/// the last cell with `frac = 1` so integer grids sample exactly.
fn cell(u: f64, n: usize) -> Option<(usize, usize, f64)> {
    if !(u >= 0.0 && u <= (n - 1) as f64) {
        return None;
    }
    if n == 1 {
        return Some((0, 0, 0.0));
    }
    let lo = (u.floor() as usize).min(n - 2);
    Some((lo, lo + 1, u - lo as f64))
}

struct Tap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
}

impl<'g, T: Real> Var<'g, T> {
    /// Bilinear sampling of `self: [c, h, w]` at pixel coordinates
    /// `coords: [h', w', 2]` holding `(x, y)`.
    ///
    /// Returns the `[c, h', w']` samples and a `[h', w']` validity mask: a
    /// sample is valid when all four interpolation neighbours lie inside
    /// the image; invalid samples are zero and pass no gradient.
    pub fn grid_sample(self, coords: Var<'g, T>) -> Result<(Var<'g, T>, Tensor<T>)> {
        let img = self.value();
        let cv = coords.value();
        let (c, h, w) = match *img.shape() {
            [c, h, w] if h > 0 && w > 0 => (c, h, w),
            _ => return Err(TensorError::dim("grid_sample", format!("expected [c,h,w] image, got {:?}", img.shape()))),
        };
        let (oh, ow) = match *cv.shape() {
            [oh, ow, 2] => (oh, ow),
            _ => return Err(TensorError::dim("grid_sample", format!("expected [h,w,2] coords, got {:?}", cv.shape()))),
        };
        let n = oh * ow;
        let taps: Vec<Option<Tap>> = (0..n)
            .map(|p| {
                let u = cv.data()[2 * p].as_f64();
                let v = cv.data()[2 * p + 1].as_f64();
                let (x0, x1, fx) = cell(u, w)?;
                let (y0, y1, fy) = cell(v, h)?;
                Some(Tap { x0, x1, y0, y1, fx, fy })
            })
            .collect();
        let id = img.data();
        let mut out = vec![T::zero(); c * n];
        let mut mask = vec![T::zero(); n];
        for (p, tap) in taps.iter().enumerate() {
            let Some(t) = tap else { continue };
            mask[p] = T::one();
            let (fx, fy) = (T::cast(t.fx), T::cast(t.fy));
            for ch in 0..c {
                let at = |y: usize, x: usize| id[(ch * h + y) * w + x];
                let top = at(t.y0, t.x0) * (T::one() - fx) + at(t.y0, t.x1) * fx;
                let bot = at(t.y1, t.x0) * (T::one() - fx) + at(t.y1, t.x1) * fx;
                out[ch * n + p] = top * (T::one() - fy) + bot * fy;
            }
        }
        let mask = Tensor::from_parts(vec![oh, ow], mask);
        let var = self.graph.record(
            Tensor::from_parts(vec![c, oh, ow], out),
            &[self, coords],
            Box::new(move |g, needs| {
                let gd = g.data();
                let id = img.data();
                let mut gi = needs[0].then(|| vec![T::zero(); c * h * w]);
                let mut gc = needs[1].then(|| vec![T::zero(); n * 2]);
                for (p, tap) in taps.iter().enumerate() {
                    let Some(t) = tap else { continue };
                    let (fx, fy) = (T::cast(t.fx), T::cast(t.fy));
                    let (ofx, ofy) = (T::one() - fx, T::one() - fy);
                    for ch in 0..c {
                        let gv = gd[ch * n + p];
                        let base = ch * h * w;
                        if let Some(gi) = gi.as_mut() {
                            gi[base + t.y0 * w + t.x0] += gv * ofy * ofx;
                            gi[base + t.y0 * w + t.x1] += gv * ofy * fx;
                            gi[base + t.y1 * w + t.x0] += gv * fy * ofx;
                            gi[base + t.y1 * w + t.x1] += gv * fy * fx;
                        }
                        if let Some(gc) = gc.as_mut() {
                            let at = |y: usize, x: usize| id[base + y * w + x];
                            let (a, b) = (at(t.y0, t.x0), at(t.y0, t.x1));
                            let (cc, d) = (at(t.y1, t.x0), at(t.y1, t.x1));
                            // Degenerate single-pixel axes have no slope.
                            if t.x1 != t.x0 {
                                gc[2 * p] += gv * (ofy * (b - a) + fy * (d - cc));
                            }
                            if t.y1 != t.y0 {
                                gc[2 * p + 1] += gv * (ofx * (cc - a) + fx * (d - b));
                            }
                        }
                    }
                }
                vec![
                    gi.map(|d| Tensor::from_parts(vec![c, h, w], d)),
                    gc.map(|d| Tensor::from_parts(vec![oh, ow, 2], d)),
                ]
            }),
        );
        Ok((var, mask))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Graph, Tensor};

    fn identity_grid(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(&[h, w, 2], |i| {
            let p = i / 2;
            if i % 2 == 0 { (p % w) as f64 } else { (p / w) as f64 }
        })
    }

    #[test]
    fn identity_grid_reproduces_image() {
        let g = Graph::<f64>::new();
        let img = Tensor::from_fn(&[2, 3, 4], |i| (i as f64).sin());
        let (out, mask) = g.constant(img.clone()).grid_sample(g.constant(identity_grid(3, 4))).unwrap();
        assert_eq!(out.value().data(), img.data());
        assert!(mask.data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn unit_shift_on_ramp_adds_one() {
        let g = Graph::<f64>::new();
        let (h, w) = (3, 6);
        let img = Tensor::from_fn(&[1, h, w], |i| (i % w) as f64);
        let mut grid = identity_grid(h, w);
        for p in 0..h * w {
            grid.data_mut()[2 * p] += 1.0;
        }
        let (out, mask) = g.constant(img.clone()).grid_sample(g.constant(grid)).unwrap();
        for y in 0..h {
            for x in 0..w {
                let valid = mask.at(&[y, x]) == 1.0;
                assert_eq!(valid, x + 1 < w);
                if valid {
                    assert!((out.value().at(&[0, y, x]) - (x as f64 + 1.0)).abs() < 1e-12);
                } else {
                    assert_eq!(out.value().at(&[0, y, x]), 0.0);
                }
            }
        }
    }

    #[test]
    fn outside_coordinates_are_masked() {
        let g = Graph::<f64>::new();
        let img = Tensor::ones(&[3, 4, 4]);
        let grid = Tensor::full(&[4, 4, 2], -5.0);
        let (out, mask) = g.constant(img).grid_sample(g.constant(grid)).unwrap();
        assert!(out.value().data().iter().all(|&v| v == 0.0));
        assert!(mask.data().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn nan_coordinates_are_masked() {
        let g = Graph::<f64>::new();
        let img = Tensor::ones(&[1, 2, 2]);
        let grid = Tensor::full(&[1, 1, 2], f64::NAN);
        let (_, mask) = g.constant(img).grid_sample(g.constant(grid)).unwrap();
        assert_eq!(mask.data(), &[0.0]);
    }
}
