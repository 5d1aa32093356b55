use crate::error::{Result, TensorError};
use crate::graph::Var;
use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// `(outer, axis extent, inner)` split of a shape around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::arg(op, format!("axis {axis} out of range for {shape:?}")));
    }
    if shape[axis] == 0 {
        return Err(TensorError::dim(op, format!("empty axis {axis} in {shape:?}")));
    }
    Ok(())
}

fn without_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &e)| e).collect()
}

impl<'g, T: Real> Var<'g, T> {
    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(self) -> Var<'g, T> {
        let x = self.value();
        let total = x.data().iter().copied().sum::<T>();
        let shape = x.shape().to_vec();
        self.graph.record(
            Tensor::scalar(total),
            &[self],
            Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.data()[0]))]),
        )
    }

    pub fn mean(self) -> Var<'g, T> {
        let n = self.len().max(1) as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    /// Sum along `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        check_axis("sum_axis", x.shape(), axis)?;
        let (outer, n, inner) = split_axis(x.shape(), axis);
        let xd = x.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &xd[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (dst, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += v;
                }
            }
        }
        let in_shape = x.shape().to_vec();
        Ok(self.graph.record(
            Tensor::from_parts(without_axis(x.shape(), axis), out),
            &[self],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut gx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    for k in 0..n {
                        gx[(o * n + k) * inner..(o * n + k + 1) * inner]
                            .copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(Tensor::from_parts(in_shape.clone(), gx))]
            }),
        ))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'g, T>> {
        let shape = self.shape();
        check_axis("mean_axis", &shape, axis)?;
        let n = shape[axis] as f64;
        Ok(self.sum_axis(axis)?.mul_scalar(1.0 / n))
    }

    /// Maximum along `axis`, removing it. The gradient flows to the first
    /// maximal element.
    pub fn max_axis(self, axis: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        check_axis("max_axis", x.shape(), axis)?;
        let (outer, n, inner) = split_axis(x.shape(), axis);
        let xd = x.data();
        let mut out = vec![T::zero(); outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = xd[o * n * inner + i];
                let mut best_k = 0;
                for k in 1..n {
                    let v = xd[(o * n + k) * inner + i];
                    if v > best {
                        best = v;
                        best_k = k;
                    }
                }
                out[o * inner + i] = best;
                arg[o * inner + i] = best_k;
            }
        }
        let in_shape = x.shape().to_vec();
        Ok(self.graph.record(
            Tensor::from_parts(without_axis(x.shape(), axis), out),
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let k = arg[o * inner + i];
                        gx[(o * n + k) * inner + i] = g.data()[o * inner + i];
                    }
                }
                vec![Some(Tensor::from_parts(in_shape.clone(), gx))]
            }),
        ))
    }

    /// Softmax along `axis`. The per-slice maximum is subtracted before
    /// exponentiation.
    pub fn softmax(self, axis: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        check_axis("softmax", x.shape(), axis)?;
        let (outer, n, inner) = split_axis(x.shape(), axis);
        let xd = x.data();
        let mut y = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let m = (0..n).map(|k| xd[at(k)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for k in 0..n {
                    let e = (xd[at(k)] - m).exp();
                    y[at(k)] = e;
                    z += e;
                }
                for k in 0..n {
                    y[at(k)] /= z;
                }
            }
        }
        let out = Tensor::from_parts(x.shape().to_vec(), y.clone());
        let shape = x.shape().to_vec();
        Ok(self.graph.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut gx = vec![T::zero(); gd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let dot: T = (0..n).map(|k| gd[at(k)] * y[at(k)]).sum();
                        for k in 0..n {
                            gx[at(k)] = y[at(k)] * (gd[at(k)] - dot);
                        }
                    }
                }
                vec![Some(Tensor::from_parts(shape.clone(), gx))]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Graph, Tensor};

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[3]));
        let y = x.softmax(0).unwrap().value();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_survives_large_inputs() {
        let g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_f64(&[2], &[1000.0, 0.0]).unwrap());
        let y = x.softmax(0).unwrap().value();
        assert_eq!(y.data(), &[1.0, 0.0]);
    }

    #[test]
    fn axis_reductions() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[2, 3], &[1., 5., 2., 7., 0., 3.]).unwrap());
        assert_eq!(x.sum_axis(0).unwrap().value().data(), &[8., 5., 5.]);
        assert_eq!(x.sum_axis(1).unwrap().value().data(), &[8., 10.]);
        assert_eq!(x.max_axis(1).unwrap().value().data(), &[5., 7.]);
        let m = x.mean_axis(1).unwrap().value();
        assert!((m.data()[0] - 8. / 3.).abs() < 1e-12 && (m.data()[1] - 10. / 3.).abs() < 1e-12);
        assert!(x.sum_axis(2).is_err());
    }
}
