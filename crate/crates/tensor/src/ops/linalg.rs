use crate::error::{Result, TensorError};
use crate::graph::Var;
use crate::real::{gemm, MatView, Real};
use crate::tensor::Tensor;

impl<'g, T: Real> Var<'g, T> {
    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        let a = self.value();
        let b = rhs.value();
        if a.rank() != 2 || b.rank() != 2 {
            return Err(TensorError::dim(
                "matmul",
                format!("expected rank-2 operands, got {:?} and {:?}", a.shape(), b.shape()),
            ));
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (k2, n) = (b.shape()[0], b.shape()[1]);
        if k != k2 {
            return Err(TensorError::AxisMismatch {
                op: "matmul",
                axis: 1,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm(MatView::new(a.data(), m, k), MatView::new(b.data(), k, n), &mut out, false);
        Ok(self.graph.record(
            Tensor::from_parts(vec![m, n], out),
            &[self, rhs],
            Box::new(move |g, needs| {
                let gd = g.data();
                let ga = needs[0].then(|| {
                    let mut ga = vec![T::zero(); m * k];
                    gemm(
                        MatView::new(gd, m, n),
                        MatView::transpose_of(b.data(), n, k),
                        &mut ga,
                        false,
                    );
                    Tensor::from_parts(vec![m, k], ga)
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![T::zero(); k * n];
                    gemm(
                        MatView::transpose_of(a.data(), k, m),
                        MatView::new(gd, m, n),
                        &mut gb,
                        false,
                    );
                    Tensor::from_parts(vec![k, n], gb)
                });
                vec![ga, gb]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Graph, Tensor};

    #[test]
    fn matmul_small() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let b = g.constant(Tensor::from_f64(&[3, 1], &[1., 0., -1.]).unwrap());
        let c = a.matmul(b).unwrap();
        assert_eq!(c.shape(), vec![2, 1]);
        assert_eq!(c.value().data(), &[-2., -2.]);
        assert!(b.matmul(a).is_err());
    }
}
