use crate::error::{Result, TensorError};
use crate::graph::Var;
use crate::real::Real;
use crate::tensor::{numel, Tensor};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gathers `src` (with `shape`) into the axis order `axes`.
fn permute_data<T: Real>(src: &[T], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<T>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let moved: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = src.len();
    let mut out = Vec::with_capacity(n);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..n {
        out.push(src[offset]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += moved[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= moved[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

impl<'g, T: Real> Var<'g, T> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, T>> {
        let x = self.value();
        if numel(shape) != x.len() {
            return Err(TensorError::dim(
                "reshape",
                format!("cannot view {:?} as {shape:?}", x.shape()),
            ));
        }
        let in_shape = x.shape().to_vec();
        Ok(self.graph.record(
            Tensor::from_parts(shape.to_vec(), x.data().to_vec()),
            &[self],
            Box::new(move |g, _| {
                vec![Some(Tensor::from_parts(in_shape.clone(), g.data().to_vec()))]
            }),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'g, T>> {
        let x = self.value();
        let rank = x.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::arg(
                "permute",
                format!("{axes:?} is not a permutation of {rank} axes"),
            ));
        }
        let (out_shape, data) = permute_data(x.data(), x.shape(), axes);
        let mut inverse = vec![0; rank];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let out_shape_c = out_shape.clone();
        Ok(self.graph.record(
            Tensor::from_parts(out_shape, data),
            &[self],
            Box::new(move |g, _| {
                let (s, d) = permute_data(g.data(), &out_shape_c, &inverse);
                vec![Some(Tensor::from_parts(s, d))]
            }),
        ))
    }

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::arg(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer = numel(&shape[..axis]);
        let n = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&x.data()[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        Ok(self.graph.record(
            Tensor::from_parts(out_shape, data),
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    gx[(o * n + start) * inner..(o * n + start + len) * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(Tensor::from_parts(shape.clone(), gx))]
            }),
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'g, T>], axis: usize) -> Result<Var<'g, T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::arg("concat", "no operands"))?;
        let graph = first.graph;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(TensorError::arg("concat", format!("axis {axis} out of range for {base:?}")));
        }
        for v in &values[1..] {
            let s = v.shape();
            if s.len() != base.len() {
                return Err(TensorError::dim("concat", format!("rank mismatch {base:?} vs {s:?}")));
            }
            if let Some(ax) = (0..base.len()).find(|&i| i != axis && s[i] != base[i]) {
                return Err(TensorError::AxisMismatch {
                    op: "concat",
                    axis: ax,
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let extents: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &e) in values.iter().zip(&extents) {
                data.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        Ok(graph.record(
            Tensor::from_parts(out_shape, data),
            parts,
            Box::new(move |g, needs| {
                let gd = g.data();
                let mut offset = 0;
                let mut grads = Vec::with_capacity(extents.len());
                for (p, &e) in extents.iter().enumerate() {
                    if needs[p] {
                        let mut gp = Vec::with_capacity(outer * e * inner);
                        for o in 0..outer {
                            let row = (o * total + offset) * inner;
                            gp.extend_from_slice(&gd[row..row + e * inner]);
                        }
                        grads.push(Some(Tensor::from_parts(shapes[p].clone(), gp)));
                    } else {
                        grads.push(None);
                    }
                    offset += e;
                }
                grads
            }),
        ))
    }

    /// Repeats the whole tensor `n` times along a new leading axis.
    pub fn expand_leading(self, n: usize) -> Var<'g, T> {
        let x = self.value();
        let m = x.len();
        let mut shape = vec![n];
        shape.extend_from_slice(x.shape());
        let mut data = Vec::with_capacity(n * m);
        for _ in 0..n {
            data.extend_from_slice(x.data());
        }
        let in_shape = x.shape().to_vec();
        self.graph.record(
            Tensor::from_parts(shape, data),
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); m];
                for chunk in g.data().chunks_exact(m.max(1)) {
                    for (a, &b) in gx.iter_mut().zip(chunk) {
                        *a += b;
                    }
                }
                vec![Some(Tensor::from_parts(in_shape.clone(), gx))]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use crate::{Graph, Tensor, Var};

    #[test]
    fn permute_transposes() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[2, 3], &[0., 1., 2., 3., 4., 5.]).unwrap());
        let t = x.permute(&[1, 0]).unwrap();
        assert_eq!(t.shape(), vec![3, 2]);
        assert_eq!(t.value().data(), &[0., 3., 1., 4., 2., 5.]);
        assert!(x.permute(&[0, 0]).is_err());
    }

    #[test]
    fn permute_rank3_roundtrip() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 4], |i| i as f64));
        let y = x.permute(&[1, 2, 0]).unwrap();
        assert_eq!(y.shape(), vec![3, 4, 2]);
        assert_eq!(y.value().at(&[2, 1, 1]), x.value().at(&[1, 2, 1]));
        let back = y.permute(&[2, 0, 1]).unwrap();
        assert_eq!(back.value().data(), x.value().data());
    }

    #[test]
    fn narrow_and_concat_inverse() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[2, 5], |i| i as f64));
        let a = x.narrow(1, 0, 2).unwrap();
        let b = x.narrow(1, 2, 3).unwrap();
        let c = Var::concat(&[a, b], 1).unwrap();
        assert_eq!(c.value().data(), x.value().data());
        assert!(x.narrow(1, 4, 2).is_err());
    }

    #[test]
    fn concat_names_mismatched_axis() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 3]));
        let err = Var::concat(&[a, b], 1).unwrap_err().to_string();
        assert!(err.contains("axis 0"), "{err}");
    }

    #[test]
    fn expand_leading_repeats() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::from_f64(&[2], &[1., 2.]).unwrap());
        let y = x.expand_leading(3);
        assert_eq!(y.shape(), vec![3, 2]);
        let grads = g.backward(y.sum()).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[3., 3.]);
    }
}
