use crate::error::{check_same_shape, Result, TensorError};
use crate::graph::Var;
use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// Size of the trailing block each rhs element is broadcast over.
///
/// The rhs must either match the lhs shape or be a prefix of it (which
/// includes rank-0 scalars): every rhs element then scales one contiguous
/// trailing block of the lhs.
fn broadcast_block(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<usize> {
    if rhs.len() > lhs.len() {
        return Err(TensorError::dim(
            op,
            format!("rhs rank {} exceeds lhs rank {} ({lhs:?} vs {rhs:?})", rhs.len(), lhs.len()),
        ));
    }
    check_same_shape(op, &lhs[..rhs.len()], rhs).map_err(|_| {
        let axis = lhs.iter().zip(rhs).position(|(a, b)| a != b).unwrap_or(0);
        TensorError::AxisMismatch { op, axis, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
    })?;
    Ok(numel(&lhs[rhs.len()..]))
}

fn reduce_blocks<T: Real>(g: &[T], block: usize, shape: &[usize], f: impl Fn(usize) -> T) -> Tensor<T> {
    let n = numel(shape);
    let mut out = vec![T::zero(); n];
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = T::zero();
        for i in j * block..(j + 1) * block {
            acc += g[i] * f(i);
        }
        *o = acc;
    }
    Tensor::from_parts(shape.to_vec(), out)
}

impl<'g, T: Real> Var<'g, T> {
    fn binary(
        self,
        rhs: Var<'g, T>,
        op: &'static str,
        f: fn(T, T) -> T,
        da: fn(T, T) -> T,
        db: fn(T, T) -> T,
    ) -> Result<Var<'g, T>> {
        let a = self.value();
        let b = rhs.value();
        let block = broadcast_block(op, a.shape(), b.shape())?;
        let (ad, bd) = (a.data(), b.data());
        let data: Vec<T> = ad.iter().enumerate().map(|(i, &x)| f(x, bd[i / block])).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), data);
        Ok(self.graph.record(
            out,
            &[self, rhs],
            Box::new(move |g, needs| {
                let (ad, bd, gd) = (a.data(), b.data(), g.data());
                let ga = needs[0].then(|| {
                    let data = gd
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| gi * da(ad[i], bd[i / block]))
                        .collect();
                    Tensor::from_parts(a.shape().to_vec(), data)
                });
                let gb = needs[1]
                    .then(|| reduce_blocks(gd, block, b.shape(), |i| db(ad[i], bd[i / block])));
                vec![ga, gb]
            }),
        ))
    }

    /// Elementwise `self + rhs`; `rhs` may be a shape prefix of `self`.
    pub fn add(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(rhs, "add", |a, b| a + b, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(rhs, "sub", |a, b| a - b, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(rhs, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    /// Elementwise division. A zero anywhere in `rhs` is a domain error.
    pub fn div(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        if rhs.value().data().iter().any(|v| *v == T::zero()) {
            return Err(TensorError::domain("div", "division by zero"));
        }
        self.binary(rhs, "div", |a, b| a / b, |_, b| b.recip(), |a, b| -a / (b * b))
    }

    /// Elementwise minimum of two same-shape operands. Ties route the
    /// gradient to `self`.
    pub fn minimum(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        check_same_shape("minimum", &self.shape(), &rhs.shape())?;
        self.binary(
            rhs,
            "minimum",
            |a, b| if b < a { b } else { a },
            |a, b| if b < a { T::zero() } else { T::one() },
            |a, b| if b < a { T::one() } else { T::zero() },
        )
    }

    fn unary(self, f: impl Fn(T) -> T, df: impl Fn(T) -> T + 'static) -> Var<'g, T> {
        let x = self.value();
        let out = x.map(&f);
        self.graph.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let data = g.data().iter().zip(x.data()).map(|(&gi, &xi)| gi * df(xi)).collect();
                vec![Some(Tensor::from_parts(x.shape().to_vec(), data))]
            }),
        )
    }

    pub fn neg(self) -> Var<'g, T> {
        self.unary(|x| -x, |_| -T::one())
    }

    pub fn add_scalar(self, c: f64) -> Var<'g, T> {
        let c = T::cast(c);
        self.unary(move |x| x + c, |_| T::one())
    }

    pub fn mul_scalar(self, c: f64) -> Var<'g, T> {
        let c = T::cast(c);
        self.unary(move |x| x * c, move |_| c)
    }

    pub fn square(self) -> Var<'g, T> {
        self.unary(|x| x * x, |x| x + x)
    }

    pub fn exp(self) -> Var<'g, T> {
        self.unary(|x| x.exp(), |x| x.exp())
    }

    /// Natural log; any non-positive entry is a domain error.
    pub fn log(self) -> Result<Var<'g, T>> {
        if self.value().data().iter().any(|v| *v <= T::zero()) {
            return Err(TensorError::domain("log", "non-positive operand"));
        }
        Ok(self.unary(|x| x.ln(), |x| x.recip()))
    }

    pub fn sqrt(self) -> Result<Var<'g, T>> {
        if self.value().data().iter().any(|v| *v < T::zero()) {
            return Err(TensorError::domain("sqrt", "negative operand"));
        }
        let half = T::cast(0.5);
        Ok(self.unary(|x| x.sqrt(), move |x| half / x.sqrt()))
    }

    pub fn recip(self) -> Result<Var<'g, T>> {
        if self.value().data().iter().any(|v| *v == T::zero()) {
            return Err(TensorError::domain("recip", "division by zero"));
        }
        Ok(self.unary(|x| x.recip(), |x| -(x * x).recip()))
    }

    /// `|x|`, with zero subgradient at the origin.
    pub fn abs(self) -> Var<'g, T> {
        self.unary(
            |x| x.abs(),
            |x| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn relu(self) -> Var<'g, T> {
        self.unary(
            |x| if x > T::zero() { x } else { T::zero() },
            |x| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(self) -> Var<'g, T> {
        fn sig<T: Real>(x: T) -> T {
            if x >= T::zero() {
                (T::one() + (-x).exp()).recip()
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        }
        self.unary(sig, |x| {
            let s = sig(x);
            s * (T::one() - s)
        })
    }

    /// `max(x, lo)`; no gradient where clamped.
    pub fn clamp_min(self, lo: f64) -> Var<'g, T> {
        let lo = T::cast(lo);
        self.unary(
            move |x| if x < lo { lo } else { x },
            move |x| if x < lo { T::zero() } else { T::one() },
        )
    }

    /// `min(x, hi)`; no gradient where clamped.
    pub fn clamp_max(self, hi: f64) -> Var<'g, T> {
        let hi = T::cast(hi);
        self.unary(
            move |x| if x > hi { hi } else { x },
            move |x| if x > hi { T::zero() } else { T::one() },
        )
    }

    /// Multiplies by a constant tensor of the same shape (e.g. a mask).
    pub fn mul_const(self, c: &Tensor<T>) -> Result<Var<'g, T>> {
        let c = self.graph.constant(c.clone());
        self.mul(c)
    }
}

#[cfg(test)]
mod tests {
    use crate::{Graph, Tensor, TensorError};

    #[test]
    fn relu_definition() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[3], &[-1.0, 0.0, 2.0]).unwrap());
        assert_eq!(x.relu().value().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn prefix_broadcast_scales_trailing_blocks() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let b = g.constant(Tensor::from_f64(&[2], &[10., 100.]).unwrap());
        let c = a.mul(b).unwrap();
        assert_eq!(c.value().data(), &[10., 20., 30., 400., 500., 600.]);
        let s = g.scalar(1.0);
        assert_eq!(a.add(s).unwrap().value().data()[5], 7.0);
    }

    #[test]
    fn non_prefix_broadcast_is_rejected_with_axis() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3]));
        match a.add(b) {
            Err(TensorError::AxisMismatch { axis, .. }) => assert_eq!(axis, 0),
            other => panic!("expected axis mismatch, got {other:?}"),
        }
    }

    #[test]
    fn log_and_div_domain_errors() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[2], &[1.0, 0.0]).unwrap());
        assert!(matches!(x.log(), Err(TensorError::Domain { .. })));
        let one = g.constant(Tensor::ones(&[2]));
        assert!(matches!(one.div(x), Err(TensorError::Domain { .. })));
    }

    #[test]
    fn broadcast_gradient_sums_blocks() {
        let g = Graph::<f64>::new();
        let a = g.param(Tensor::from_f64(&[2, 2], &[1., 2., 3., 4.]).unwrap());
        let b = g.param(Tensor::from_f64(&[2], &[5., 7.]).unwrap());
        let loss = a.mul(b).unwrap().sum();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(b).unwrap().data(), &[3., 7.]);
        assert_eq!(grads.wrt(a).unwrap().data(), &[5., 5., 7., 7.]);
    }
}
