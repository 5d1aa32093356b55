//! Convolution and dense layers backed by a [`ParamStore`].

use nalgebra::DMatrix;
use posecue_tensor::{Bound, Conv2dSpec, ParamId, ParamStore, Real, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Gaussian with variance `2 / fan_in`, zero bias.
    He,
    /// Rows orthonormal in `R^{fan_in}` scaled by `sqrt(2)`, zero bias.
    /// Each row sums to zero over the kernel taps of every input channel
    /// when that subspace is large enough, so filters ignore flat
    /// brightness.
    OrthogonalRows,
    Zeros,
}

fn init_weights<R: Rng>(rng: &mut R, rows: usize, fan_in: usize, taps: usize, init: Init) -> Vec<f64> {
    match init {
        Init::Zeros => vec![0.0; rows * fan_in],
        Init::He => {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            (0..rows * fan_in).map(|_| normal.sample(rng)).collect()
        }
        Init::OrthogonalRows => {
            let normal = Normal::new(0.0, 1.0).expect("finite std");
            let cols = rows.min(fan_in);
            let mut m = DMatrix::from_fn(fan_in, cols, |_, _| normal.sample(rng));
            if taps > 1 && (fan_in / taps) * (taps - 1) >= cols {
                for mut col in m.column_iter_mut() {
                    for block in col.as_mut_slice().chunks_mut(taps) {
                        let mean = block.iter().sum::<f64>() / taps as f64;
                        block.iter_mut().for_each(|v| *v -= mean);
                    }
                }
            }
            let q = m.qr().q();
            let mut out = vec![0.0; rows * fan_in];
            for r in 0..rows {
                if r < cols {
                    for c in 0..fan_in {
                        out[r * fan_in + c] = q[(c, r)] * 2f64.sqrt();
                    }
                } else {
                    for c in 0..fan_in {
                        out[r * fan_in + c] = normal.sample(rng) * (2.0 / fan_in as f64).sqrt();
                    }
                }
            }
            out
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: Conv2dSpec,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        init: Init,
        trainable: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_c * kernel * kernel;
        let w = init_weights(rng, out_c, fan_in, kernel * kernel, init);
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::from_f64(&[out_c, in_c, kernel, kernel], &w).expect("weight shape"),
            trainable,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_c]), trainable);
        ConvLayer { weight, bias, spec: Conv2dSpec::new(stride, kernel / 2) }
    }

    pub fn forward<'g, T: Real>(&self, params: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(x.conv2d(params.get(self.weight), Some(params.get(self.bias)), self.spec)?)
    }
}

/// `y = x W + b` on row vectors `[1, in]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w = init_weights(rng, outputs, inputs, 1, init);
        // stored as [in, out]
        let wt = Tensor::from_fn(&[inputs, outputs], |k| T::cast(w[(k % outputs) * inputs + k / outputs]));
        let weight = store.add(format!("{name}.weight"), wt, true);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]), true);
        Linear { weight, bias }
    }

    pub fn forward<'g, T: Real>(&self, params: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let y = x.matmul(params.get(self.weight))?;
        let outputs = y.shape()[1];
        Ok(y.reshape(&[outputs])?.add(params.get(self.bias))?.reshape(&[1, outputs])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_rows_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = init_weights(&mut rng, 4, 9, 9, Init::OrthogonalRows);
        let sums: Vec<f64> = (0..4).map(|a| w[a * 9..a * 9 + 9].iter().sum()).collect();
        assert!(sums.iter().all(|s| s.abs() < 1e-12));
        for a in 0..4 {
            for b in 0..4 {
                let dot: f64 = (0..9).map(|c| w[a * 9 + c] * w[b * 9 + c]).sum();
                let expect = if a == b { 2.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12);
            }
        }
    }
}
