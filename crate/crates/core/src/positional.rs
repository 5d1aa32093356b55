//! Positional clue aggregation: fuses feature flow, absolute positions and
//! back-projected points into a per-stage embedding
//! `F^p = C ⊙ (f_s(S̃r) + f_s(S̃a)) + f_p(P̃)`.

use posecue_tensor::{Bound, ParamStore, Real, Tensor, Var};
use rand::Rng;

use crate::error::{PipelineError, Result};
use crate::feature_flow::FlowField;
use crate::layers::{ConvLayer, Init};

/// Per-channel min-max mapping of `[c, h, w]` onto `[0, 1]`; constant
/// channels map to 0.
pub fn normalize_unit_range<'g, T: Real>(x: Var<'g, T>) -> Result<Var<'g, T>> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(PipelineError::Argument(format!("expected [c,h,w], got {shape:?}")));
    }
    let c = shape[0];
    let flat = x.reshape(&[c, shape[1] * shape[2]])?;
    let hi = flat.max_axis(1)?;
    let lo = flat.neg().max_axis(1)?.neg();
    let range = hi.sub(lo)?;
    let guard = range.value().map(|r| if r == T::zero() { T::one() } else { T::zero() });
    let denom = range.add(x.graph().constant(guard))?;
    Ok(flat.sub(lo)?.div(denom)?.reshape(&shape)?)
}

/// Two 3x3 convolutions with a ReLU between.
#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub first: ConvLayer,
    pub second: ConvLayer,
}

impl Embedding {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, inputs: usize, channels: usize, rng: &mut R) -> Self {
        Embedding {
            first: ConvLayer::new(store, &format!("{name}.0"), inputs, channels, 3, 1, Init::He, true, rng),
            second: ConvLayer::new(store, &format!("{name}.1"), channels, channels, 3, 1, Init::He, true, rng),
        }
    }

    pub fn forward<'g, T: Real>(&self, params: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let h = self.first.forward(params, x)?.relu();
        self.second.forward(params, h)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PositionalAggregator {
    /// Shared by the flow and absolute-position inputs.
    pub planar: Embedding,
    pub cloud: Embedding,
    pub channels: usize,
}

/// Channel-first view of a `[h, w, k]` map.
fn channels_first<'g, T: Real>(x: Var<'g, T>) -> Result<Var<'g, T>> {
    Ok(x.permute(&[2, 0, 1])?)
}

impl PositionalAggregator {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut R) -> Self {
        PositionalAggregator {
            planar: Embedding::new(store, &format!("{name}.planar"), 2, channels, rng),
            cloud: Embedding::new(store, &format!("{name}.cloud"), 3, channels, rng),
            channels,
        }
    }

    /// `flow: [h,w,2]`, `confidence: [h,w,1]`, `positions: [h,w,2]`,
    /// `cloud: [h,w,3]` → embedding `[e,h,w]`.
    pub fn aggregate<'g, T: Real>(
        &self,
        params: &Bound<'g, T>,
        flow: &FlowField<'g, T>,
        positions: Var<'g, T>,
        cloud: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let fs = flow.flow.shape();
        let (h, w) = (fs[0], fs[1]);
        for (name, v, k) in [("confidence", flow.confidence, 1), ("positions", positions, 2), ("cloud", cloud, 3)] {
            if v.shape() != [h, w, k] {
                return Err(PipelineError::Tensor(posecue_tensor::TensorError::Dimension {
                    op: "aggregate",
                    msg: format!("{name} has shape {:?}, expected {:?}", v.shape(), [h, w, k]),
                }));
            }
        }
        let flow_term = self.planar.forward(params, normalize_unit_range(channels_first(flow.flow)?)?)?;
        let pos_term = self.planar.forward(params, normalize_unit_range(channels_first(positions)?)?)?;
        let cloud_term = self.cloud.forward(params, normalize_unit_range(channels_first(cloud)?)?)?;
        let gate = flow.confidence.reshape(&[h, w])?.expand_leading(self.channels);
        Ok(gate.mul(flow_term.add(pos_term)?)?.add(cloud_term)?)
    }
}

/// Normalized absolute positions are constant per stage; exposed for tests.
pub fn normalized_positions<T: Real>(h: usize, w: usize) -> Tensor<T> {
    let scale = |n: usize| if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
    let (sx, sy) = (scale(w), scale(h));
    Tensor::from_fn(&[2, h, w], |k| {
        let p = k % (h * w);
        T::cast(if k < h * w { (p % w) as f64 * sx } else { (p / w) as f64 * sy })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use posecue_tensor::Graph;

    #[test]
    fn unit_range_examples() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[2, 1, 3], &[2., 4., 6., 5., 5., 5.]).unwrap());
        assert_eq!(normalize_unit_range(x).unwrap().value().data(), &[0., 0.5, 1., 0., 0., 0.]);
        let y = g.constant(Tensor::from_f64(&[1, 2, 2], &[0., 0.25, 1., 0.5]).unwrap());
        assert_eq!(normalize_unit_range(y).unwrap().value().data(), &[0., 0.25, 1., 0.5]);
    }

    #[test]
    fn normalized_meshgrid_matches_helper() {
        let g = Graph::<f64>::new();
        let grid = g.constant(crate::camera::meshgrid::<f64>(3, 4));
        let n = normalize_unit_range(grid.permute(&[2, 0, 1]).unwrap()).unwrap().value();
        assert_eq!(&*n, &normalized_positions::<f64>(3, 4));
    }
}
