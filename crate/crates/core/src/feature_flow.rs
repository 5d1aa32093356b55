//! Confidence-aware feature flow between a target and a reference feature
//! map.
//!
//! Flow at `(y, x)` is the `(dx, dy)` displacement from `(x, y)` to the
//! matching reference position, restricted to a `d x d` window centered on
//! `(x, y)`. Window slot `j * d + i` holds offset `(i - r, j - r)` with
//! `r = (d - 1) / 2`.

use std::io::{Read, Write};

use posecue_tensor::{Graph, Real, Tensor, Var};

use crate::error::{PipelineError, Result};

/// Added to the squared channel norm, so zero vectors normalize to zero.
pub const NORM_EPS_SQ: f64 = 1e-16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowConfig {
    /// Odd window size `d`.
    pub window: usize,
    /// Inverse temperature applied to affinities before the soft argmax.
    pub sharpness: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { window: 5, sharpness: 50.0 }
    }
}

/// Cosine affinities `[h, w, d, d]`.
#[derive(Clone, Copy, Debug)]
pub struct AffinityVolume<'g, T: Real> {
    pub values: Var<'g, T>,
    pub window: usize,
}

impl<'g, T: Real> AffinityVolume<'g, T> {
    /// Wraps raw affinities shaped `[h, w, d, d]`.
    pub fn from_values(values: Var<'g, T>) -> Result<Self> {
        match *values.shape() {
            [_, _, a, b] if a == b && a % 2 == 1 => Ok(AffinityVolume { values, window: a }),
            ref s => Err(PipelineError::Argument(format!("affinity must be [h,w,d,d] with odd d, got {s:?}"))),
        }
    }

    fn flat(&self) -> Result<(Var<'g, T>, usize, usize)> {
        let s = self.values.shape();
        let (h, w) = (s[0], s[1]);
        Ok((self.values.reshape(&[h, w, self.window * self.window])?, h, w))
    }
}

/// Per-position flow `[h, w, 2]` and confidence `[h, w, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct FlowField<'g, T: Real> {
    pub flow: Var<'g, T>,
    pub confidence: Var<'g, T>,
}

fn check_window(d: usize) -> Result<()> {
    if d == 0 || d % 2 == 0 {
        return Err(PipelineError::Argument(format!("window must be odd and positive, got {d}")));
    }
    Ok(())
}

/// Window offsets `[d*d, 2]` in `(dx, dy)` order.
pub fn window_offsets<T: Real>(d: usize) -> Tensor<T> {
    let r = (d / 2) as f64;
    Tensor::from_fn(&[d * d, 2], |k| {
        let slot = k / 2;
        T::cast(if k % 2 == 0 { (slot % d) as f64 - r } else { (slot / d) as f64 - r })
    })
}

/// Scales each position's channel vector of `[c, h, w]` to unit length.
pub fn normalize_channels<'g, T: Real>(features: Var<'g, T>) -> Result<Var<'g, T>> {
    if features.shape().len() != 3 {
        return Err(PipelineError::Argument(format!("features must be [c,h,w], got {:?}", features.shape())));
    }
    let hwc = features.permute(&[1, 2, 0])?;
    let norm = hwc.square().sum_axis(2)?.add_scalar(NORM_EPS_SQ).sqrt()?;
    Ok(hwc.div(norm)?.permute(&[2, 0, 1])?)
}

/// Cosine affinities between every target position and the reference
/// positions in its window; out-of-image reference slots are zero.
pub fn affinity_volume<'g, T: Real>(
    target: Var<'g, T>,
    reference: Var<'g, T>,
    d: usize,
) -> Result<AffinityVolume<'g, T>> {
    check_window(d)?;
    if target.shape() != reference.shape() {
        return Err(PipelineError::Tensor(posecue_tensor::TensorError::AxisMismatch {
            op: "affinity_volume",
            axis: first_diff(&target.shape(), &reference.shape()),
            lhs: target.shape(),
            rhs: reference.shape(),
        }));
    }
    let s = target.shape();
    let (h, w) = (s[1], s[2]);
    let blocks = normalize_channels(reference)?.unfold(d)?;
    let t = normalize_channels(target)?.permute(&[1, 2, 0])?;
    let a = blocks.mul(t)?.sum_axis(2)?;
    AffinityVolume::from_values(a.reshape(&[h, w, d, d])?)
}

fn first_diff(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()))
}

/// Offset of the largest affinity per position; ties go to the smallest
/// row-major slot. Not differentiable.
pub fn hard_argmax_flow<T: Real>(affinity: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, d) = match *affinity.shape() {
        [h, w, a, b] if a == b && a % 2 == 1 => (h, w, a),
        ref s => return Err(PipelineError::Argument(format!("affinity must be [h,w,d,d] with odd d, got {s:?}"))),
    };
    let n = d * d;
    let r = (d / 2) as f64;
    let mut out = Vec::with_capacity(h * w * 2);
    for block in affinity.data().chunks(n) {
        let mut best = 0;
        for (k, v) in block.iter().enumerate() {
            if *v > block[best] {
                best = k;
            }
        }
        out.push(T::cast((best % d) as f64 - r));
        out.push(T::cast((best / d) as f64 - r));
    }
    Ok(Tensor::from_vec(&[h, w, 2], out)?)
}

/// Softmax-weighted window offset per position, `[h, w, 2]`, with the
/// affinities multiplied by `sharpness` first.
pub fn soft_argmax_flow<'g, T: Real>(affinity: &AffinityVolume<'g, T>, sharpness: f64) -> Result<Var<'g, T>> {
    let (a, h, w) = affinity.flat()?;
    let d = affinity.window;
    let logits = if sharpness == 1.0 { a } else { a.mul_scalar(sharpness) };
    let p = logits.softmax(2)?.reshape(&[h * w, d * d])?;
    let offsets = a.graph().constant(window_offsets::<T>(d));
    Ok(p.matmul(offsets)?.reshape(&[h, w, 2])?)
}

/// `max(0, max_p A) * max_p softmax(A)`, `[h, w, 1]`.
///
/// The peak softmax probability is evaluated as `1 / Σ_p exp(A_p - max A)`.
pub fn confidence<'g, T: Real>(affinity: &AffinityVolume<'g, T>) -> Result<Var<'g, T>> {
    let (a, h, w) = affinity.flat()?;
    let peak = a.max_axis(2)?;
    let partition = a.sub(peak)?.exp().sum_axis(2)?;
    Ok(peak.relu().div(partition)?.reshape(&[h, w, 1])?)
}

/// Affinity, soft-argmax flow and confidence for one feature pair.
pub fn caffe_forward<'g, T: Real>(
    target: Var<'g, T>,
    reference: Var<'g, T>,
    config: &FlowConfig,
) -> Result<FlowField<'g, T>> {
    let affinity = affinity_volume(target, reference, config.window)?;
    Ok(FlowField { flow: soft_argmax_flow(&affinity, config.sharpness)?, confidence: confidence(&affinity)? })
}

/// Non-differentiable convenience wrapper returning plain tensors.
pub fn estimate_flow<T: Real>(
    target: &Tensor<T>,
    reference: &Tensor<T>,
    config: &FlowConfig,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = Graph::new();
    let f = caffe_forward(g.constant(target.clone()), g.constant(reference.clone()), config)?;
    Ok(((*f.flow.value()).clone(), (*f.confidence.value()).clone()))
}

/// Writes `FLOW`: magic, u32 h, u32 w, then f32 `(x, y)` pairs.
pub fn write_flow<T: Real, W: Write>(flow: &Tensor<T>, mut out: W) -> Result<()> {
    let (h, w) = match *flow.shape() {
        [h, w, 2] => (h, w),
        ref s => return Err(PipelineError::Argument(format!("flow must be [h,w,2], got {s:?}"))),
    };
    out.write_all(b"FLOW")?;
    out.write_all(&(h as u32).to_le_bytes())?;
    out.write_all(&(w as u32).to_le_bytes())?;
    for v in flow.data() {
        out.write_all(&(v.as_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_flow<R: Read>(mut input: R) -> Result<Tensor<f32>> {
    let mut head = [0u8; 12];
    input.read_exact(&mut head)?;
    if &head[..4] != b"FLOW" {
        return Err(PipelineError::Data("missing FLOW magic".into()));
    }
    let h = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as usize;
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    if raw.len() != h * w * 8 {
        return Err(PipelineError::Data(format!("FLOW payload is {} bytes, expected {}", raw.len(), h * w * 8)));
    }
    let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
    Ok(Tensor::from_vec(&[h, w, 2], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn volume<'g>(g: &'g Graph<f64>, h: usize, w: usize, d: usize, vals: &[f64]) -> AffinityVolume<'g, f64> {
        AffinityVolume::from_values(g.constant(Tensor::from_f64(&[h, w, d, d], vals).unwrap())).unwrap()
    }

    #[test]
    fn normalizes_three_four_five() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[2, 1, 1], &[3.0, 4.0]).unwrap());
        let n = normalize_channels(x).unwrap().value();
        assert!((n.data()[0] - 0.6).abs() < 1e-12 && (n.data()[1] - 0.8).abs() < 1e-12);
        let z = normalize_channels(g.constant(Tensor::zeros(&[3, 2, 2]))).unwrap().value();
        assert!(z.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn confidence_closed_forms() {
        let g = Graph::<f64>::new();
        let c = confidence(&volume(&g, 1, 1, 3, &[1.0; 9])).unwrap().item();
        assert_eq!(c, 1.0 / 9.0);
        let mut one_hot = [0.0; 9];
        one_hot[4] = 1.0;
        let c = confidence(&volume(&g, 1, 1, 3, &one_hot)).unwrap().item();
        let e = std::f64::consts::E;
        assert!((c - e / (e + 8.0)).abs() < 1e-12);
        let c = confidence(&volume(&g, 1, 1, 3, &[-0.5; 9])).unwrap().item();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn hard_argmax_ties_go_to_first_slot() {
        let mut vals = [0.0; 9];
        vals[2] = 1.0;
        vals[6] = 1.0;
        let f = hard_argmax_flow(&Tensor::<f64>::from_f64(&[1, 1, 3, 3], &vals).unwrap()).unwrap();
        assert_eq!(f.data(), &[1.0, -1.0]);
    }

    #[test]
    fn soft_argmax_symmetric_cases() {
        let g = Graph::<f64>::new();
        let f = soft_argmax_flow(&volume(&g, 1, 1, 3, &[0.3; 9]), 1.0).unwrap().value();
        assert!(f.max_abs() < 1e-15);
        let mut corners = [0.0; 9];
        corners[0] = 2.0;
        corners[8] = 2.0;
        let f = soft_argmax_flow(&volume(&g, 1, 1, 3, &corners), 1.0).unwrap().value();
        assert!(f.max_abs() < 1e-15);
    }

    #[test]
    fn even_window_rejected() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(&[2, 3, 3]));
        assert!(affinity_volume(x, x, 4).is_err());
    }

    #[test]
    fn flow_file_round_trip() {
        let f = Tensor::<f32>::from_fn(&[2, 3, 2], |k| k as f32 * 0.5 - 1.0);
        let mut buf = Vec::new();
        write_flow(&f, &mut buf).unwrap();
        assert_eq!(read_flow(&buf[..]).unwrap(), f);
    }
}
