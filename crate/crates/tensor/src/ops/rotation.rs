use crate::error::{Result, TensorError};
use crate::graph::Var;
use crate::real::Real;
use crate::tensor::Tensor;

/// `A(s) = sin(t)/t`, `B(s) = (1 - cos t)/t^2` with `s = t^2`, and their
/// derivatives with respect to `s`. Series expansions near zero.
fn coefficients(s: f64) -> (f64, f64, f64, f64) {
    if s < 1e-4 {
        let a = 1.0 - s / 6.0 + s * s / 120.0 - s * s * s / 5040.0;
        let b = 0.5 - s / 24.0 + s * s / 720.0 - s * s * s / 40320.0;
        let da = -1.0 / 6.0 + s / 60.0 - s * s / 1680.0;
        let db = -1.0 / 24.0 + s / 360.0 - s * s / 13440.0;
        (a, b, da, db)
    } else {
        let t = s.sqrt();
        let a = t.sin() / t;
        let b = (1.0 - t.cos()) / s;
        let da = (t.cos() - a) / (2.0 * s);
        let db = (a - 2.0 * b) / (2.0 * s);
        (a, b, da, db)
    }
}

fn skew(w: [f64; 3]) -> [[f64; 3]; 3] {
    [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
}

/// Rotation matrix of an axis-angle vector, row-major.
pub fn rodrigues_matrix(w: [f64; 3]) -> [[f64; 3]; 3] {
    let s = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let (a, b, _, _) = coefficients(s);
    let k = skew(w);
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { 1.0 } else { 0.0 };
            r[i][j] = id + a * k[i][j] + b * (w[i] * w[j] - s * id);
        }
    }
    r
}

impl<'g, T: Real> Var<'g, T> {
    /// Axis-angle `[3]` to rotation matrix `[3, 3]` via
    /// `R = I + A K + B (w w^T - |w|^2 I)`. Evaluated in f64 internally.
    pub fn rodrigues(self) -> Result<Var<'g, T>> {
        let v = self.value();
        if v.shape() != [3] {
            return Err(TensorError::dim("rodrigues", format!("expected [3], got {:?}", v.shape())));
        }
        let w = [v.data()[0].as_f64(), v.data()[1].as_f64(), v.data()[2].as_f64()];
        let r = rodrigues_matrix(w);
        let data = r.iter().flatten().map(|&x| T::cast(x)).collect();
        Ok(self.graph.record(
            Tensor::from_parts(vec![3, 3], data),
            &[self],
            Box::new(move |g, _| {
                let gm: Vec<f64> = g.data().iter().map(|x| x.as_f64()).collect();
                let gg = |i: usize, j: usize| gm[3 * i + j];
                let s = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
                let (a, b, da, db) = coefficients(s);
                let k = skew(w);
                let mut g_k = 0.0;
                let mut g_outer = 0.0;
                let mut trace = 0.0;
                for i in 0..3 {
                    trace += gg(i, i);
                    for j in 0..3 {
                        g_k += gg(i, j) * k[i][j];
                        g_outer += gg(i, j) * w[i] * w[j];
                    }
                }
                let g_quad = g_outer - s * trace;
                let dk = [gg(2, 1) - gg(1, 2), gg(0, 2) - gg(2, 0), gg(1, 0) - gg(0, 1)];
                let mut out = [0.0; 3];
                for (i, o) in out.iter_mut().enumerate() {
                    let gw: f64 = (0..3).map(|j| gg(i, j) * w[j] + gg(j, i) * w[j]).sum();
                    *o = 2.0 * w[i] * da * g_k
                        + a * dk[i]
                        + 2.0 * w[i] * db * g_quad
                        + b * (gw - 2.0 * w[i] * trace);
                }
                vec![Some(Tensor::from_parts(vec![3], out.iter().map(|&x| T::cast(x)).collect()))]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::rodrigues_matrix;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn quarter_turn_about_z() {
        let r = rodrigues_matrix([0.0, 0.0, FRAC_PI_2]);
        let expected = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((r[i][j] - expected[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_vector_is_identity() {
        let r = rodrigues_matrix([0.0; 3]);
        assert_eq!(r, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    }

    #[test]
    fn series_and_closed_form_agree_at_switch() {
        let below = rodrigues_matrix([0.0099999, 0.0, 0.0]);
        let above = rodrigues_matrix([0.0100001, 0.0, 0.0]);
        for i in 0..3 {
            for j in 0..3 {
                assert!((below[i][j] - above[i][j]).abs() < 1e-6);
            }
        }
    }
}
