//! Reverse-mode gradients against central differences, 100 random points
//! per op, in f64.

use posecue_tensor::{gradient_check_many, Conv2dSpec, Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POINTS: usize = 100;
const TOL: f64 = 1e-3;
const EPS: f64 = 1e-5;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Contracts a tensor-valued op to a scalar with fixed random weights so
/// every output element contributes an O(1) gradient.
fn weighted_sum<'g>(y: Var<'g, f64>, seed: u64) -> Result<Var<'g, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_tensor(&mut rng, &y.shape(), -1.0, 1.0);
    Ok(y.mul_const(&w)?.sum())
}

struct Input {
    shape: Vec<usize>,
    lo: f64,
    hi: f64,
}

fn input(shape: &[usize]) -> Input {
    Input { shape: shape.to_vec(), lo: -1.0, hi: 1.0 }
}

fn positive(shape: &[usize]) -> Input {
    Input { shape: shape.to_vec(), lo: 0.5, hi: 2.0 }
}

fn check<F>(name: &str, inputs: &[Input], f: F)
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(name.bytes().map(u64::from).sum());
    let mut worst = 0.0f64;
    for point in 0..POINTS {
        let pts: Vec<_> = inputs.iter().map(|i| random_tensor(&mut rng, &i.shape, i.lo, i.hi)).collect();
        let seed = point as u64;
        let report = gradient_check_many(|g, v| weighted_sum(f(g, v)?, seed), &pts, EPS).unwrap();
        worst = worst.max(report.max_relative_error);
    }
    assert!(worst < TOL, "{name}: max relative error {worst:e}");
}

#[test]
fn elementwise_binary() {
    let s = [3, 4];
    check("add", &[input(&s), input(&s)], |_, v| v[0].add(v[1]));
    check("sub", &[input(&s), input(&s)], |_, v| v[0].sub(v[1]));
    check("mul", &[input(&s), input(&s)], |_, v| v[0].mul(v[1]));
    check("div", &[input(&s), positive(&s)], |_, v| v[0].div(v[1]));
    check("minimum", &[input(&s), input(&s)], |_, v| v[0].minimum(v[1]));
    check("prefix_broadcast_mul", &[input(&[2, 3, 4]), input(&[2, 3])], |_, v| v[0].mul(v[1]));
    check("scalar_broadcast_add", &[input(&[2, 3]), input(&[])], |_, v| v[0].add(v[1]));
}

#[test]
fn elementwise_unary() {
    let s = [2, 5];
    check("exp", &[input(&s)], |_, v| Ok(v[0].exp()));
    check("log", &[positive(&s)], |_, v| v[0].log());
    check("sqrt", &[positive(&s)], |_, v| v[0].sqrt());
    check("recip", &[positive(&s)], |_, v| v[0].recip());
    check("relu", &[input(&s)], |_, v| Ok(v[0].relu()));
    check("sigmoid", &[input(&s)], |_, v| Ok(v[0].sigmoid()));
    check("abs", &[input(&s)], |_, v| Ok(v[0].abs()));
    check("square", &[input(&s)], |_, v| Ok(v[0].square()));
    check("clamp_min", &[input(&s)], |_, v| Ok(v[0].clamp_min(0.1)));
    check("clamp_max", &[input(&s)], |_, v| Ok(v[0].clamp_max(0.1)));
    check("affine_scalar", &[input(&s)], |_, v| Ok(v[0].mul_scalar(-2.5).add_scalar(0.3).neg()));
}

#[test]
fn reductions() {
    let s = [3, 4, 2];
    check("sum", &[input(&s)], |_, v| Ok(v[0].sum()));
    check("mean", &[input(&s)], |_, v| Ok(v[0].mean()));
    for axis in 0..3 {
        check("sum_axis", &[input(&s)], move |_, v| v[0].sum_axis(axis));
        check("mean_axis", &[input(&s)], move |_, v| v[0].mean_axis(axis));
        check("max_axis", &[input(&s)], move |_, v| v[0].max_axis(axis));
        check("softmax", &[input(&s)], move |_, v| v[0].softmax(axis));
    }
}

#[test]
fn shape_ops() {
    check("reshape", &[input(&[2, 6])], |_, v| v[0].reshape(&[3, 4]));
    check("permute", &[input(&[2, 3, 4])], |_, v| v[0].permute(&[2, 0, 1]));
    check("narrow", &[input(&[4, 5])], |_, v| v[0].narrow(1, 1, 3));
    check("concat", &[input(&[2, 3]), input(&[2, 2])], |_, v| Var::concat(&[v[0], v[1]], 1));
    check("expand_leading", &[input(&[2, 3])], |_, v| Ok(v[0].expand_leading(3)));
}

#[test]
fn linear_algebra_and_convolution() {
    check("matmul", &[input(&[3, 4]), input(&[4, 2])], |_, v| v[0].matmul(v[1]));
    check("conv2d_same", &[input(&[2, 5, 4]), input(&[3, 2, 3, 3]), input(&[3])], |_, v| {
        v[0].conv2d(v[1], Some(v[2]), Conv2dSpec::same(3))
    });
    check("conv2d_stride2", &[input(&[2, 6, 5]), input(&[2, 2, 3, 3])], |_, v| {
        v[0].conv2d(v[1], None, Conv2dSpec::new(2, 1))
    });
    check("conv2d_1x1", &[input(&[3, 3, 3]), input(&[2, 3, 1, 1])], |_, v| {
        v[0].conv2d(v[1], None, Conv2dSpec::same(1))
    });
}

#[test]
fn pooling_and_resampling() {
    check("avg_pool2", &[input(&[2, 4, 6])], |_, v| v[0].avg_pool2());
    check("upsample_nearest2", &[input(&[2, 3, 2])], |_, v| v[0].upsample_nearest2());
    check("upsample_bilinear2", &[input(&[2, 3, 4])], |_, v| v[0].upsample_bilinear2());
    check("box_filter3", &[input(&[2, 4, 5])], |_, v| v[0].box_filter3());
}

#[test]
fn windows_sampling_rotation() {
    check("unfold", &[input(&[2, 4, 5])], |_, v| v[0].unfold(3));
    check("fold", &[input(&[4, 5, 2, 9])], |_, v| v[0].fold(3));
    check(
        "grid_sample",
        &[input(&[2, 5, 6]), Input { shape: vec![3, 4, 2], lo: 0.2, hi: 3.8 }],
        |_, v| Ok(v[0].grid_sample(v[1])?.0),
    );
    check("rodrigues", &[input(&[3])], |_, v| v[0].rodrigues());
    check("rodrigues_small_angle", &[Input { shape: vec![3], lo: -1e-3, hi: 1e-3 }], |_, v| v[0].rodrigues());
}

#[test]
fn composite_chain() {
    check("softmax_matmul_chain", &[input(&[4, 3]), input(&[3, 2])], |_, v| {
        let p = v[0].mul_scalar(3.0).softmax(1)?;
        p.matmul(v[1])?.sigmoid().log()
    });
}
