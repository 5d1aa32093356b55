//! Recovers a known integer shift between two random feature maps with the
//! soft-argmax flow and prints the confidence map statistics.

use posecue::feature_flow::{estimate_flow, FlowConfig};
use posecue_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> posecue::Result<()> {
    let (c, h, w) = (32, 24, 24);
    let (dx, dy) = (1isize, -2isize);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = Tensor::<f64>::from_fn(&[c, h + 8, w + 8], |_| rng.random_range(-1.0..1.0));
    let crop = |ox: isize, oy: isize| {
        Tensor::<f64>::from_fn(&[c, h, w], |k| {
            let (ch, y, x) = (k / (h * w), (k / w) % h, k % w);
            let (sy, sx) = ((y as isize + 4 + oy) as usize, (x as isize + 4 + ox) as usize);
            base.data()[(ch * (h + 8) + sy) * (w + 8) + sx]
        })
    };
    // target(x) == reference(x + shift)
    let target = crop(0, 0);
    let reference = crop(-dx, -dy);
    let (flow, conf) = estimate_flow(&target, &reference, &FlowConfig::default())?;
    let (cy, cx) = (h / 2, w / 2);
    let at = (cy * w + cx) * 2;
    println!("true shift ({dx}, {dy})");
    println!("flow at center ({:.3}, {:.3})", flow.data()[at], flow.data()[at + 1]);
    let mean_conf = conf.data().iter().sum::<f64>() / conf.len() as f64;
    println!("mean confidence {mean_conf:.4}");
    Ok(())
}
