//! Builds the positional embedding of one stage from a flow field,
//! normalized pixel positions and the back-projected depth.

use posecue::camera::{backproject, meshgrid, CameraIntrinsics};
use posecue::feature_flow::FlowField;
use posecue::positional::PositionalAggregator;
use posecue_tensor::{Graph, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> posecue::Result<()> {
    let (h, w) = (8, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f64>::new();
    let agg = PositionalAggregator::new(&mut store, "pca", 16, &mut rng);
    let k = CameraIntrinsics::kitti_like(h, w);
    let g = Graph::new();
    let b = store.bind(&g);
    // radial expansion, as seen when moving forward
    let flow = Tensor::<f64>::from_fn(&[h, w, 2], |i| {
        let (p, c) = (i / 2, i % 2);
        let (x, y) = ((p % w) as f64 - k.cx, (p / w) as f64 - k.cy);
        0.05 * if c == 0 { x } else { y }
    });
    let field = FlowField { flow: g.constant(flow), confidence: g.constant(Tensor::full(&[h, w, 1], 0.5)) };
    let cloud = backproject(g.constant(Tensor::full(&[h, w], 6.0)), &k)?;
    let e = agg.aggregate(&b, &field, g.constant(meshgrid::<f64>(h, w)), cloud)?;
    let v = e.value();
    println!("embedding shape {:?}", v.shape());
    println!("max |embedding| {:.4}", v.max_abs());
    Ok(())
}
