//! Runs one injection stage at the two gate limits and at the learned gate.

use posecue::injection::{GateMode, InjectionStage};
use posecue_tensor::{Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> posecue::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let stage = InjectionStage::new(&mut store, "stage", 8, 8, Some(16), &mut rng);
    let mut random = |shape: &[usize]| Tensor::<f64>::from_fn(shape, |_| rng.random_range(-1.0..1.0));
    let (prev, sem, pos) = (random(&[8, 4, 4]), random(&[8, 4, 4]), random(&[8, 4, 4]));
    let g = Graph::new();
    let b = store.bind(&g);
    for (label, mode) in
        [("gamma=0", GateMode::Fixed(0.0)), ("gamma=1", GateMode::Fixed(1.0)), ("learned", GateMode::Learned)]
    {
        let out = stage.inject(&b, g.constant(prev.clone()), g.constant(sem.clone()), g.constant(pos.clone()), mode)?;
        let s = out.gated_sum.value();
        let mean = s.data().iter().sum::<f64>() / s.len() as f64;
        println!("{label:<8} gated-sum mean {mean:+.5} fused shape {:?}", out.fused.shape());
    }
    println!("learned gamma {:.3}", stage.gamma(&b).item());
    Ok(())
}
