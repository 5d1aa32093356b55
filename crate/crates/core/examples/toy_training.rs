//! A short self-supervised training run on synthetic snippets, printing
//! the loss trajectory and held-out metrics before and after.

use posecue::networks::{Model, ModelConfig};
use posecue::training::{evaluate_training, TrainConfig, Trainer};

fn main() -> posecue::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let config = TrainConfig { steps, ..TrainConfig::default() };
    let model = Model::<f32>::new(ModelConfig::default())?;
    let before = evaluate_training(&model, &config, 4)?;
    let mut trainer = Trainer::new(model, config.clone());
    trainer.run(|step, r| {
        if step % 10 == 0 {
            println!("step {step:>4} photometric {:.5} smoothness {:.5}", r.photometric, r.smoothness);
        }
    })?;
    let after = evaluate_training(&trainer.model, &config, 4)?;
    println!("held-out photometric {:.5} -> {:.5}", before.photometric, after.photometric);
    let deg = |d: Option<f64>| d.map_or("undefined".to_string(), |d| format!("{d:.1} deg"));
    println!("median direction error {} -> {}", deg(before.direction_median_deg), deg(after.direction_median_deg));
    Ok(())
}
