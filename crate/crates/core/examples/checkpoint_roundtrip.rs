//! Saves a model's parameters and loads them into a fresh model built
//! with a different seed.

use posecue::checkpoint::{load_into, write_checkpoint};
use posecue::networks::{Model, ModelConfig};

fn main() -> posecue::Result<()> {
    let a = Model::<f32>::new(ModelConfig { seed: 1, ..ModelConfig::default() })?;
    let mut b = Model::<f32>::new(ModelConfig { seed: 2, ..ModelConfig::default() })?;
    let mut bytes = Vec::new();
    write_checkpoint(&a.params, &mut bytes)?;
    println!("checkpoint: {} bytes, {} tensors", bytes.len(), a.params.entries().len());
    println!("before load: fingerprints {:016x} vs {:016x}", a.fingerprint(), b.fingerprint());
    load_into(&mut b.params, bytes.as_slice())?;
    println!("after load:  fingerprints {:016x} vs {:016x}", a.fingerprint(), b.fingerprint());
    Ok(())
}
