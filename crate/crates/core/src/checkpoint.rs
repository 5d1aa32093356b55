//! `SCPD` checkpoints: magic, u32 version, u32 count, then per tensor a
//! u32 name length, the UTF-8 name and a `TNSR` blob.

use std::io::{Read, Write};

use posecue_tensor::{ParamStore, Real, Tensor};

use crate::error::{PipelineError, Result};

pub const MAGIC: &[u8; 4] = b"SCPD";
pub const VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_checkpoint<T: Real, W: Write>(store: &ParamStore<T>, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    for e in store.entries() {
        out.write_all(&(e.name.len() as u32).to_le_bytes())?;
        out.write_all(e.name.as_bytes())?;
        e.value.cast::<f32>().write_tnsr(&mut out)?;
    }
    Ok(())
}

/// Named tensors in file order.
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(PipelineError::Data("missing SCPD magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(PipelineError::Data(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut input)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = read_u32(&mut input)? as usize;
        if len > 4096 {
            return Err(PipelineError::Data(format!("tensor name of {len} bytes")));
        }
        let mut name = vec![0u8; len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| PipelineError::Data("tensor name is not UTF-8".into()))?;
        out.push((name, Tensor::read_tnsr(&mut input)?));
    }
    Ok(out)
}

/// Overwrites every entry of `store` from a checkpoint with the same
/// names and shapes.
pub fn load_into<T: Real, R: Read>(store: &mut ParamStore<T>, input: R) -> Result<()> {
    let tensors = read_checkpoint(input)?;
    if tensors.len() != store.len() {
        return Err(PipelineError::Data(format!("checkpoint has {} tensors, model has {}", tensors.len(), store.len())));
    }
    for (i, (name, t)) in tensors.into_iter().enumerate() {
        let entry = store.entry_mut(i);
        if entry.name != name || entry.value.shape() != t.shape() {
            return Err(PipelineError::Data(format!(
                "checkpoint entry {i} is {name} {:?}, model expects {} {:?}",
                t.shape(),
                entry.name,
                entry.value.shape()
            )));
        }
        entry.value = t.cast();
    }
    Ok(())
}

pub fn save(store: &ParamStore<f32>, path: &std::path::Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(store, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut s = ParamStore::<f32>::new();
        s.add("a.weight", Tensor::from_fn(&[2, 3], |k| k as f32), true);
        s.add("frozen", Tensor::scalar(-1.5), false);
        let mut buf = Vec::new();
        write_checkpoint(&s, &mut buf).unwrap();
        let mut t = s.clone();
        t.entry_mut(0).value.data_mut()[0] = 9.0;
        load_into(&mut t, &buf[..]).unwrap();
        assert_eq!(t.entries()[0].value, s.entries()[0].value);
        assert!(read_checkpoint(&b"XXXX"[..]).is_err());
    }
}
