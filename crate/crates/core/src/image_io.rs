//! Binary PPM (P6) and PGM (P5) images mapped to `[0, 1]` tensors.

use std::io::{BufRead, BufReader, Read, Write};

use posecue_tensor::{Real, Tensor};

use crate::error::{PipelineError, Result};

fn quantize<T: Real>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `[3, h, w]` as P6.
pub fn write_ppm<T: Real, W: Write>(image: &Tensor<T>, mut out: W) -> Result<()> {
    let (h, w) = match *image.shape() {
        [3, h, w] => (h, w),
        ref s => return Err(PipelineError::Argument(format!("PPM needs [3,h,w], got {s:?}"))),
    };
    write!(out, "P6\n{w} {h}\n255\n")?;
    let d = image.data();
    let mut bytes = Vec::with_capacity(3 * h * w);
    for p in 0..h * w {
        for c in 0..3 {
            bytes.push(quantize(d[c * h * w + p]));
        }
    }
    out.write_all(&bytes)?;
    Ok(())
}

/// Writes `[h, w]` (or `[h, w, 1]`) as P5.
pub fn write_pgm<T: Real, W: Write>(image: &Tensor<T>, mut out: W) -> Result<()> {
    let (h, w) = match *image.shape() {
        [h, w] | [h, w, 1] => (h, w),
        ref s => return Err(PipelineError::Argument(format!("PGM needs [h,w], got {s:?}"))),
    };
    write!(out, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = image.data().iter().map(|v| quantize(*v)).collect();
    out.write_all(&bytes)?;
    Ok(())
}

fn header_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = Vec::new();
    loop {
        let mut b = [0u8; 1];
        if r.read(&mut b)? == 0 {
            break;
        }
        match b[0] {
            b'#' if tok.is_empty() => {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip)?;
            }
            c if c.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    break;
                }
            }
            c => tok.push(c),
        }
    }
    String::from_utf8(tok).map_err(|_| PipelineError::Data("non-ascii image header".into()))
}

fn read_netpbm<R: Read>(input: R, magic: &str, channels: usize) -> Result<Tensor<f32>> {
    let mut r = BufReader::new(input);
    let m = header_token(&mut r)?;
    if m != magic {
        return Err(PipelineError::Data(format!("expected {magic} image, found magic {m:?}")));
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        *d = header_token(&mut r)?.parse().map_err(|_| PipelineError::Data("bad image header".into()))?;
    }
    let [w, h, maxval] = dims;
    if maxval == 0 || maxval > 255 {
        return Err(PipelineError::Data(format!("unsupported maxval {maxval}")));
    }
    let mut bytes = vec![0u8; channels * h * w];
    r.read_exact(&mut bytes)?;
    let maxval = maxval as f32;
    let mut data = vec![0f32; channels * h * w];
    for p in 0..h * w {
        for c in 0..channels {
            data[c * h * w + p] = bytes[p * channels + c] as f32 / maxval;
        }
    }
    let shape: Vec<usize> = if channels == 1 { vec![h, w] } else { vec![channels, h, w] };
    Ok(Tensor::from_vec(&shape, data)?)
}

/// Reads P6 into `[3, h, w]`.
pub fn read_ppm<R: Read>(input: R) -> Result<Tensor<f32>> {
    read_netpbm(input, "P6", 3)
}

/// Reads P5 into `[h, w]`.
pub fn read_pgm<R: Read>(input: R) -> Result<Tensor<f32>> {
    read_netpbm(input, "P5", 1)
}

pub fn load_ppm(path: &std::path::Path) -> Result<Tensor<f32>> {
    read_ppm(std::fs::File::open(path)?)
}

pub fn save_ppm<T: Real>(image: &Tensor<T>, path: &std::path::Path) -> Result<()> {
    let mut buf = Vec::new();
    write_ppm(image, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn save_pgm<T: Real>(image: &Tensor<T>, path: &std::path::Path) -> Result<()> {
    let mut buf = Vec::new();
    write_pgm(image, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_is_exact_on_quantized_values() {
        let img = Tensor::<f32>::from_fn(&[3, 2, 5], |k| ((k * 37) % 256) as f32 / 255.0);
        let mut buf = Vec::new();
        write_ppm(&img, &mut buf).unwrap();
        assert_eq!(read_ppm(&buf[..]).unwrap(), img);
    }

    #[test]
    fn pgm_with_comment() {
        let data = b"P5\n# made by hand\n2 1\n255\n\x00\xff";
        assert_eq!(read_pgm(&data[..]).unwrap().data(), &[0.0, 1.0]);
    }
}
