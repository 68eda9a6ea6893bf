//! "VSTN" little-endian tensor encoding: magic, u8 dtype code, u8 rank,
//! u32 extents, raw payload.

use std::io::{Read, Write};

use super::tensor::{Element, Tensor};
use super::NumError;

const MAGIC: &[u8; 4] = b"VSTN";
/// Dtype code for u8 rasters (label masks).
pub const DTYPE_U8: u8 = 2;

fn write_header<W: Write>(w: &mut W, dtype: u8, shape: &[usize]) -> Result<(), NumError> {
    let rank = u8::try_from(shape.len()).map_err(|_| NumError::Format(format!("rank {} too large", shape.len())))?;
    let mut buf = Vec::with_capacity(6 + 4 * shape.len());
    buf.extend_from_slice(MAGIC);
    buf.push(dtype);
    buf.push(rank);
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| NumError::Format(format!("extent {d} too large")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R) -> Result<(u8, Vec<usize>), NumError> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(NumError::Format("bad magic".into()));
    }
    let rank = head[5] as usize;
    let mut ext = vec![0u8; 4 * rank];
    r.read_exact(&mut ext)?;
    let shape: Vec<usize> = ext
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    if shape.contains(&0) {
        return Err(NumError::Format(format!("zero extent in {shape:?}")));
    }
    Ok((head[4], shape))
}

pub fn write_tensor<T: Element, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<(), NumError> {
    write_header(w, T::DTYPE, t.shape())?;
    let mut buf = Vec::with_capacity(t.numel() * T::BYTES);
    for &v in t.data() {
        v.to_le_bytes_into(&mut buf);
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<T: Element, R: Read>(r: &mut R) -> Result<Tensor<T>, NumError> {
    let (dtype, shape) = read_header(r)?;
    if dtype != T::DTYPE {
        return Err(NumError::Format(format!("dtype code {dtype}, expected {}", T::DTYPE)));
    }
    let n: usize = shape.iter().product();
    let mut raw = vec![0u8; n * T::BYTES];
    r.read_exact(&mut raw)?;
    let data = raw.chunks_exact(T::BYTES).map(T::from_le_slice).collect();
    Tensor::new(&shape, data)
}

pub fn write_u8_raster<W: Write>(w: &mut W, shape: &[usize], data: &[u8]) -> Result<(), NumError> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(NumError::DataLength {
            shape: shape.to_vec(),
            len: data.len(),
        });
    }
    write_header(w, DTYPE_U8, shape)?;
    w.write_all(data)?;
    Ok(())
}

pub fn read_u8_raster<R: Read>(r: &mut R) -> Result<(Vec<usize>, Vec<u8>), NumError> {
    let (dtype, shape) = read_header(r)?;
    if dtype != DTYPE_U8 {
        return Err(NumError::Format(format!("dtype code {dtype}, expected u8 raster")));
    }
    let mut data = vec![0u8; shape.iter().product()];
    r.read_exact(&mut data)?;
    Ok((shape, data))
}
