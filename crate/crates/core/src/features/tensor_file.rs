//! `CTEFM1` tensor container: magic, little-endian `u32` rank and dims, row-major `f32` payload.

use std::io::{Read, Write};
use std::path::Path;

use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 6] = b"CTEFM1";

pub fn write_tensor_to<W: Write>(mut w: W, t: &Tensor) -> std::io::Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&2u32.to_le_bytes())?;
    for d in [t.nrows(), t.ncols()] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(t.len() * 4);
    for v in t.iter() {
        payload.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&payload)
}

pub fn read_tensor_from<R: Read>(mut r: R) -> Result<Tensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::CorruptTensorFile(e.to_string()))?;
    let corrupt = |msg: &str| Error::CorruptTensorFile(msg.to_string());
    if bytes.len() < 10 || &bytes[..6] != TENSOR_MAGIC {
        return Err(corrupt("missing CTEFM1 magic"));
    }
    let word = |i: usize| -> Result<usize> {
        let b = bytes.get(i..i + 4).ok_or_else(|| corrupt("truncated header"))?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    };
    let rank = word(6)?;
    if rank == 0 || rank > 2 {
        return Err(corrupt("only rank 1 and 2 tensors are supported"));
    }
    let dims: Vec<usize> = (0..rank).map(|i| word(10 + 4 * i)).collect::<Result<_>>()?;
    let (rows, cols) = if rank == 1 { (1, dims[0]) } else { (dims[0], dims[1]) };
    let start = 10 + 4 * rank;
    let payload = &bytes[start..];
    if payload.len() != rows * cols * 4 {
        return Err(corrupt("payload length does not match header"));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::from_shape_vec((rows, cols), data).map_err(|e| corrupt(&e.to_string()))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_tensor_to(&mut w, t).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_tensor_from(std::io::BufReader::new(f))
}
