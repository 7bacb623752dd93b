//! GSTN tensor blobs: `b"GSTN"`, u32 rank, rank x u32 extents, then the
//! values as little-endian f32 in row-major order. All integers are
//! little-endian.

use std::io::{Read, Write};

use super::Tensor;

pub const GSTN_MAGIC: [u8; 4] = *b"GSTN";

/// Largest rank accepted when decoding, to reject garbage headers early.
const MAX_RANK: u32 = 8;

pub fn write_gstn<W: Write>(mut out: W, tensor: &Tensor<f32>) -> std::io::Result<()> {
    out.write_all(&GSTN_MAGIC)?;
    out.write_all(&(tensor.rank() as u32).to_le_bytes())?;
    for &d in tensor.shape() {
        let d = u32::try_from(d).map_err(|_| std::io::Error::other("extent exceeds u32"))?;
        out.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(tensor.numel() * 4);
    for v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

fn read_u32<R: Read>(input: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_gstn<R: Read>(mut input: R) -> std::io::Result<Tensor<f32>> {
    let invalid = |msg: String| std::io::Error::new(std::io::ErrorKind::InvalidData, msg);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if magic != GSTN_MAGIC {
        return Err(invalid(format!("bad magic {magic:?}")));
    }
    let rank = read_u32(&mut input)?;
    if rank == 0 || rank > MAX_RANK {
        return Err(invalid(format!("unsupported rank {rank}")));
    }
    let shape = (0..rank)
        .map(|_| read_u32(&mut input).map(|d| d as usize))
        .collect::<std::io::Result<Vec<_>>>()?;
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| invalid(format!("extents {shape:?} overflow")))?;
    let mut raw = vec![0u8; numel * 4];
    input.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data).map_err(|e| invalid(e.to_string()))
}
