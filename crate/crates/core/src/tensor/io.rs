//! The `DTEN` v1 binary tensor format.
//!
//! Little-endian layout: magic `DTEN`, `u32` version (1), `u32` d, d × `u64`
//! extents, `u32` element type (1 = float64), then N × 8 bytes of data in
//! first-mode-fastest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DenseTensor, Shape};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DTEN";
pub const VERSION: u32 = 1;
pub const TYPE_F64: u32 = 1;

const CHUNK: usize = 1 << 16;

pub fn header_len(ndims: usize) -> usize {
    4 + 4 + 4 + 8 * ndims + 4
}

/// Number of data bytes following the header.
pub fn payload_len(shape: &Shape) -> u64 {
    shape.volume() as u64 * 8
}

pub fn encode_header(shape: &Shape) -> Vec<u8> {
    let mut out = Vec::with_capacity(header_len(shape.ndims()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(shape.ndims() as u32).to_le_bytes());
    for &n in shape.dims() {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    out.extend_from_slice(&TYPE_F64.to_le_bytes());
    out
}

pub fn write<W: Write>(mut w: W, tensor: &DenseTensor) -> Result<()> {
    w.write_all(&encode_header(tensor.shape()))?;
    let mut buf = Vec::with_capacity(CHUNK * 8);
    for chunk in tensor.data().chunks(CHUNK) {
        buf.clear();
        chunk.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a tensor whose values are produced chunk by chunk in storage
/// order, without materializing it.
pub fn write_streaming<W: Write>(
    mut w: W,
    shape: &Shape,
    mut fill: impl FnMut(&mut [f64]),
) -> Result<()> {
    w.write_all(&encode_header(shape))?;
    let mut values = vec![0.0; CHUNK];
    let mut bytes = Vec::with_capacity(CHUNK * 8);
    let mut remaining = shape.volume();
    while remaining > 0 {
        let n = remaining.min(CHUNK);
        fill(&mut values[..n]);
        bytes.clear();
        values[..n].iter().for_each(|x| bytes.extend_from_slice(&x.to_le_bytes()));
        w.write_all(&bytes)?;
        remaining -= n;
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("file is shorter than its header declares".into())
    } else {
        Error::Io(e)
    }
}

/// Parses and validates the header, returning the declared shape.
pub fn read_header<R: Read>(r: &mut R) -> Result<Shape> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic bytes, expected DTEN".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported DTEN version {version}")));
    }
    let d = read_u32(r)? as usize;
    if d == 0 {
        return Err(Error::Format("tensor declares zero modes".into()));
    }
    let mut dims = Vec::with_capacity(d.min(64));
    for _ in 0..d {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(truncated)?;
        let n = u64::from_le_bytes(b);
        dims.push(usize::try_from(n).map_err(|_| Error::Format(format!("extent {n} too large")))?);
    }
    let ty = read_u32(r)?;
    if ty != TYPE_F64 {
        return Err(Error::Format(format!("unsupported element type code {ty}")));
    }
    Shape::new(dims).map_err(|e| Error::Format(e.to_string()))
}

pub fn read<R: Read>(mut r: R) -> Result<DenseTensor> {
    let shape = read_header(&mut r)?;
    read_payload(r, shape)
}

fn read_payload<R: Read>(mut r: R, shape: Shape) -> Result<DenseTensor> {
    let n = shape.volume();
    let mut data = Vec::with_capacity(n);
    let mut buf = vec![0u8; CHUNK * 8];
    while data.len() < n {
        let want = (n - data.len()).min(CHUNK) * 8;
        r.read_exact(&mut buf[..want]).map_err(truncated)?;
        data.extend(buf[..want].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())));
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after tensor data".into()));
    }
    DenseTensor::new(shape, data)
}

pub fn save(path: impl AsRef<Path>, tensor: &DenseTensor) -> Result<()> {
    write(BufWriter::new(File::create(path)?), tensor)
}

pub fn load(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    let mut r = BufReader::new(file);
    let shape = read_header(&mut r)?;
    let expected = header_len(shape.ndims()) as u64 + payload_len(&shape);
    if len != expected {
        return Err(Error::Format(format!(
            "file holds {len} bytes, header declares {expected}"
        )));
    }
    read_payload(r, shape)
}
