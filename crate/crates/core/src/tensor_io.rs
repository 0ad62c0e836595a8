//! `SWBT1` tensor files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"SWBT1"            magic
//! u8                  payload kind: 0 = complex64 (f32 re, f32 im), 1 = real32
//! u32                 number of dimensions
//! u32 * ndims         dimensions
//! payload             values in index order, first dimension slowest
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::model::{FrameTensor, RealTensor};

pub const MAGIC: &[u8; 5] = b"SWBT1";

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Complex(Vec<C64>),
    Real(Vec<f64>),
}

impl Payload {
    fn len(&self) -> usize {
        match self {
            Payload::Complex(v) => v.len(),
            Payload::Real(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub payload: Payload,
}

impl RawTensor {
    pub fn new(dims: Vec<usize>, payload: Payload) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != payload.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} hold {n} values, payload has {}",
                payload.len()
            )));
        }
        Ok(Self { dims, payload })
    }

    /// `(m, t, f)` with `m` slowest.
    pub fn from_frames(x: &FrameTensor) -> Self {
        let (m, t, f) = x.dims();
        let mut v = Vec::with_capacity(m * t * f);
        for k in 0..m {
            for tt in 0..t {
                for ff in 0..f {
                    v.push(*x.get(k, tt, ff));
                }
            }
        }
        Self {
            dims: vec![m, t, f],
            payload: Payload::Complex(v),
        }
    }

    pub fn from_real(x: &RealTensor) -> Self {
        let (m, t, f) = x.dims();
        let mut v = Vec::with_capacity(m * t * f);
        for k in 0..m {
            for tt in 0..t {
                for ff in 0..f {
                    v.push(*x.get(k, tt, ff));
                }
            }
        }
        Self {
            dims: vec![m, t, f],
            payload: Payload::Real(v),
        }
    }

    fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.dims.as_slice() {
            &[a, b, c] => Ok((a, b, c)),
            d => Err(Error::Format(format!("expected 3 dimensions, found {}", d.len()))),
        }
    }

    pub fn to_frames(&self) -> Result<FrameTensor> {
        let (m, t, f) = self.dims3()?;
        let Payload::Complex(v) = &self.payload else {
            return Err(Error::Format("expected complex payload".into()));
        };
        Ok(FrameTensor::from_fn(m, t, f, |k, tt, ff| v[(k * t + tt) * f + ff]))
    }

    pub fn to_real(&self) -> Result<RealTensor> {
        let (m, t, f) = self.dims3()?;
        let Payload::Real(v) = &self.payload else {
            return Err(Error::Format("expected real payload".into()));
        };
        Ok(RealTensor::from_fn(m, t, f, |k, tt, ff| v[(k * t + tt) * f + ff]))
    }
}

pub fn write_tensor<W: Write>(mut w: W, t: &RawTensor) -> Result<()> {
    w.write_all(MAGIC)?;
    let kind: u8 = match t.payload {
        Payload::Complex(_) => 0,
        Payload::Real(_) => 1,
    };
    w.write_all(&[kind])?;
    w.write_all(&(t.dims.len() as u32).to_le_bytes())?;
    for &d in &t.dims {
        let d = u32::try_from(d).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
        w.write_all(&d.to_le_bytes())?;
    }
    match &t.payload {
        Payload::Complex(v) => {
            for z in v {
                w.write_all(&(z.re as f32).to_le_bytes())?;
                w.write_all(&(z.im as f32).to_le_bytes())?;
            }
        }
        Payload::Real(v) => {
            for x in v {
                w.write_all(&(*x as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<RawTensor> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("missing SWBT1 header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic, expected SWBT1".into()));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let ndims = read_u32(&mut r)? as usize;
    if ndims > 16 {
        return Err(Error::Format(format!("implausible dimension count {ndims}")));
    }
    let dims = (0..ndims)
        .map(|_| read_u32(&mut r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = dims.iter().product();
    let payload = match kind[0] {
        0 => {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                let re = read_f32(&mut r)? as f64;
                let im = read_f32(&mut r)? as f64;
                v.push(C64::new(re, im));
            }
            Payload::Complex(v)
        }
        1 => Payload::Real((0..n).map(|_| read_f32(&mut r).map(f64::from)).collect::<Result<_>>()?),
        k => return Err(Error::Format(format!("unknown payload kind {k}"))),
    };
    RawTensor::new(dims, payload)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &RawTensor) -> Result<()> {
    write_tensor(BufWriter::new(File::create(path)?), t)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<RawTensor> {
    read_tensor(BufReader::new(File::open(path)?))
}
