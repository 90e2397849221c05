//! Little-endian binary container holding named f32 arrays.
//!
//! Layout:
//! ```text
//! magic  b"OPB1"
//! u16    version (= 1)
//! u16    blob count
//! per blob:
//!   u16      name length, then name bytes (utf-8)
//!   u8       dtype (1 = f32)
//!   u8       ndim
//!   u32 * n  dims
//!   f32 * N  payload, N = product(dims)
//! ```
//! Round-trips bit-exactly; dataset records, mean images and raw saliency
//! exports all use it.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};

const MAGIC: &[u8; 4] = b"OPB1";
const VERSION: u16 = 1;
const DTYPE_F32: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Blob {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        let name = name.into();
        if n != data.len() {
            return Err(CoreError::InvalidArg {
                ctx: "Blob::new",
                msg: format!("dims {:?} need {} values, got {}", dims, n, data.len()),
            });
        }
        Ok(Self { name, dims, data })
    }
}

pub fn write_blobs<W: Write>(mut w: W, blobs: &[Blob]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(blobs.len() as u16).to_le_bytes())?;
    for b in blobs {
        let name = b.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[DTYPE_F32, b.dims.len() as u8])?;
        for &d in &b.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &b.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_blobs<R: Read>(mut r: R, path: &str) -> Result<Vec<Blob>> {
    let bad = |msg: &str| CoreError::Format {
        path: path.to_string(),
        msg: msg.to_string(),
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u16buf = [0u8; 2];
    r.read_exact(&mut u16buf)?;
    if u16::from_le_bytes(u16buf) != VERSION {
        return Err(bad("unsupported version"));
    }
    r.read_exact(&mut u16buf)?;
    let count = u16::from_le_bytes(u16buf) as usize;

    let mut blobs = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u16buf)?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("non-utf8 blob name"))?;
        let mut hdr = [0u8; 2];
        r.read_exact(&mut hdr)?;
        if hdr[0] != DTYPE_F32 {
            return Err(bad("unsupported dtype"));
        }
        let ndim = hdr[1] as usize;
        let mut dims = Vec::with_capacity(ndim);
        let mut u32buf = [0u8; 4];
        for _ in 0..ndim {
            r.read_exact(&mut u32buf)?;
            dims.push(u32::from_le_bytes(u32buf) as usize);
        }
        let n: usize = dims.iter().product();
        let mut payload = vec![0u8; n * 4];
        r.read_exact(&mut payload)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        blobs.push(Blob { name, dims, data });
    }
    Ok(blobs)
}

pub fn write_blob_file(path: &Path, blobs: &[Blob]) -> Result<()> {
    let mut buf = Vec::new();
    write_blobs(&mut buf, blobs)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_blob_file(path: &Path) -> Result<Vec<Blob>> {
    let bytes = std::fs::read(path)?;
    read_blobs(&bytes[..], &path.display().to_string())
}

pub fn find<'a>(blobs: &'a [Blob], name: &str) -> Result<&'a Blob> {
    blobs.iter().find(|b| b.name == name).ok_or_else(|| CoreError::Format {
        path: "<blob set>".into(),
        msg: format!("missing blob {:?}", name),
    })
}
