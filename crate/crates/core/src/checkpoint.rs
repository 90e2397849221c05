//! Binary model checkpoints.
//!
//! Little-endian layout, bit-exact round trip:
//! ```text
//! magic   b"OPCK", u16 version (= 1)
//! [u8;32] architecture-spec digest
//! u32     meta length, then meta TOML (spec, label mode, representation,
//!         label scaler, normalization source)
//! u32     parameter count
//! per parameter: u16 name len + name, u8 ndim, u32 dims, f32 payload
//! u32     batch-norm state count
//! per state: u32 channels, f32 momentum, u64 update count,
//!            f32 running means, f32 running vars
//! u8      mean ndim, u32 dims, f32 payload (training input mean, which is
//!         subtracted from every input before the network sees it)
//! u8      optimizer-state flag
//! if set: u64 step, f64 lr/beta1/beta2/epsilon, then per parameter the
//!         first- and second-moment f32 payloads
//! ```
//! A checkpoint whose stored digest disagrees with its own spec section is
//! rejected on load.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::{build_f32, ArchitectureSpec, NetworkGraph, Param};
use crate::error::{CoreError, Result};
use crate::tensor::{AdamHyper, AdamState, BnState};
use crate::train::{LabelMode, LabelScaler, Representation};

const MAGIC: &[u8; 4] = b"OPCK";
const VERSION: u16 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: ArchitectureSpec,
    pub label_mode: LabelMode,
    pub representation: Representation,
    pub scaler: LabelScaler,
    /// Blob name of the training mean that must be subtracted from inputs.
    pub mean_name: String,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<Param<f32>>,
    pub bn_states: Vec<BnState<f32>>,
    /// Training input mean in network-input layout (c, x, y, z).
    pub mean_dims: Vec<usize>,
    pub mean: Vec<f32>,
    pub adam: Option<AdamState<f32>>,
}

impl Checkpoint {
    /// Capture the current state of a trained network.
    pub fn from_network(
        net: &NetworkGraph<f32>,
        meta: CheckpointMeta,
        mean_dims: Vec<usize>,
        mean: Vec<f32>,
        adam: Option<AdamState<f32>>,
    ) -> Checkpoint {
        Checkpoint {
            meta,
            params: net.params().to_vec(),
            bn_states: net.bn_states().to_vec(),
            mean_dims,
            mean,
            adam,
        }
    }

    /// Rebuild a runnable network carrying this checkpoint's weights.
    pub fn to_network(&self) -> Result<NetworkGraph<f32>> {
        let mut net = build_f32(&self.meta.arch, 0)?;
        if net.params().len() != self.params.len() || net.bn_states().len() != self.bn_states.len()
        {
            return Err(CoreError::InvalidSpec(
                "checkpoint does not match its own architecture spec".into(),
            ));
        }
        for (dst, src) in net.params_mut().iter_mut().zip(&self.params) {
            if dst.name != src.name || dst.shape != src.shape {
                return Err(CoreError::InvalidSpec(format!(
                    "parameter mismatch: built {} {:?}, stored {} {:?}",
                    dst.name, dst.shape, src.name, src.shape
                )));
            }
            dst.data = src.data.clone();
        }
        for (dst, src) in net.bn_states_mut().iter_mut().zip(&self.bn_states) {
            *dst = src.clone();
        }
        Ok(net)
    }
}

fn w_u16<W: Write>(w: &mut W, v: u16) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}
fn w_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}
fn w_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}
fn w_f32s<W: Write>(w: &mut W, vs: &[f32]) -> Result<()> {
    for &v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}
fn w_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    w.write_all(MAGIC)?;
    w_u16(&mut w, VERSION)?;
    w.write_all(&ckpt.meta.arch.hash())?;
    let meta = toml::to_string(&ckpt.meta).map_err(|e| CoreError::Format {
        path: "<checkpoint meta>".into(),
        msg: e.to_string(),
    })?;
    w_u32(&mut w, meta.len() as u32)?;
    w.write_all(meta.as_bytes())?;

    w_u32(&mut w, ckpt.params.len() as u32)?;
    for p in &ckpt.params {
        w_u16(&mut w, p.name.len() as u16)?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&[p.shape.len() as u8])?;
        for &d in &p.shape {
            w_u32(&mut w, d as u32)?;
        }
        w_f32s(&mut w, &p.data)?;
    }

    w_u32(&mut w, ckpt.bn_states.len() as u32)?;
    for s in &ckpt.bn_states {
        w_u32(&mut w, s.running_mean.len() as u32)?;
        w.write_all(&s.momentum.to_le_bytes())?;
        w_u64(&mut w, s.updates)?;
        w_f32s(&mut w, &s.running_mean)?;
        w_f32s(&mut w, &s.running_var)?;
    }

    w.write_all(&[ckpt.mean_dims.len() as u8])?;
    for &d in &ckpt.mean_dims {
        w_u32(&mut w, d as u32)?;
    }
    w_f32s(&mut w, &ckpt.mean)?;

    match &ckpt.adam {
        None => w.write_all(&[0u8])?,
        Some(a) => {
            w.write_all(&[1u8])?;
            w_u64(&mut w, a.step)?;
            w_f64(&mut w, a.hyper.lr)?;
            w_f64(&mut w, a.hyper.beta1)?;
            w_f64(&mut w, a.hyper.beta2)?;
            w_f64(&mut w, a.hyper.epsilon)?;
            for (m, v) in a.m.iter().zip(&a.v) {
                w_f32s(&mut w, m)?;
                w_f32s(&mut w, v)?;
            }
        }
    }
    Ok(())
}

struct Reader<R: Read> {
    r: R,
    path: String,
}

impl<R: Read> Reader<R> {
    fn bad(&self, msg: impl Into<String>) -> CoreError {
        CoreError::Format {
            path: self.path.clone(),
            msg: msg.into(),
        }
    }
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.r.read_exact(&mut buf)?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        let b = self.bytes(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn u64(&mut self) -> Result<u64> {
        let b = self.bytes(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let b = self.bytes(n * 4)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
    fn f64(&mut self) -> Result<f64> {
        let b = self.bytes(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(r: R, path: &str) -> Result<Checkpoint> {
    let mut rd = Reader {
        r,
        path: path.to_string(),
    };
    if rd.bytes(4)? != MAGIC {
        return Err(rd.bad("bad magic"));
    }
    if rd.u16()? != VERSION {
        return Err(rd.bad("unsupported version"));
    }
    let stored_hash = rd.bytes(32)?;
    let meta_len = rd.u32()? as usize;
    let meta_bytes = rd.bytes(meta_len)?;
    let meta: CheckpointMeta = toml::from_str(
        std::str::from_utf8(&meta_bytes).map_err(|_| rd.bad("non-utf8 meta"))?,
    )
    .map_err(|e| rd.bad(format!("meta: {}", e)))?;
    if meta.arch.hash().as_slice() != stored_hash.as_slice() {
        return Err(rd.bad("architecture digest mismatch"));
    }

    let n_params = rd.u32()? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = rd.u16()? as usize;
        let name = String::from_utf8(rd.bytes(name_len)?).map_err(|_| rd.bad("non-utf8 name"))?;
        let ndim = rd.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(rd.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let data = rd.f32s(n)?;
        params.push(Param { name, shape, data });
    }

    let n_states = rd.u32()? as usize;
    let mut bn_states = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        let c = rd.u32()? as usize;
        let momentum = f32::from_le_bytes(rd.bytes(4)?.try_into().unwrap());
        let updates = rd.u64()?;
        let running_mean = rd.f32s(c)?;
        let running_var = rd.f32s(c)?;
        bn_states.push(BnState {
            running_mean,
            running_var,
            momentum,
            updates,
        });
    }

    let mean_ndim = rd.u8()? as usize;
    let mut mean_dims = Vec::with_capacity(mean_ndim);
    for _ in 0..mean_ndim {
        mean_dims.push(rd.u32()? as usize);
    }
    let mean = rd.f32s(mean_dims.iter().product())?;

    let adam = if rd.u8()? == 1 {
        let step = rd.u64()?;
        let hyper = AdamHyper {
            lr: rd.f64()?,
            beta1: rd.f64()?,
            beta2: rd.f64()?,
            epsilon: rd.f64()?,
        };
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for p in &params {
            m.push(rd.f32s(p.data.len())?);
            v.push(rd.f32s(p.data.len())?);
        }
        Some(AdamState { m, v, step, hyper })
    } else {
        None
    };

    Ok(Checkpoint {
        meta,
        params,
        bn_states,
        mean_dims,
        mean,
        adam,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, ckpt)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&bytes[..], &path.display().to_string())
}
