//! Flat depth representations extracted from volumes.
//!
//! Projections are taken from a 64x64x64 intermediate cube so the three
//! view directions stay spatially aligned. Five variants exist:
//!
//! 1. x-y max-intensity projection, 1 channel
//! 2. x-y normalized depth-index map, 1 channel
//! 3. both of the above, 2 channels
//! 4. x-y, z-x and z-y max-intensity projections, 3 channels
//! 5. x-y, z-x and z-y depth-index maps, 3 channels
//!
//! Depth indices are argmax positions normalized to [0, 1]; ties take the
//! smallest index, i.e. the value closest to the light source.

use crate::error::{CoreError, Result};
use crate::sim::Volume;

/// One extracted 2D representation: `channels` planes of 64 x 64 values,
/// channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Representation2D {
    pub variant: u8,
    pub channels: usize,
    pub side: usize,
    pub data: Vec<f32>,
}

/// Axis to project over: 0 = x, 1 = y, 2 = z.
pub fn mip(volume: &Volume, axis: usize) -> Result<Vec<f32>> {
    project(volume, axis).map(|(m, _)| m)
}

/// Normalized argmax depth along `axis`; 0 is nearest the light source.
pub fn depth_index_map(volume: &Volume, axis: usize) -> Result<Vec<f32>> {
    let depth = volume.dims[axis];
    let scale = if depth > 1 { 1.0 / (depth as f32 - 1.0) } else { 0.0 };
    project(volume, axis).map(|(_, args)| args.iter().map(|&a| a as f32 * scale).collect())
}

fn project(volume: &Volume, axis: usize) -> Result<(Vec<f32>, Vec<usize>)> {
    if axis > 2 {
        return Err(CoreError::InvalidArg {
            ctx: "projection",
            msg: format!("axis must be 0..=2, got {}", axis),
        });
    }
    let [nx, ny, nz] = volume.dims;
    let (rows, cols, depth) = match axis {
        0 => (ny, nz, nx),
        1 => (nx, nz, ny),
        _ => (nx, ny, nz),
    };
    let mut maxes = vec![f32::NEG_INFINITY; rows * cols];
    let mut args = vec![0usize; rows * cols];
    for a in 0..rows {
        for b in 0..cols {
            let (mut best, mut best_i) = (f32::NEG_INFINITY, 0usize);
            for d in 0..depth {
                let (i, j, k) = match axis {
                    0 => (d, a, b),
                    1 => (a, d, b),
                    _ => (a, b, d),
                };
                let v = volume.at(i, j, k);
                // strict comparison keeps the smallest index on ties
                if v > best {
                    best = v;
                    best_i = d;
                }
            }
            maxes[a * cols + b] = best;
            args[a * cols + b] = best_i;
        }
    }
    Ok((maxes, args))
}

/// Pool an acquisition-resolution volume down to the 64x64x64 projection
/// cube. Dims must be multiples of 64.
pub fn to_cube64(volume: &Volume) -> Result<Volume> {
    let f = [
        volume.dims[0] / 64,
        volume.dims[1] / 64,
        volume.dims[2] / 64,
    ];
    if f.iter().any(|&x| x == 0) || volume.dims.iter().zip(&[64, 64, 64]).any(|(&d, &t)| d % t != 0)
    {
        return Err(CoreError::InvalidArg {
            ctx: "to_cube64",
            msg: format!("dims {:?} cannot pool to 64^3", volume.dims),
        });
    }
    volume.downsample(f)
}

/// Build one of the five flat representations from the projection cube.
pub fn make_variant(cube: &Volume, variant: u8) -> Result<Representation2D> {
    if cube.dims != [64, 64, 64] {
        return Err(CoreError::ShapeMismatch {
            ctx: "make_variant",
            expected: "[64, 64, 64] cube".into(),
            got: format!("{:?}", cube.dims),
        });
    }
    let side = 64usize;
    let planes: Vec<Vec<f32>> = match variant {
        1 => vec![mip(cube, 2)?],
        2 => vec![depth_index_map(cube, 2)?],
        3 => vec![depth_index_map(cube, 2)?, mip(cube, 2)?],
        4 => vec![mip(cube, 2)?, mip(cube, 1)?, mip(cube, 0)?],
        5 => vec![
            depth_index_map(cube, 2)?,
            depth_index_map(cube, 1)?,
            depth_index_map(cube, 0)?,
        ],
        v => {
            return Err(CoreError::InvalidArg {
                ctx: "make_variant",
                msg: format!("variant must be 1..=5, got {}", v),
            })
        }
    };
    let channels = planes.len();
    let mut data = Vec::with_capacity(channels * side * side);
    for p in planes {
        data.extend(p);
    }
    Ok(Representation2D {
        variant,
        channels,
        side,
        data,
    })
}

pub fn variant_channels(variant: u8) -> Result<usize> {
    match variant {
        1 | 2 => Ok(1),
        3 => Ok(2),
        4 | 5 => Ok(3),
        v => Err(CoreError::InvalidArg {
            ctx: "variant_channels",
            msg: format!("variant must be 1..=5, got {}", v),
        }),
    }
}

/// Stack z-shifted copies of a volume into channels -k..=+k (zero filled at
/// the edges), so flat kernels see depth context through the channel axis.
/// Output is channel-major: `[2k+1, x, y, z]`.
pub fn shifted_channel_volume(volume: &Volume, k: usize) -> (usize, Vec<f32>) {
    let [nx, ny, nz] = volume.dims;
    let channels = 2 * k + 1;
    let mut out = vec![0.0f32; channels * nx * ny * nz];
    for c in 0..channels {
        let shift = c as isize - k as isize;
        let dst = &mut out[c * nx * ny * nz..(c + 1) * nx * ny * nz];
        for i in 0..nx {
            for j in 0..ny {
                let base = (i * ny + j) * nz;
                for z in 0..nz {
                    let src_z = z as isize + shift;
                    if src_z >= 0 && (src_z as usize) < nz {
                        dst[base + z] = volume.data[base + src_z as usize];
                    }
                }
            }
        }
    }
    (channels, out)
}
