//! Input-gradient saliency: which voxels move the network output most.
//!
//! The map is the gradient of the summed output vector with respect to the
//! input, computed in inference mode with either the standard or the
//! guided ReLU backward rule (the guided rule drops negative upstream
//! gradients, which sharpens the maps).

use std::path::Path;

use crate::error::{CoreError, Result};
use crate::sim::Volume;
use crate::tensor::{BackwardMode, BnMode, Tape, Tensor};
use crate::train::TrainedModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaliencyMode {
    Standard,
    Guided,
}

impl std::str::FromStr for SaliencyMode {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(SaliencyMode::Standard),
            "guided" => Ok(SaliencyMode::Guided),
            other => Err(CoreError::InvalidArg {
                ctx: "saliency mode",
                msg: format!("expected standard|guided, got {:?}", other),
            }),
        }
    }
}

impl SaliencyMode {
    fn backward(&self) -> BackwardMode {
        match self {
            SaliencyMode::Standard => BackwardMode::Standard,
            SaliencyMode::Guided => BackwardMode::Guided,
        }
    }
}

/// Gradient of the summed outputs w.r.t. a raw (not mean-subtracted) input
/// in network layout. The result has the input's shape.
pub fn saliency_map(
    model: &mut TrainedModel,
    input: &[f32],
    mode: SaliencyMode,
) -> Result<Vec<f32>> {
    let dims = model.input_dims().to_vec();
    let per: usize = dims.iter().product();
    if input.len() != per {
        return Err(CoreError::ShapeMismatch {
            ctx: "saliency input",
            expected: format!("{} values {:?}", per, dims),
            got: format!("{}", input.len()),
        });
    }
    let centered: Vec<f32> = input.iter().zip(model.mean()).map(|(&v, &m)| v - m).collect();
    let tensor = Tensor::new(&[1, dims[0], dims[1], dims[2], dims[3]], centered)?;

    let mut tape = Tape::new();
    // batch-norm stays in inference mode: training-mode statistics would
    // make the map depend on itself
    let pass = model
        .network_mut()
        .forward(&mut tape, tensor, BnMode::Infer, false, true)?;
    let target = tape.sum_all(pass.output);
    tape.backward(target, mode.backward())?;
    tape.take_grad(pass.input).ok_or_else(|| CoreError::InvalidArg {
        ctx: "saliency",
        msg: "input received no gradient".into(),
    })
}

/// Per-output-component maps, same layout as [`saliency_map`].
pub fn saliency_per_component(
    model: &mut TrainedModel,
    input: &[f32],
    mode: SaliencyMode,
) -> Result<Vec<Vec<f32>>> {
    let dims = model.input_dims().to_vec();
    let centered: Vec<f32> = input.iter().zip(model.mean()).map(|(&v, &m)| v - m).collect();
    let tensor = Tensor::new(&[1, dims[0], dims[1], dims[2], dims[3]], centered)?;

    let mut out = Vec::new();
    let n_out = {
        let mut tape = Tape::new();
        let pass = model
            .network_mut()
            .forward(&mut tape, tensor.clone(), BnMode::Infer, false, false)?;
        tape.value(pass.output).len()
    };
    for i in 0..n_out {
        let mut tape = Tape::new();
        let pass = model
            .network_mut()
            .forward(&mut tape, tensor.clone(), BnMode::Infer, false, true)?;
        // select output i through a dot with a one-hot row
        let mut onehot = vec![0.0f32; n_out];
        onehot[i] = 1.0;
        let w = tape.constant(Tensor::new(&[1, n_out], onehot)?);
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.dense(pass.output, w, b)?;
        let loss = tape.sum_all(y);
        tape.backward(loss, mode.backward())?;
        out.push(tape.take_grad(pass.input).expect("input gradient"));
    }
    Ok(out)
}

/// Fraction of total |S| mass inside a voxel mask (same grid).
pub fn localization_score(saliency: &[f32], mask: &[bool]) -> Result<f64> {
    if saliency.len() != mask.len() {
        return Err(CoreError::ShapeMismatch {
            ctx: "localization_score",
            expected: format!("{} mask entries", saliency.len()),
            got: format!("{}", mask.len()),
        });
    }
    let total: f64 = saliency.iter().map(|v| v.abs() as f64).sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let inside: f64 = saliency
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| v.abs() as f64)
        .sum();
    Ok(inside / total)
}

/// Grow a voxel mask by one 26-neighborhood shell, `steps` times.
pub fn dilate_mask(mask: &[bool], dims: [usize; 3], steps: usize) -> Vec<bool> {
    let [nx, ny, nz] = dims;
    let mut cur = mask.to_vec();
    for _ in 0..steps {
        let src = cur.clone();
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    if src[(i * ny + j) * nz + k] {
                        continue;
                    }
                    'probe: for di in -1i64..=1 {
                        for dj in -1i64..=1 {
                            for dk in -1i64..=1 {
                                let (a, b, c) =
                                    (i as i64 + di, j as i64 + dj, k as i64 + dk);
                                if a < 0 || b < 0 || c < 0 {
                                    continue;
                                }
                                let (a, b, c) = (a as usize, b as usize, c as usize);
                                if a < nx && b < ny && c < nz && src[(a * ny + b) * nz + c] {
                                    cur[(i * ny + j) * nz + k] = true;
                                    break 'probe;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cur
}

/// An 8-bit RGB image; stored as a binary portable pixmap (P6).
pub struct OverlayImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl OverlayImage {
    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut bytes = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        bytes.extend_from_slice(&self.rgb);
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub enum View {
    /// Max-intensity projection along an axis (0, 1 or 2).
    Projection(usize),
    /// A single slice: (axis, index).
    Slice(usize, usize),
}

fn view_plane(volume: &Volume, view: View) -> Result<(usize, usize, Vec<f32>)> {
    match view {
        View::Projection(axis) => {
            let plane = crate::depth::mip(volume, axis)?;
            let (h, w) = plane_dims(volume.dims, axis);
            Ok((w, h, plane))
        }
        View::Slice(axis, index) => {
            let [nx, ny, nz] = volume.dims;
            if axis > 2 || index >= volume.dims[axis] {
                return Err(CoreError::InvalidArg {
                    ctx: "saliency view",
                    msg: format!("slice {} out of range for axis {}", index, axis),
                });
            }
            let (h, w) = plane_dims(volume.dims, axis);
            let mut plane = vec![0.0f32; h * w];
            for a in 0..h {
                for b in 0..w {
                    let (i, j, k) = match axis {
                        0 => (index, a, b),
                        1 => (a, index, b),
                        _ => (a, b, index),
                    };
                    let _ = (nx, ny, nz);
                    plane[a * w + b] = volume.at(i, j, k);
                }
            }
            Ok((w, h, plane))
        }
    }
}

fn plane_dims(dims: [usize; 3], axis: usize) -> (usize, usize) {
    match axis {
        0 => (dims[1], dims[2]),
        1 => (dims[0], dims[2]),
        _ => (dims[0], dims[1]),
    }
}

/// Grayscale base image with |S| in the red channel, each normalized to its
/// own maximum. Pixels stay pure gray wherever the map is zero.
pub fn saliency_overlay(volume: &Volume, saliency: &[f32], view: View) -> Result<OverlayImage> {
    if saliency.len() != volume.len() {
        return Err(CoreError::ShapeMismatch {
            ctx: "saliency_overlay",
            expected: format!("{} saliency values", volume.len()),
            got: format!("{}", saliency.len()),
        });
    }
    let abs = Volume {
        dims: volume.dims,
        data: saliency.iter().map(|v| v.abs()).collect(),
    };
    let (w, h, base) = view_plane(volume, view)?;
    let (_, _, smap) = view_plane(&abs, view)?;

    let base_max = base.iter().fold(0.0f32, |a, &v| a.max(v)).max(1e-12);
    let s_max = smap.iter().fold(0.0f32, |a, &v| a.max(v));

    let mut rgb = Vec::with_capacity(w * h * 3);
    for (g0, s0) in base.iter().zip(&smap) {
        let g = (g0 / base_max).clamp(0.0, 1.0);
        let s = if s_max > 0.0 { (s0 / s_max).clamp(0.0, 1.0) } else { 0.0 };
        // dim the gray under the map so the red reads even on bright pixels
        let gb = g * (1.0 - 0.6 * s);
        let r = (gb + s).clamp(0.0, 1.0);
        rgb.push((r * 255.0).round() as u8);
        rgb.push((gb * 255.0).round() as u8);
        rgb.push((gb * 255.0).round() as u8);
    }
    Ok(OverlayImage { width: w, height: h, rgb })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_saliency_gives_pure_grayscale() {
        let vol = Volume {
            dims: [4, 4, 2],
            data: (0..32).map(|i| i as f32 / 32.0).collect(),
        };
        let s = vec![0.0f32; 32];
        let img = saliency_overlay(&vol, &s, View::Projection(2)).unwrap();
        assert_eq!((img.width, img.height), (4, 4));
        for px in img.rgb.chunks(3) {
            assert_eq!(px[0], px[1]);
            assert_eq!(px[1], px[2]);
        }
    }

    #[test]
    fn single_hot_voxel_tints_exactly_one_pixel() {
        let vol = Volume {
            dims: [4, 4, 2],
            data: vec![0.2; 32],
        };
        let mut s = vec![0.0f32; 32];
        s[(2 * 4 + 1) * 2] = -0.7; // sign must not matter
        let img = saliency_overlay(&vol, &s, View::Projection(2)).unwrap();
        let mut tinted = Vec::new();
        for (i, px) in img.rgb.chunks(3).enumerate() {
            if px[0] > px[1] {
                tinted.push(i);
            }
        }
        assert_eq!(tinted, vec![2 * 4 + 1]);
    }

    #[test]
    fn slice_view_dims() {
        let vol = Volume {
            dims: [6, 5, 4],
            data: vec![0.1; 120],
        };
        let s = vec![0.0f32; 120];
        let img = saliency_overlay(&vol, &s, View::Slice(2, 1)).unwrap();
        assert_eq!((img.width, img.height), (5, 6));
        assert!(saliency_overlay(&vol, &s, View::Slice(2, 9)).is_err());
    }

    #[test]
    fn localization_score_examples() {
        let s = vec![1.0f32, 1.0, 1.0, 1.0];
        let all = vec![true, true, true, true];
        assert_eq!(localization_score(&s, &all).unwrap(), 1.0);
        // uniform map, mask covering 1 of 4 voxels
        let quarter = vec![true, false, false, false];
        assert!((localization_score(&s, &quarter).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn dilation_grows_mask() {
        let mut m = vec![false; 27];
        m[13] = true; // center of 3x3x3
        let d = dilate_mask(&m, [3, 3, 3], 1);
        assert_eq!(d.iter().filter(|&&b| b).count(), 27);
    }
}
