//! Forward and backward kernels behind the tape ops.
//!
//! Convolutions go through im2col plus a GEMM. Batch samples are processed
//! in parallel with per-sample partial results folded in batch order, so
//! results are bit-identical regardless of thread count.

use ndarray::{ArrayView2, ArrayViewMut2};
use rayon::prelude::*;

use super::{dims5, Scalar, Tensor};
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

/// Output extent of one spatial axis.
pub fn conv_out_dim(d: usize, k: usize, stride: usize, pad: Padding) -> usize {
    match pad {
        Padding::Same => d.div_ceil(stride),
        Padding::Valid => {
            debug_assert!(d >= k);
            (d - k) / stride + 1
        }
    }
}

/// Low-side padding; any odd remainder goes to the high side.
fn pad_lo(d: usize, k: usize, stride: usize, pad: Padding) -> isize {
    match pad {
        Padding::Same => {
            let out = d.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(d);
            (total / 2) as isize
        }
        Padding::Valid => 0,
    }
}

pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub in_dims: [usize; 3],
    pub k_dims: [usize; 3],
    pub out_dims: [usize; 3],
    pub stride: usize,
    pub pad_lo: [isize; 3],
    /// rows of the im2col matrix: cin * kx * ky * kz
    pub k_rows: usize,
    /// columns of the im2col matrix: xo * yo * zo
    pub positions: usize,
}

pub(crate) fn conv_geometry<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: Padding,
) -> Result<ConvGeom> {
    let [batch, cin, ix, iy, iz] = dims5(x.shape(), "conv3d input")?;
    let [cout, wcin, kx, ky, kz] = dims5(w.shape(), "conv3d kernel")?;
    if wcin != cin {
        return Err(CoreError::ShapeMismatch {
            ctx: "conv3d",
            expected: format!("kernel input channels {}", cin),
            got: format!("{}", wcin),
        });
    }
    if b.shape() != [cout] {
        return Err(CoreError::ShapeMismatch {
            ctx: "conv3d bias",
            expected: format!("[{}]", cout),
            got: format!("{:?}", b.shape()),
        });
    }
    if stride != 1 && stride != 2 {
        return Err(CoreError::InvalidArg {
            ctx: "conv3d",
            msg: format!("stride must be 1 or 2, got {}", stride),
        });
    }
    if pad == Padding::Same && (kx % 2 == 0 || ky % 2 == 0 || kz % 2 == 0) {
        return Err(CoreError::InvalidArg {
            ctx: "conv3d",
            msg: format!("same padding needs odd kernel dims, got {}x{}x{}", kx, ky, kz),
        });
    }
    if pad == Padding::Valid && (ix < kx || iy < ky || iz < kz) {
        return Err(CoreError::InvalidArg {
            ctx: "conv3d",
            msg: "valid padding needs input at least as large as the kernel".into(),
        });
    }
    let out_dims = [
        conv_out_dim(ix, kx, stride, pad),
        conv_out_dim(iy, ky, stride, pad),
        conv_out_dim(iz, kz, stride, pad),
    ];
    Ok(ConvGeom {
        batch,
        cin,
        cout,
        in_dims: [ix, iy, iz],
        k_dims: [kx, ky, kz],
        out_dims,
        stride,
        pad_lo: [
            pad_lo(ix, kx, stride, pad),
            pad_lo(iy, ky, stride, pad),
            pad_lo(iz, kz, stride, pad),
        ],
        k_rows: cin * kx * ky * kz,
        positions: out_dims.iter().product(),
    })
}

/// Valid output range [lo, hi) along one axis for a kernel offset, i.e. the
/// positions whose sampled input index stays in bounds.
fn valid_range(out: usize, in_dim: usize, stride: usize, pad_lo: isize, d: usize) -> (usize, usize) {
    let off = d as isize - pad_lo; // input index at output 0
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(stride)
    };
    // largest o with o*stride + off < in_dim
    let hi = if off >= in_dim as isize {
        0
    } else {
        (((in_dim as isize - 1 - off) as usize) / stride + 1).min(out)
    };
    (lo.min(out), hi.max(lo.min(out)))
}

/// Expand one sample into the [k_rows x positions] patch matrix. Every cell
/// is written (padding cells with zero), so the buffer needs no pre-clear.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let [ix, iy, iz] = g.in_dims;
    let [kx, ky, kz] = g.k_dims;
    let [xo, yo, zo] = g.out_dims;
    let s = g.stride;
    let p = g.positions;
    debug_assert_eq!(cols.len(), g.k_rows * p);

    let mut row = 0usize;
    for ci in 0..g.cin {
        let xc = &x[ci * ix * iy * iz..(ci + 1) * ix * iy * iz];
        for dx in 0..kx {
            let (ox_lo, ox_hi) = valid_range(xo, ix, s, g.pad_lo[0], dx);
            for dy in 0..ky {
                let (oy_lo, oy_hi) = valid_range(yo, iy, s, g.pad_lo[1], dy);
                for dz in 0..kz {
                    let (oz_lo, oz_hi) = valid_range(zo, iz, s, g.pad_lo[2], dz);
                    let dst = &mut cols[row * p..(row + 1) * p];
                    row += 1;
                    let z_off = dz as isize - g.pad_lo[2];

                    let mut col = 0usize;
                    for ox in 0..xo {
                        let in_x = ox < ox_lo || ox >= ox_hi;
                        for oy in 0..yo {
                            let seg = &mut dst[col..col + zo];
                            col += zo;
                            if in_x || oy < oy_lo || oy >= oy_hi {
                                seg.fill(T::zero());
                                continue;
                            }
                            let xi = ((ox * s) as isize + dx as isize - g.pad_lo[0]) as usize;
                            let yi = ((oy * s) as isize + dy as isize - g.pad_lo[1]) as usize;
                            let src = &xc[(xi * iy + yi) * iz..(xi * iy + yi + 1) * iz];
                            seg[..oz_lo].fill(T::zero());
                            seg[oz_hi..].fill(T::zero());
                            if s == 1 {
                                let z0 = (oz_lo as isize + z_off) as usize;
                                seg[oz_lo..oz_hi]
                                    .copy_from_slice(&src[z0..z0 + (oz_hi - oz_lo)]);
                            } else {
                                let mut zi = (oz_lo * s) as isize + z_off;
                                for v in &mut seg[oz_lo..oz_hi] {
                                    *v = src[zi as usize];
                                    zi += s as isize;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add of the patch matrix back onto one input sample.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx_out: &mut [T]) {
    let [ix, iy, iz] = g.in_dims;
    let [kx, ky, kz] = g.k_dims;
    let [xo, yo, zo] = g.out_dims;
    let s = g.stride;
    let p = g.positions;

    let mut row = 0usize;
    for ci in 0..g.cin {
        let xc = &mut dx_out[ci * ix * iy * iz..(ci + 1) * ix * iy * iz];
        for dx in 0..kx {
            let (ox_lo, ox_hi) = valid_range(xo, ix, s, g.pad_lo[0], dx);
            for dy in 0..ky {
                let (oy_lo, oy_hi) = valid_range(yo, iy, s, g.pad_lo[1], dy);
                for dz in 0..kz {
                    let (oz_lo, oz_hi) = valid_range(zo, iz, s, g.pad_lo[2], dz);
                    let src_row = &cols[row * p..(row + 1) * p];
                    row += 1;
                    let z_off = dz as isize - g.pad_lo[2];
                    for ox in ox_lo..ox_hi {
                        let xi = ((ox * s) as isize + dx as isize - g.pad_lo[0]) as usize;
                        for oy in oy_lo..oy_hi {
                            let yi = ((oy * s) as isize + dy as isize - g.pad_lo[1]) as usize;
                            let seg = &src_row[(ox * yo + oy) * zo..(ox * yo + oy + 1) * zo];
                            let dst = &mut xc[(xi * iy + yi) * iz..(xi * iy + yi + 1) * iz];
                            if s == 1 {
                                let z0 = (oz_lo as isize + z_off) as usize;
                                for (d, &v) in dst[z0..z0 + (oz_hi - oz_lo)]
                                    .iter_mut()
                                    .zip(&seg[oz_lo..oz_hi])
                                {
                                    *d = *d + v;
                                }
                            } else {
                                let mut zi = (oz_lo * s) as isize + z_off;
                                for &v in &seg[oz_lo..oz_hi] {
                                    let d = &mut dst[zi as usize];
                                    *d = *d + v;
                                    zi += s as isize;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn gemm<T: Scalar>(
    a: &[T],
    a_dims: (usize, usize),
    b: &[T],
    b_dims: (usize, usize),
    out: &mut [T],
    transpose_a: bool,
    transpose_b: bool,
) {
    let av = ArrayView2::from_shape(a_dims, a).expect("gemm lhs shape");
    let bv = ArrayView2::from_shape(b_dims, b).expect("gemm rhs shape");
    let av = if transpose_a { av.reversed_axes() } else { av };
    let bv = if transpose_b { bv.reversed_axes() } else { bv };
    let (m, _) = (av.nrows(), av.ncols());
    let n = bv.ncols();
    let mut ov = ArrayViewMut2::from_shape((m, n), out).expect("gemm out shape");
    ndarray::linalg::general_mat_mul(T::one(), &av, &bv, T::zero(), &mut ov);
}

pub(crate) fn conv3d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    g: &ConvGeom,
) -> Tensor<T> {
    let sample_in = g.cin * g.in_dims.iter().product::<usize>();
    let sample_out = g.cout * g.positions;
    let mut out = vec![T::zero(); g.batch * sample_out];

    out.par_chunks_mut(sample_out)
        .zip(x.data().par_chunks(sample_in))
        .for_each(|(out_b, x_b)| {
            T::with_scratch(g.k_rows * g.positions, 0, |cols, _| {
                im2col(x_b, g, cols);
                gemm(
                    w.data(),
                    (g.cout, g.k_rows),
                    cols,
                    (g.k_rows, g.positions),
                    out_b,
                    false,
                    false,
                );
            });
            for (co, chunk) in out_b.chunks_mut(g.positions).enumerate() {
                let bias = b.data()[co];
                for v in chunk {
                    *v = *v + bias;
                }
            }
        });

    Tensor {
        shape: vec![g.batch, g.cout, g.out_dims[0], g.out_dims[1], g.out_dims[2]],
        data: out,
    }
}

pub(crate) struct ConvGrads<T> {
    pub dx: Vec<T>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

pub(crate) fn conv3d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &[T],
    g: &ConvGeom,
    need_dx: bool,
) -> ConvGrads<T> {
    let sample_in = g.cin * g.in_dims.iter().product::<usize>();
    let sample_out = g.cout * g.positions;
    let wlen = w.len();

    let mut dx = vec![T::zero(); if need_dx { g.batch * sample_in } else { 0 }];

    // Per-sample partials, folded in batch order below.
    let kp = g.k_rows * g.positions;
    let partials: Vec<(Vec<T>, Vec<T>)> = if need_dx {
        dx.par_chunks_mut(sample_in)
            .zip(x.data().par_chunks(sample_in))
            .zip(dout.par_chunks(sample_out))
            .map(|((dx_b, x_b), dout_b)| {
                T::with_scratch(kp, kp, |cols, dcols| {
                    im2col(x_b, g, cols);
                    let (dw_b, db_b) = weight_grads(w, cols, dout_b, g);
                    // dcols = W^T . dout
                    gemm(
                        w.data(),
                        (g.cout, g.k_rows),
                        dout_b,
                        (g.cout, g.positions),
                        dcols,
                        true,
                        false,
                    );
                    col2im(dcols, g, dx_b);
                    (dw_b, db_b)
                })
            })
            .collect()
    } else {
        x.data()
            .par_chunks(sample_in)
            .zip(dout.par_chunks(sample_out))
            .map(|(x_b, dout_b)| {
                T::with_scratch(kp, 0, |cols, _| {
                    im2col(x_b, g, cols);
                    weight_grads(w, cols, dout_b, g)
                })
            })
            .collect()
    };

    let mut dw = vec![T::zero(); wlen];
    let mut db = vec![T::zero(); g.cout];
    for (dw_b, db_b) in partials {
        for (a, v) in dw.iter_mut().zip(dw_b) {
            *a = *a + v;
        }
        for (a, v) in db.iter_mut().zip(db_b) {
            *a = *a + v;
        }
    }
    ConvGrads { dx, dw, db }
}

fn weight_grads<T: Scalar>(
    w: &Tensor<T>,
    cols: &[T],
    dout_b: &[T],
    g: &ConvGeom,
) -> (Vec<T>, Vec<T>) {
    // dW = dout . cols^T
    let mut dw_b = vec![T::zero(); w.len()];
    gemm(
        dout_b,
        (g.cout, g.positions),
        cols,
        (g.k_rows, g.positions),
        &mut dw_b,
        false,
        true,
    );
    let db_b: Vec<T> = dout_b
        .chunks(g.positions)
        .map(|row| row.iter().fold(T::zero(), |acc, &v| acc + v))
        .collect();
    (dw_b, db_b)
}

pub(crate) fn dense_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (batch, n) = match x.shape() {
        [bt, n] => (*bt, *n),
        s => {
            return Err(CoreError::ShapeMismatch {
                ctx: "dense input",
                expected: "rank-2 [batch, features]".into(),
                got: format!("{:?}", s),
            })
        }
    };
    let (m, wn) = match w.shape() {
        [m, wn] => (*m, *wn),
        s => {
            return Err(CoreError::ShapeMismatch {
                ctx: "dense weights",
                expected: "rank-2 [out, in]".into(),
                got: format!("{:?}", s),
            })
        }
    };
    if wn != n || b.shape() != [m] {
        return Err(CoreError::ShapeMismatch {
            ctx: "dense",
            expected: format!("weights [m, {}], bias [m]", n),
            got: format!("weights {:?}, bias {:?}", w.shape(), b.shape()),
        });
    }
    let mut out = vec![T::zero(); batch * m];
    gemm(x.data(), (batch, n), w.data(), (m, n), &mut out, false, true);
    for row in out.chunks_mut(m) {
        for (v, &bias) in row.iter_mut().zip(b.data()) {
            *v = *v + bias;
        }
    }
    Tensor::new(&[batch, m], out)
}

pub(crate) fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (batch, n) = (x.shape()[0], x.shape()[1]);
    let m = w.shape()[0];
    let mut dx = vec![T::zero(); batch * n];
    gemm(dout, (batch, m), w.data(), (m, n), &mut dx, false, false);
    let mut dw = vec![T::zero(); m * n];
    gemm(dout, (batch, m), x.data(), (batch, n), &mut dw, true, false);
    let mut db = vec![T::zero(); m];
    for row in dout.chunks(m) {
        for (a, &v) in db.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
    (dx, dw, db)
}
