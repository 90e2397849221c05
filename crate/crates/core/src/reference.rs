//! Deliberately slow, obviously-correct reference implementations.
//!
//! These exist for verification only: the test suites compare the fast
//! kernels against the nested-loop versions here, and the gradient checks
//! use the central-difference probe. Nothing in this module shares code
//! with the production ops.

use crate::tensor::{conv_out_dim, Padding, Scalar, Tensor};

/// Direct triple-nested-loop convolution over `[b, c, x, y, z]`.
pub fn conv3d_direct<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &[T],
    stride: usize,
    pad: Padding,
) -> Tensor<T> {
    let s = x.shape();
    let (b, cin, ix, iy, iz) = (s[0], s[1], s[2], s[3], s[4]);
    let ks = w.shape();
    let (cout, kx, ky, kz) = (ks[0], ks[2], ks[3], ks[4]);
    assert_eq!(ks[1], cin);

    let ox = conv_out_dim(ix, kx, stride, pad);
    let oy = conv_out_dim(iy, ky, stride, pad);
    let oz = conv_out_dim(iz, kz, stride, pad);
    let pad_of = |d: usize, k: usize, o: usize| -> isize {
        match pad {
            Padding::Valid => 0,
            Padding::Same => {
                let total = ((o - 1) * stride + k).saturating_sub(d);
                (total / 2) as isize
            }
        }
    };
    let (px, py, pz) = (pad_of(ix, kx, ox), pad_of(iy, ky, oy), pad_of(iz, kz, oz));

    let xv = x.data();
    let wv = w.data();
    let mut out = vec![T::zero(); b * cout * ox * oy * oz];
    let mut o = 0usize;
    for bi in 0..b {
        for co in 0..cout {
            for i in 0..ox {
                for j in 0..oy {
                    for k in 0..oz {
                        let mut acc = bias[co];
                        for ci in 0..cin {
                            for di in 0..kx {
                                for dj in 0..ky {
                                    for dk in 0..kz {
                                        let xi = (i * stride + di) as isize - px;
                                        let yi = (j * stride + dj) as isize - py;
                                        let zi = (k * stride + dk) as isize - pz;
                                        if xi < 0
                                            || yi < 0
                                            || zi < 0
                                            || xi as usize >= ix
                                            || yi as usize >= iy
                                            || zi as usize >= iz
                                        {
                                            continue;
                                        }
                                        let xidx = (((bi * cin + ci) * ix + xi as usize) * iy
                                            + yi as usize)
                                            * iz
                                            + zi as usize;
                                        let widx = (((co * cin + ci) * kx + di) * ky + dj) * kz + dk;
                                        acc = acc + xv[xidx] * wv[widx];
                                    }
                                }
                            }
                        }
                        out[o] = acc;
                        o += 1;
                    }
                }
            }
        }
    }
    Tensor::new(&[b, cout, ox, oy, oz], out).unwrap()
}

/// Loop version of 2x2x2 mean pooling.
pub fn avg_pool2_direct<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (b, c, ix, iy, iz) = (s[0], s[1], s[2], s[3], s[4]);
    let (ox, oy, oz) = (ix / 2, iy / 2, iz / 2);
    let xv = x.data();
    let mut out = Vec::with_capacity(b * c * ox * oy * oz);
    for n in 0..b * c {
        let src = &xv[n * ix * iy * iz..];
        for i in 0..ox {
            for j in 0..oy {
                for k in 0..oz {
                    let mut acc = T::zero();
                    for di in 0..2 {
                        for dj in 0..2 {
                            for dk in 0..2 {
                                acc = acc + src[((2 * i + di) * iy + 2 * j + dj) * iz + 2 * k + dk];
                            }
                        }
                    }
                    out.push(acc / T::from_f64(8.0));
                }
            }
        }
    }
    Tensor::new(&[b, c, ox, oy, oz], out).unwrap()
}

/// Loop version of mean pooling with arbitrary per-axis factors over a bare
/// `[x, y, z]` grid.
pub fn downsample_direct(x: &[f32], dims: [usize; 3], f: [usize; 3]) -> Vec<f32> {
    let (ox, oy, oz) = (dims[0] / f[0], dims[1] / f[1], dims[2] / f[2]);
    let inv = 1.0 / (f[0] * f[1] * f[2]) as f32;
    let mut out = Vec::with_capacity(ox * oy * oz);
    for i in 0..ox {
        for j in 0..oy {
            for k in 0..oz {
                let mut acc = 0.0f32;
                for di in 0..f[0] {
                    for dj in 0..f[1] {
                        for dk in 0..f[2] {
                            acc += x[((i * f[0] + di) * dims[1] + j * f[1] + dj) * dims[2]
                                + k * f[2]
                                + dk];
                        }
                    }
                }
                out.push(acc * inv);
            }
        }
    }
    out
}

/// Per-line maximum along one axis of a bare `[x, y, z]` grid, loop version.
/// Returns the projected plane and the argmax indices.
pub fn mip_direct(x: &[f32], dims: [usize; 3], axis: usize) -> (Vec<f32>, Vec<usize>) {
    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
    let at = |i: usize, j: usize, k: usize| x[(i * ny + j) * nz + k];
    let (lines, depth): (Vec<(usize, usize)>, usize) = match axis {
        0 => (
            (0..ny).flat_map(|j| (0..nz).map(move |k| (j, k))).collect(),
            nx,
        ),
        1 => (
            (0..nx).flat_map(|i| (0..nz).map(move |k| (i, k))).collect(),
            ny,
        ),
        2 => (
            (0..nx).flat_map(|i| (0..ny).map(move |j| (i, j))).collect(),
            nz,
        ),
        _ => panic!("axis must be 0..3"),
    };
    let mut maxes = Vec::with_capacity(lines.len());
    let mut args = Vec::with_capacity(lines.len());
    for (a, b) in lines {
        let mut best = f32::NEG_INFINITY;
        let mut best_i = 0usize;
        for d in 0..depth {
            let v = match axis {
                0 => at(d, a, b),
                1 => at(a, d, b),
                _ => at(a, b, d),
            };
            if v > best {
                best = v;
                best_i = d;
            }
        }
        maxes.push(best);
        args.push(best_i);
    }
    (maxes, args)
}

/// Central finite difference of `f` at `x[idx]`.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(x: &[f64], idx: usize, h: f64, mut f: F) -> f64 {
    let mut xp = x.to_vec();
    xp[idx] += h;
    let fp = f(&xp);
    xp[idx] = x[idx] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

/// Relative error with an absolute floor so near-zero pairs compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / denom
}
