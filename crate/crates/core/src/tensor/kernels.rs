//! Raw convolution and pooling kernels over flat row-major buffers.
//!
//! Batch items are processed in parallel but every output element and every
//! reduction is computed in a fixed order, so results do not depend on the
//! number of worker threads.

use rayon::prelude::*;

use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub dil: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let p = g.out_plane();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky * g.dil) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx * g.dil) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let p = g.out_plane();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky * g.dil) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx * g.dil) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[base + ix as usize] = plane[base + ix as usize] + src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let p = g.out_plane();
    let in_item = g.cin * g.h * g.w;
    let mut out = vec![T::zero(); g.n * g.cout * p];
    out.par_chunks_mut(g.cout * p)
        .zip(x.par_chunks(in_item))
        .for_each(|(y, xn)| {
            if g.is_pointwise() {
                T::gemm(g.cout, g.cin, p, w, false, xn, false, T::zero(), y);
            } else {
                let mut col = vec![T::zero(); g.col_rows() * p];
                im2col(g, xn, &mut col);
                T::gemm(g.cout, g.col_rows(), p, w, false, &col, false, T::zero(), y);
            }
            for (co, plane) in y.chunks_mut(p).enumerate() {
                plane.iter_mut().for_each(|v| *v = *v + b[co]);
            }
        });
    out
}

/// Gradients of a convolution. Returns `(dx, dw, db)`; `dx` is skipped when
/// the input does not need it.
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    want_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let p = g.out_plane();
    let kk = g.col_rows();
    let in_item = g.cin * g.h * g.w;

    let per_item: Vec<(Vec<T>, Option<Vec<T>>)> = x
        .par_chunks(in_item)
        .zip(dy.par_chunks(g.cout * p))
        .map(|(xn, dyn_)| {
            let mut dw = vec![T::zero(); g.cout * kk];
            let mut dx = want_dx.then(|| vec![T::zero(); in_item]);
            if g.is_pointwise() {
                T::gemm(g.cout, p, kk, dyn_, false, xn, true, T::zero(), &mut dw);
                if let Some(dx) = dx.as_mut() {
                    T::gemm(kk, g.cout, p, w, true, dyn_, false, T::zero(), dx);
                }
            } else {
                let mut col = vec![T::zero(); kk * p];
                im2col(g, xn, &mut col);
                T::gemm(g.cout, p, kk, dyn_, false, &col, true, T::zero(), &mut dw);
                if let Some(dx) = dx.as_mut() {
                    T::gemm(kk, g.cout, p, w, true, dyn_, false, T::zero(), &mut col);
                    col2im_add(g, &col, dx);
                }
            }
            (dw, dx)
        })
        .collect();

    let mut dw_total = vec![T::zero(); g.cout * kk];
    let mut dx_total = want_dx.then(|| Vec::with_capacity(g.n * in_item));
    for (dw, dx) in per_item {
        dw_total.iter_mut().zip(&dw).for_each(|(a, &b)| *a = *a + b);
        if let (Some(total), Some(dx)) = (dx_total.as_mut(), dx) {
            total.extend_from_slice(&dx);
        }
    }
    let mut db = vec![T::zero(); g.cout];
    for item in dy.chunks(g.cout * p) {
        for (co, plane) in item.chunks(p).enumerate() {
            db[co] = db[co] + plane.iter().copied().sum::<T>();
        }
    }
    (dx_total, dw_total, db)
}

/// Geometry of a transposed convolution whose kernel equals its stride, so
/// each input site owns a disjoint `k x k` output block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
}

impl UpGeom {
    pub fn out_dims(&self) -> (usize, usize) {
        (self.h * self.k, self.w * self.k)
    }
}

pub fn conv_transpose_forward<T: Scalar>(g: &UpGeom, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let hw = g.h * g.w;
    let kk = g.k * g.k;
    let (ho, wo) = g.out_dims();
    let mut out = vec![T::zero(); g.n * g.cout * ho * wo];
    out.par_chunks_mut(g.cout * ho * wo)
        .zip(x.par_chunks(g.cin * hw))
        .for_each(|(y, xn)| {
            let rows = g.cout * kk;
            let mut cols = vec![T::zero(); rows * hw];
            T::gemm(rows, g.cin, hw, w, true, xn, false, T::zero(), &mut cols);
            for co in 0..g.cout {
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let src = &cols[(co * kk + ky * g.k + kx) * hw..][..hw];
                        for i in 0..g.h {
                            let row = &mut y[(co * ho + i * g.k + ky) * wo..][..wo];
                            for j in 0..g.w {
                                row[j * g.k + kx] = src[i * g.w + j] + b[co];
                            }
                        }
                    }
                }
            }
        });
    out
}

pub fn conv_transpose_backward<T: Scalar>(
    g: &UpGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    want_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let hw = g.h * g.w;
    let kk = g.k * g.k;
    let rows = g.cout * kk;
    let (ho, wo) = g.out_dims();

    let per_item: Vec<(Vec<T>, Option<Vec<T>>)> = x
        .par_chunks(g.cin * hw)
        .zip(dy.par_chunks(g.cout * ho * wo))
        .map(|(xn, dyn_)| {
            let mut dcols = vec![T::zero(); rows * hw];
            for co in 0..g.cout {
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let dst = &mut dcols[(co * kk + ky * g.k + kx) * hw..][..hw];
                        for i in 0..g.h {
                            let row = &dyn_[(co * ho + i * g.k + ky) * wo..][..wo];
                            for j in 0..g.w {
                                dst[i * g.w + j] = row[j * g.k + kx];
                            }
                        }
                    }
                }
            }
            let mut dw = vec![T::zero(); g.cin * rows];
            T::gemm(g.cin, hw, rows, xn, false, &dcols, true, T::zero(), &mut dw);
            let dx = want_dx.then(|| {
                let mut dx = vec![T::zero(); g.cin * hw];
                T::gemm(g.cin, rows, hw, w, false, &dcols, false, T::zero(), &mut dx);
                dx
            });
            (dw, dx)
        })
        .collect();

    let mut dw_total = vec![T::zero(); g.cin * rows];
    let mut dx_total = want_dx.then(|| Vec::with_capacity(g.n * g.cin * hw));
    for (dw, dx) in per_item {
        dw_total.iter_mut().zip(&dw).for_each(|(a, &b)| *a = *a + b);
        if let (Some(total), Some(dx)) = (dx_total.as_mut(), dx) {
            total.extend_from_slice(&dx);
        }
    }
    let mut db = vec![T::zero(); g.cout];
    for item in dy.chunks(g.cout * ho * wo) {
        for (co, plane) in item.chunks(ho * wo).enumerate() {
            db[co] = db[co] + plane.iter().copied().sum::<T>();
        }
    }
    (dx_total, dw_total, db)
}

/// Max pooling over `(N*C)` planes. Returns the pooled values and, per output
/// element, the flat input index it came from (first maximum in row-major
/// scan order).
pub fn maxpool_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
) -> (Vec<T>, Vec<usize>) {
    let ho = (h - window) / stride + 1;
    let wo = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut arg = Vec::with_capacity(planes * ho * wo);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}
