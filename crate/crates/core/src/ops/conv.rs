//! 2-D convolution through patch matrices (im2col) and GEMM.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output extent `ceil(input / stride)`, zero-padded symmetrically (extra row/col at the end).
    Same,
    /// No padding.
    Valid,
}

/// Resolved geometry of one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub filters: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Argument("convolution stride must be positive".into()));
        }
        let (n, c, h, w) = match *input {
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(shape_err!("conv2d input must be [N,C,H,W], got {input:?}")),
        };
        let (f, kc, kh, kw) = match *kernel {
            [f, kc, kh, kw] => (f, kc, kh, kw),
            _ => return Err(shape_err!("conv2d kernel must be [F,C,kh,kw], got {kernel:?}")),
        };
        if kc != c {
            return Err(shape_err!(
                "conv2d kernel expects {kc} input channels, input has {c}"
            ));
        }
        if kh == 0 || kw == 0 {
            return Err(shape_err!("conv2d kernel extents must be positive"));
        }
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Same => {
                let oh = h.div_ceil(stride);
                let ow = w.div_ceil(stride);
                let ph = ((oh - 1) * stride + kh).saturating_sub(h);
                let pw = ((ow - 1) * stride + kw).saturating_sub(w);
                (oh, ow, ph / 2, pw / 2)
            }
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(shape_err!(
                        "valid convolution with {kh}x{kw} kernel on {h}x{w} input"
                    ));
                }
                ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
            }
        };
        Ok(ConvGeometry {
            n,
            c,
            h,
            w,
            filters: f,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.n, self.filters, self.out_h, self.out_w]
    }

    /// A 1x1 stride-1 convolution reads the input directly as its patch matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    #[inline]
    fn in_row(&self, oy: usize, ki: usize) -> Option<usize> {
        (oy * self.stride + ki).checked_sub(self.pad_top).filter(|&y| y < self.h)
    }

    /// Range of output columns whose input column (for kernel column `kj`) is in bounds.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let s = self.stride;
        // ox*s + kj >= pad_left
        let lo = self.pad_left.saturating_sub(kj).div_ceil(s);
        // ox*s + kj - pad_left <= w - 1
        let hi = if self.w + self.pad_left < kj + 1 {
            0
        } else {
            ((self.w + self.pad_left - kj - 1) / s + 1).min(self.out_w)
        };
        (lo.min(hi), hi)
    }
}

/// Unroll one sample `[C,H,W]` into its `[C*kh*kw, OH*OW]` patch matrix.
pub(crate) fn im2col<T: Element>(g: &ConvGeometry, x: &[T], col: &mut [T]) {
    let p = g.out_pixels();
    let mut row = 0;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut col[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.out_h {
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    match g.in_row(oy, ki) {
                        None => out_row.fill(T::zero()),
                        Some(iy) => {
                            let src = &plane[iy * g.w..(iy + 1) * g.w];
                            out_row[..lo].fill(T::zero());
                            out_row[hi..].fill(T::zero());
                            if g.stride == 1 {
                                let start = lo + kj - g.pad_left;
                                out_row[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                            } else {
                                for ox in lo..hi {
                                    out_row[ox] = src[ox * g.stride + kj - g.pad_left];
                                }
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add a patch matrix back onto one sample's input gradient.
pub(crate) fn col2im<T: Element>(g: &ConvGeometry, col: &[T], dx: &mut [T]) {
    let p = g.out_pixels();
    let mut row = 0;
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &col[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.out_h {
                    if let Some(iy) = g.in_row(oy, ki) {
                        let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                        let s_row = &src[oy * g.out_w..(oy + 1) * g.out_w];
                        if g.stride == 1 && hi > lo {
                            let start = lo + kj - g.pad_left;
                            for (d, &s) in dst[start..start + (hi - lo)].iter_mut().zip(&s_row[lo..hi]) {
                                *d = *d + s;
                            }
                        } else {
                            for ox in lo..hi {
                                let ix = ox * g.stride + kj - g.pad_left;
                                dst[ix] = dst[ix] + s_row[ox];
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Element>(
    g: &ConvGeometry,
    x: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let k = g.patch_len();
    let p = g.out_pixels();
    let in_per = g.c * g.h * g.w;
    let out_per = g.filters * p;
    let mut out = vec![T::zero(); g.n * out_per];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    for ni in 0..g.n {
        let xs = &x[ni * in_per..(ni + 1) * in_per];
        let ys = &mut out[ni * out_per..(ni + 1) * out_per];
        if let Some(b) = bias {
            for (f, row) in ys.chunks_exact_mut(p).enumerate() {
                row.fill(b[f]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        let patches: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(g, xs, &mut col);
            &col
        };
        T::gemm(
            g.filters,
            k,
            p,
            T::one(),
            kernel,
            (k as isize, 1),
            patches,
            (p as isize, 1),
            beta,
            ys,
            (p as isize, 1),
        );
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Element>(
    g: &ConvGeometry,
    x: &[T],
    kernel: &[T],
    dy: &[T],
    need_input: bool,
    need_kernel: bool,
    need_bias: bool,
) -> ConvGrads<T> {
    let k = g.patch_len();
    let p = g.out_pixels();
    let in_per = g.c * g.h * g.w;
    let out_per = g.filters * p;
    let pointwise = g.is_pointwise();
    let mut dx = need_input.then(|| vec![T::zero(); g.n * in_per]);
    let mut dk = need_kernel.then(|| vec![T::zero(); g.filters * k]);
    let mut db = need_bias.then(|| vec![T::zero(); g.filters]);
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); k * p] };
    let mut dcol = if pointwise || !need_input {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    for ni in 0..g.n {
        let xs = &x[ni * in_per..(ni + 1) * in_per];
        let dys = &dy[ni * out_per..(ni + 1) * out_per];
        if let Some(db) = db.as_mut() {
            for (f, row) in dys.chunks_exact(p).enumerate() {
                db[f] = db[f] + row.iter().copied().sum();
            }
        }
        if let Some(dk) = dk.as_mut() {
            let patches: &[T] = if pointwise {
                xs
            } else {
                im2col(g, xs, &mut col);
                &col
            };
            // dK[F,K] += dY[F,P] · patchesᵀ[P,K]
            T::gemm(
                g.filters,
                p,
                k,
                T::one(),
                dys,
                (p as isize, 1),
                patches,
                (1, p as isize),
                T::one(),
                dk,
                (k as isize, 1),
            );
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[ni * in_per..(ni + 1) * in_per];
            // dPatches[K,P] = Kᵀ[K,F] · dY[F,P]
            if pointwise {
                T::gemm(
                    k,
                    g.filters,
                    p,
                    T::one(),
                    kernel,
                    (1, k as isize),
                    dys,
                    (p as isize, 1),
                    T::zero(),
                    dxs,
                    (p as isize, 1),
                );
            } else {
                T::gemm(
                    k,
                    g.filters,
                    p,
                    T::one(),
                    kernel,
                    (1, k as isize),
                    dys,
                    (p as isize, 1),
                    T::zero(),
                    &mut dcol,
                    (p as isize, 1),
                );
                col2im(g, &dcol, dxs);
            }
        }
    }
    ConvGrads {
        input: dx,
        kernel: dk,
        bias: db,
    }
}

/// Forward convolution on plain tensors.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, padding)?;
    if let Some(b) = bias {
        if b.shape() != [g.filters] {
            return Err(shape_err!(
                "conv2d bias must be [{}], got {:?}",
                g.filters,
                b.shape()
            ));
        }
    }
    let out = conv2d_forward(&g, input.data(), kernel.data(), bias.map(|b| b.data()));
    Tensor::new(g.output_shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_geometry_for_odd_kernels() {
        for k in [1, 3, 5, 7] {
            let g = ConvGeometry::new(&[1, 2, 9, 6], &[3, 2, k, k], 1, Padding::Same).unwrap();
            assert_eq!((g.out_h, g.out_w), (9, 6));
            assert_eq!(g.pad_top, (k - 1) / 2);
        }
    }

    #[test]
    fn strided_same_geometry() {
        let g = ConvGeometry::new(&[1, 1, 8, 7], &[1, 1, 3, 3], 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w), (4, 4));
    }

    #[test]
    fn rejects_channel_mismatch_and_zero_stride() {
        assert!(matches!(
            ConvGeometry::new(&[1, 2, 4, 4], &[1, 3, 3, 3], 1, Padding::Same),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            ConvGeometry::new(&[1, 2, 4, 4], &[1, 2, 3, 3], 0, Padding::Same),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn im2col_col2im_adjoint() {
        // <im2col(x), c> == <x, col2im(c)> for arbitrary x and c.
        let g = ConvGeometry::new(&[1, 2, 5, 4], &[1, 2, 3, 3], 2, Padding::Same).unwrap();
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let c: Vec<f64> = (0..g.patch_len() * g.out_pixels())
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let mut col = vec![0.0; c.len()];
        im2col(&g, &x, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&g, &c, &mut back);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
