//! Convolution kernels lowered to GEMM through im2col/col2im.
//!
//! Convolution weights are `(C_out, C_in, K, K)`; transposed-convolution
//! weights are `(C_in, C_out, K, K)`. Both run one GEMM per batch element in
//! a fixed order, so results are reproducible bit for bit.

use alloc::vec;
#[allow(unused_imports)]
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::{Real, Tensor};

/// `(dx, (dw, db))` from a convolution backward pass.
pub type ConvGrads<T> = (Option<Tensor<T>>, Option<(Tensor<T>, Tensor<T>)>);

/// Geometry of a strided square-kernel convolution over one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    fn validate(&self) -> Result<()> {
        if self.height + 2 * self.pad < self.kernel || self.width + 2 * self.pad < self.kernel || self.stride == 0 {
            bail!(Validation, "convolution geometry {:?} produces an empty output", self);
        }
        Ok(())
    }
}

/// Output columns `lo..hi` whose input column `ox·stride + kj − pad` lies
/// inside the image.
fn valid_span(g: &ConvGeom, kj: usize, wo: usize) -> (usize, usize) {
    let lo = if g.pad > kj { (g.pad - kj).div_ceil(g.stride) } else { 0 };
    let hi = if g.width + g.pad > kj { ((g.width + g.pad - kj - 1) / g.stride + 1).min(wo) } else { 0 };
    (lo.min(hi), hi)
}

/// Writes the `(C·K·K, Ho·Wo)` patch matrix of `image` into `cols`.
pub fn im2col<T: Real>(image: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let (k, s) = (g.kernel, g.stride);
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let (lo, hi) = valid_span(g, kj, wo);
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                row += 1;
                for (oy, line) in dst.chunks_exact_mut(wo).enumerate() {
                    let iy = (oy * s + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize || lo == hi {
                        line.fill(T::ZERO);
                        continue;
                    }
                    line[..lo].fill(T::ZERO);
                    line[hi..].fill(T::ZERO);
                    let start = iy as usize * g.width + lo * s + kj - g.pad;
                    let src = &plane[start..start + (hi - lo - 1) * s + 1];
                    let out = &mut line[lo..hi];
                    if s == 1 {
                        out.copy_from_slice(src);
                    } else {
                        for (i, o) in out.iter_mut().enumerate() {
                            *o = src[i * s];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a patch matrix back onto `image` (adjoint of [`im2col`]).
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeom, image: &mut [T]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let (k, s) = (g.kernel, g.stride);
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let (lo, hi) = valid_span(g, kj, wo);
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                row += 1;
                if lo == hi {
                    continue;
                }
                for (oy, line) in src.chunks_exact(wo).enumerate() {
                    let iy = (oy * s + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let start = iy as usize * g.width + lo * s + kj - g.pad;
                    let dst = &mut plane[start..start + (hi - lo - 1) * s + 1];
                    for (i, x) in line[lo..hi].iter().enumerate() {
                        dst[i * s] += *x;
                    }
                }
            }
        }
    }
}

/// `c (m×n) = a (m×k) · b (k×n) + beta·c`, all dense row-major unless the
/// strides say otherwise.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (isize, isize),
    b: &[T],
    (rsb, csb): (isize, isize),
    beta: T,
    c: &mut [T],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: every view spans exactly m×k, k×n and m×n elements of slices
    // that are at least that long (asserted above).
    unsafe {
        T::gemm(m, k, n, T::ONE, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1)
    }
}

fn conv_geom<T: Real>(x: &Tensor<T>, kernel: usize, stride: usize, pad: usize) -> ConvGeom {
    ConvGeom { channels: x.dim(1), height: x.dim(2), width: x.dim(3), kernel, stride, pad }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (c, &b) in bias.iter().enumerate() {
        for v in &mut out[c * plane..(c + 1) * plane] {
            *v += b;
        }
    }
}

fn accumulate_bias_grad<T: Real>(dout: &[T], db: &mut [T], plane: usize) {
    for (c, acc) in db.iter_mut().enumerate() {
        let mut s = T::ZERO;
        for &v in &dout[c * plane..(c + 1) * plane] {
            s += v;
        }
        *acc += s;
    }
}

pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    if x.shape().len() != 4 || w.shape().len() != 4 || w.dim(2) != w.dim(3) || w.dim(1) != x.dim(1) {
        bail!(Validation, "conv2d: input {:?} incompatible with weight {:?}", x.shape(), w.shape());
    }
    let g = conv_geom(x, w.dim(2), stride, pad);
    g.validate()?;
    let (n, cout) = (x.dim(0), w.dim(0));
    let (ho, wo) = (g.out_height(), g.out_width());
    let (rows, cols_n) = (g.col_rows(), g.col_cols());
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    let mut cols = vec![T::ZERO; rows * cols_n];
    let out_stride = cout * ho * wo;
    for i in 0..n {
        im2col(x.batch_item(i), &g, &mut cols);
        let dst = &mut out.data_mut()[i * out_stride..(i + 1) * out_stride];
        gemm(cout, rows, cols_n, w.data(), (rows as isize, 1), &cols, (cols_n as isize, 1), T::ZERO, dst);
        add_bias(dst, b.data(), ho * wo);
    }
    Ok(out)
}

/// Gradients of [`conv2d`]; `dx` is skipped when `need_dx` is false.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_dx: bool,
    need_dw: bool,
) -> ConvGrads<T> {
    let g = conv_geom(x, w.dim(2), stride, pad);
    let (n, cout) = (x.dim(0), w.dim(0));
    let (rows, cols_n) = (g.col_rows(), g.col_cols());
    let mut dwb = need_dw.then(|| (Tensor::zeros(w.shape()), Tensor::zeros(&[cout])));
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut cols = vec![T::ZERO; rows * cols_n];
    let mut dcols = vec![T::ZERO; rows * cols_n];
    let in_stride = x.len() / n;
    for i in 0..n {
        let d = dout.batch_item(i);
        if let Some((dw, db)) = dwb.as_mut() {
            im2col(x.batch_item(i), &g, &mut cols);
            // dW += dOut · colsᵀ
            gemm(cout, cols_n, rows, d, (cols_n as isize, 1), &cols, (1, cols_n as isize), T::ONE, dw.data_mut());
            accumulate_bias_grad(d, db.data_mut(), cols_n);
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = Wᵀ · dOut
            gemm(rows, cout, cols_n, w.data(), (1, rows as isize), d, (cols_n as isize, 1), T::ZERO, &mut dcols);
            col2im(&dcols, &g, &mut dx.data_mut()[i * in_stride..(i + 1) * in_stride]);
        }
    }
    (dx, dwb)
}

pub fn conv_transpose2d_out(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size - 1) * stride + kernel - 2 * pad
}

pub fn conv_transpose2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    if x.shape().len() != 4 || w.shape().len() != 4 || w.dim(2) != w.dim(3) || w.dim(0) != x.dim(1) {
        bail!(Validation, "conv_transpose2d: input {:?} incompatible with weight {:?}", x.shape(), w.shape());
    }
    let (n, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (cout, k) = (w.dim(1), w.dim(2));
    let (ho, wo) = (conv_transpose2d_out(h, k, stride, pad), conv_transpose2d_out(wd, k, stride, pad));
    let g = ConvGeom { channels: cout, height: ho, width: wo, kernel: k, stride, pad };
    let rows = cout * k * k;
    let hw = h * wd;
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    let mut cols = vec![T::ZERO; rows * hw];
    let out_stride = cout * ho * wo;
    for i in 0..n {
        // cols = Wᵀ · x
        gemm(rows, cin, hw, w.data(), (1, rows as isize), x.batch_item(i), (hw as isize, 1), T::ZERO, &mut cols);
        let dst = &mut out.data_mut()[i * out_stride..(i + 1) * out_stride];
        col2im(&cols, &g, dst);
        add_bias(dst, b.data(), ho * wo);
    }
    Ok(out)
}

pub fn conv_transpose2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_dx: bool,
    need_dw: bool,
) -> ConvGrads<T> {
    let (n, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (cout, k) = (w.dim(1), w.dim(2));
    let g = ConvGeom { channels: cout, height: dout.dim(2), width: dout.dim(3), kernel: k, stride, pad };
    let rows = cout * k * k;
    let hw = h * wd;
    let mut dwb = need_dw.then(|| (Tensor::zeros(w.shape()), Tensor::zeros(&[cout])));
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut cols = vec![T::ZERO; rows * hw];
    for i in 0..n {
        let d = dout.batch_item(i);
        if dx.is_none() && dwb.is_none() {
            break;
        }
        im2col(d, &g, &mut cols);
        if let Some((dw, db)) = dwb.as_mut() {
            accumulate_bias_grad(d, db.data_mut(), g.height * g.width);
            // dW += x · colsᵀ
            gemm(cin, hw, rows, x.batch_item(i), (hw as isize, 1), &cols, (1, hw as isize), T::ONE, dw.data_mut());
        }
        if let Some(dx) = dx.as_mut() {
            let dst = &mut dx.data_mut()[i * cin * hw..(i + 1) * cin * hw];
            gemm(cin, rows, hw, w.data(), (rows as isize, 1), &cols, (hw as isize, 1), T::ZERO, dst);
        }
    }
    (dx, dwb)
}
