//! "Same"-size 2D cross-correlation via im2col + GEMM.
//!
//! Layout: input `[C_in, H, W]`, kernels `[C_out, C_in, kH, kW]`, bias `[C_out]`.
//! Zero padding of `(kH-1)/2` rows and `(kW-1)/2` columns on each side keeps the
//! output at `[C_out, H, W]`. No kernel flip, unit stride.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeometry {
    pub fn infer(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Self> {
        let (is, ks) = (input.shape(), kernels.shape());
        if is.len() != 3 || ks.len() != 4 {
            return Err(Error::config(format!(
                "conv2d expects [C,H,W] input and [O,C,kH,kW] kernels, got {is:?} and {ks:?}"
            )));
        }
        if ks[1] != is[0] {
            return Err(Error::config(format!(
                "conv2d channel mismatch: input has {} channels, kernels expect {}",
                is[0], ks[1]
            )));
        }
        if ks[2] % 2 == 0 || ks[3] % 2 == 0 {
            return Err(Error::config(format!("conv2d kernel size must be odd, got {}x{}", ks[2], ks[3])));
        }
        if bias.shape() != [ks[0]] {
            return Err(Error::config(format!(
                "conv2d bias shape {:?} does not match {} output channels",
                bias.shape(),
                ks[0]
            )));
        }
        Ok(ConvGeometry {
            c_in: is[0],
            c_out: ks[0],
            height: is[1],
            width: is[2],
            kh: ks[2],
            kw: ks[3],
        })
    }

    fn pixels(&self) -> usize {
        self.height * self.width
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
}

/// Unfold `input` into a `[C_in*kH*kW, H*W]` column matrix.
pub(crate) fn im2col(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (h, w) = (g.height as isize, g.width as isize);
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let hw = g.pixels();
    let mut cols = vec![0.0; g.patch_len() * hw];
    for c in 0..g.c_in {
        let plane = &input[c * hw..(c + 1) * hw];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let out = &mut cols[row * hw..(row + 1) * hw];
                let dy = i as isize - ph;
                let dx = j as isize - pw;
                for y in 0..h {
                    let sy = y + dy;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    let x0 = (-dx).max(0);
                    let x1 = (w - dx).min(w);
                    if x0 >= x1 {
                        continue;
                    }
                    let dst = (y * w) as usize;
                    let src = (sy * w) as usize;
                    for x in x0..x1 {
                        out[dst + x as usize] = plane[src + (x + dx) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back onto an input-shaped buffer.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeometry, out: &mut [f64]) {
    let (h, w) = (g.height as isize, g.width as isize);
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let hw = g.pixels();
    for c in 0..g.c_in {
        let plane = &mut out[c * hw..(c + 1) * hw];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src_row = &cols[row * hw..(row + 1) * hw];
                let dy = i as isize - ph;
                let dx = j as isize - pw;
                for y in 0..h {
                    let sy = y + dy;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    let x0 = (-dx).max(0);
                    let x1 = (w - dx).min(w);
                    let src = (y * w) as usize;
                    let dst = (sy * w) as usize;
                    for x in x0..x1 {
                        plane[dst + (x + dx) as usize] += src_row[src + x as usize];
                    }
                }
            }
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` with explicit strides, row-major `c`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides describe in-bounds views of `a` (m x k), `b` (k x n) and
    // the row-major `c` (m x n); the lengths are checked by the callers' layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward pass; also returns the im2col buffer for reuse in the backward pass.
pub(crate) fn conv2d_forward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
) -> Result<(Tensor, Vec<f64>, ConvGeometry)> {
    let g = ConvGeometry::infer(input, kernels, bias)?;
    let cols = im2col(input.data(), &g);
    let hw = g.pixels();
    let kl = g.patch_len();
    let mut out = vec![0.0; g.c_out * hw];
    for (o, chunk) in out.chunks_mut(hw).enumerate() {
        chunk.fill(bias.data()[o]);
    }
    gemm(g.c_out, kl, hw, kernels.data(), (kl, 1), &cols, (hw, 1), 1.0, &mut out);
    let out = Tensor::new([g.c_out, g.height, g.width], out)?;
    Ok((out, cols, g))
}

pub(crate) struct ConvGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Tensor,
}

pub(crate) fn conv2d_backward(
    grad_out: &[f64],
    kernels: &Tensor,
    cols: &[f64],
    g: &ConvGeometry,
) -> ConvGrads {
    let hw = g.pixels();
    let kl = g.patch_len();

    // dK = dOut * cols^T
    let mut dk = vec![0.0; g.c_out * kl];
    gemm(g.c_out, hw, kl, grad_out, (hw, 1), cols, (1, hw), 0.0, &mut dk);

    // dCols = K^T * dOut
    let mut dcols = vec![0.0; kl * hw];
    gemm(kl, g.c_out, hw, kernels.data(), (1, kl), grad_out, (hw, 1), 0.0, &mut dcols);
    let mut dx = vec![0.0; g.c_in * hw];
    col2im(&dcols, g, &mut dx);

    let db: Vec<f64> = grad_out.chunks(hw).map(|c| c.iter().sum()).collect();

    ConvGrads {
        input: Tensor::new([g.c_in, g.height, g.width], dx).expect("conv grad shape"),
        kernels: Tensor::new(kernels.shape().to_vec(), dk).expect("conv grad shape"),
        bias: Tensor::new([g.c_out], db).expect("conv grad shape"),
    }
}

/// Zero-padded, unit-stride cross-correlation that preserves spatial size.
pub fn conv2d_same(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    conv2d_forward(input, kernels, bias).map(|(out, _, _)| out)
}
