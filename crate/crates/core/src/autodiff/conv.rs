//! Convolution kernels built on im2col and a fixed-order GEMM.
//!
//! Every output element is accumulated in the same order (bias first, then
//! the reduction index ascending) regardless of blocking, so the encoder and
//! decoder evaluate bit-identical probabilities.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Geometry of a forward convolution over a `c_in×h×w` input.
    pub fn forward(c_in: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return None;
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Some(Self { c_in, h, w, kh, kw, stride, pad, oh, ow })
    }

    /// Geometry whose adjoint maps an `oh×ow` grid to the transposed-conv output.
    pub fn transposed(
        c_out: usize,
        ih: usize,
        iw: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Option<Self> {
        if stride == 0 || ih == 0 || iw == 0 {
            return None;
        }
        let h = ((ih - 1) * stride + kh + out_pad).checked_sub(2 * pad)?;
        let w = ((iw - 1) * stride + kw + out_pad).checked_sub(2 * pad)?;
        let g = Self { c_in: c_out, h, w, kh, kw, stride, pad, oh: ih, ow: iw };
        // the forward conv over h×w must land back on ih×iw
        let fwd = Self::forward(c_out, h, w, kh, kw, stride, pad)?;
        (fwd.oh == ih && fwd.ow == iw).then_some(g)
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn out_len(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds `input` (`c_in×h×w`) into a `patch_len × out_len` matrix.
pub fn im2col(input: &[f32], g: &ConvGeom) -> Vec<f32> {
    let n = g.out_len();
    let mut cols = vec![0.0f32; g.patch_len() * n];
    let pad = g.pad as isize;
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let d = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let (lo, hi) = valid_range(kx, g.stride, g.pad, g.w, g.ow);
                    if g.stride == 1 {
                        let off = lo + kx - g.pad;
                        d[lo..hi].copy_from_slice(&src[off..off + (hi - lo)]);
                    } else {
                        for ox in lo..hi {
                            d[ox] = src[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adds the folded columns back into `out` (`c_in×h×w`).
pub fn col2im(cols: &[f32], g: &ConvGeom, out: &mut [f32]) {
    let n = g.out_len();
    let pad = g.pad as isize;
    for c in 0..g.c_in {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let s = &src[oy * g.ow..(oy + 1) * g.ow];
                    let (lo, hi) = valid_range(kx, g.stride, g.pad, g.w, g.ow);
                    for ox in lo..hi {
                        dst[ox * g.stride + kx - g.pad] += s[ox];
                    }
                }
            }
        }
    }
}

/// Output columns `[lo, hi)` whose input column `ox*stride + kx - pad` is inside `0..w`.
fn valid_range(kx: usize, stride: usize, pad: usize, w: usize, ow: usize) -> (usize, usize) {
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    // largest ox with ox*stride + kx - pad <= w - 1
    let hi = if w + pad < kx + 1 { 0 } else { ((w + pad - kx - 1) / stride + 1).min(ow) };
    (lo.min(hi), hi)
}

/// `c[m×n] += a[m×k] · b[k×n]`, reduction index ascending for every element.
pub fn gemm_acc(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 {
        return;
    }
    let mut rows = c.chunks_exact_mut(n).enumerate().peekable();
    while let Some((i, c0)) = rows.next() {
        // four output rows share each load of b
        let extra: Vec<(usize, &mut [f32])> = (0..3).filter_map(|_| rows.next()).collect();
        match extra.len() {
            3 => {
                let mut it = extra.into_iter();
                let (_, c1) = it.next().unwrap();
                let (_, c2) = it.next().unwrap();
                let (_, c3) = it.next().unwrap();
                for kk in 0..k {
                    let a0 = a[i * k + kk];
                    let a1 = a[(i + 1) * k + kk];
                    let a2 = a[(i + 2) * k + kk];
                    let a3 = a[(i + 3) * k + kk];
                    let br = &b[kk * n..(kk + 1) * n];
                    for ((((bv, x0), x1), x2), x3) in
                        br.iter().zip(c0.iter_mut()).zip(c1.iter_mut()).zip(c2.iter_mut()).zip(c3.iter_mut())
                    {
                        *x0 += a0 * bv;
                        *x1 += a1 * bv;
                        *x2 += a2 * bv;
                        *x3 += a3 * bv;
                    }
                }
            }
            _ => {
                let mut all = vec![(i, c0)];
                all.extend(extra);
                for (r, cr) in all {
                    for kk in 0..k {
                        let av = a[r * k + kk];
                        let br = &b[kk * n..(kk + 1) * n];
                        for (x, bv) in cr.iter_mut().zip(br) {
                            *x += av * bv;
                        }
                    }
                }
            }
        }
    }
}

pub fn transpose(a: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut t = vec![0.0f32; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// Forward convolution: `kernel` is `c_out × c_in × kh × kw`.
pub fn conv2d_forward(input: &[f32], kernel: &[f32], bias: Option<&[f32]>, c_out: usize, g: &ConvGeom) -> Vec<f32> {
    let cols = im2col(input, g);
    let n = g.out_len();
    let mut out = vec![0.0f32; c_out * n];
    if let Some(b) = bias {
        for (row, &bv) in out.chunks_exact_mut(n).zip(b) {
            row.fill(bv);
        }
    }
    gemm_acc(kernel, &cols, &mut out, c_out, g.patch_len(), n);
    out
}

/// Gradient of a forward convolution with respect to its input.
pub fn conv2d_backward_input(grad_out: &[f32], kernel: &[f32], c_out: usize, g: &ConvGeom) -> Vec<f32> {
    let k = g.patch_len();
    let n = g.out_len();
    let kt = transpose(kernel, c_out, k);
    let mut gcols = vec![0.0f32; k * n];
    gemm_acc(&kt, grad_out, &mut gcols, k, c_out, n);
    let mut gin = vec![0.0f32; g.c_in * g.h * g.w];
    col2im(&gcols, g, &mut gin);
    gin
}

/// Gradient of a forward convolution with respect to its kernel.
pub fn conv2d_backward_kernel(grad_out: &[f32], input: &[f32], c_out: usize, g: &ConvGeom) -> Vec<f32> {
    let k = g.patch_len();
    let n = g.out_len();
    let cols_t = transpose(&im2col(input, g), k, n);
    let mut gk = vec![0.0f32; c_out * k];
    gemm_acc(grad_out, &cols_t, &mut gk, c_out, n, k);
    gk
}

pub fn bias_grad(grad_out: &[f32], c_out: usize) -> Vec<f32> {
    let n = grad_out.len() / c_out.max(1);
    grad_out.chunks_exact(n.max(1)).map(|r| r.iter().map(|&v| v as f64).sum::<f64>() as f32).collect()
}
