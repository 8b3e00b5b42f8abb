//! Forward/backward compute kernels shared by the graph.
//!
//! Convolution is cross-correlation with stride 1 and zero padding of
//! (K-1)/2, implemented as im2col plus a single-threaded sgemm so the
//! training loop stays fast on one core. The quadruple-loop definition it
//! must match lives in the tests as an independent oracle.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) struct ConvDims {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
}

pub(crate) fn conv_dims(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<ConvDims> {
    let ishape = input.shape();
    let kshape = kernel.shape();
    if ishape.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "conv2d input must be NCHW, got {ishape:?}"
        )));
    }
    if kshape.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "conv2d kernel must be OIKhKw, got {kshape:?}"
        )));
    }
    let (n, ci, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let (co, ki, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
    if ki != ci {
        return Err(Error::ShapeMismatch(format!(
            "conv2d channel mismatch: input has {ci} channels, kernel expects {ki}"
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::ShapeMismatch(format!(
            "conv2d kernel spatial size must be odd, got {kh}x{kw}"
        )));
    }
    if bias.numel() != co {
        return Err(Error::ShapeMismatch(format!(
            "conv2d bias length {} != output channels {co}",
            bias.numel()
        )));
    }
    Ok(ConvDims {
        n,
        ci,
        h,
        w,
        co,
        kh,
        kw,
    })
}

/// Expands one batch item into a (ci*kh*kw) x (h*w) patch matrix with zero
/// padding, copying contiguous spans per row.
fn im2col(input: &[f32], d: &ConvDims, cols: &mut [f32]) {
    let (h, w) = (d.h, d.w);
    let (pad_y, pad_x) = (d.kh / 2, d.kw / 2);
    let hw = h * w;
    debug_assert_eq!(cols.len(), d.ci * d.kh * d.kw * hw);
    let mut row = 0;
    for ic in 0..d.ci {
        let plane = &input[ic * hw..(ic + 1) * hw];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let dst_base = row * hw;
                // x + kx - pad_x must land in [0, w)
                let x0 = pad_x.saturating_sub(kx);
                let x1 = (w + pad_x).saturating_sub(kx).min(w);
                for y in 0..h {
                    let dst = &mut cols[dst_base + y * w..dst_base + (y + 1) * w];
                    let iy = y as isize + ky as isize - pad_y as isize;
                    if iy < 0 || iy >= h as isize || x0 >= x1 {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    dst[..x0].fill(0.0);
                    let sx0 = x0 + kx - pad_x;
                    dst[x0..x1].copy_from_slice(&src_row[sx0..sx0 + (x1 - x0)]);
                    dst[x1..].fill(0.0);
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds a (ci*kh*kw) x (h*w) patch-gradient matrix back into an
/// input-gradient plane (the transpose of `im2col`).
fn col2im_accumulate(cols: &[f32], d: &ConvDims, grad_input: &mut [f32]) {
    let (h, w) = (d.h, d.w);
    let (pad_y, pad_x) = (d.kh / 2, d.kw / 2);
    let hw = h * w;
    let mut row = 0;
    for ic in 0..d.ci {
        let plane = &mut grad_input[ic * hw..(ic + 1) * hw];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let src_base = row * hw;
                let x0 = pad_x.saturating_sub(kx);
                let x1 = (w + pad_x).saturating_sub(kx).min(w);
                for y in 0..h {
                    let iy = y as isize + ky as isize - pad_y as isize;
                    if iy < 0 || iy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let src = &cols[src_base + y * w + x0..src_base + y * w + x1];
                    let sx0 = x0 + kx - pad_x;
                    let dst = &mut plane[iy as usize * w + sx0..iy as usize * w + sx0 + (x1 - x0)];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
                row += 1;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (isize, isize),
) {
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

pub(crate) fn conv2d_fwd(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = conv_dims(input, kernel, bias)?;
    let hw = d.h * d.w;
    let kdim = d.ci * d.kh * d.kw;
    let mut out = Tensor::zeros(&[d.n, d.co, d.h, d.w]);
    let mut cols = vec![0.0f32; kdim * hw];
    for b in 0..d.n {
        let in_item = &input.data()[b * d.ci * hw..(b + 1) * d.ci * hw];
        im2col(in_item, &d, &mut cols);
        let out_item = &mut out.data_mut()[b * d.co * hw..(b + 1) * d.co * hw];
        sgemm(
            d.co,
            kdim,
            hw,
            kernel.data(),
            (kdim as isize, 1),
            &cols,
            (hw as isize, 1),
            0.0,
            out_item,
            (hw as isize, 1),
        );
        for oc in 0..d.co {
            let bv = bias.data()[oc];
            if bv != 0.0 {
                for v in &mut out_item[oc * hw..(oc + 1) * hw] {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn conv2d_bwd(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
    need_input: bool,
    need_kernel: bool,
    need_bias: bool,
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let d = conv_dims(input, kernel, bias).expect("shapes validated at forward");
    let hw = d.h * d.w;
    let kdim = d.ci * d.kh * d.kw;

    let mut grad_input = need_input.then(|| Tensor::zeros(input.shape()));
    let mut grad_kernel = need_kernel.then(|| Tensor::zeros(kernel.shape()));
    let mut grad_bias = need_bias.then(|| Tensor::zeros(&[d.co]));

    let mut cols = vec![0.0f32; kdim * hw];
    let mut dcols = vec![0.0f32; kdim * hw];
    for b in 0..d.n {
        let go_item = &grad_out.data()[b * d.co * hw..(b + 1) * d.co * hw];
        if need_kernel {
            let in_item = &input.data()[b * d.ci * hw..(b + 1) * d.ci * hw];
            im2col(in_item, &d, &mut cols);
            // dK += dY * cols^T, accumulated over the batch
            sgemm(
                d.co,
                hw,
                kdim,
                go_item,
                (hw as isize, 1),
                &cols,
                (1, hw as isize),
                1.0,
                grad_kernel.as_mut().unwrap().data_mut(),
                (kdim as isize, 1),
            );
        }
        if need_input {
            // dcols = K^T * dY, then scatter back
            sgemm(
                kdim,
                d.co,
                hw,
                kernel.data(),
                (1, kdim as isize),
                go_item,
                (hw as isize, 1),
                0.0,
                &mut dcols,
                (hw as isize, 1),
            );
            let gi_item =
                &mut grad_input.as_mut().unwrap().data_mut()[b * d.ci * hw..(b + 1) * d.ci * hw];
            col2im_accumulate(&dcols, &d, gi_item);
        }
        if need_bias {
            let gb = grad_bias.as_mut().unwrap().data_mut();
            for oc in 0..d.co {
                let mut acc = 0.0f32;
                for v in &go_item[oc * hw..(oc + 1) * hw] {
                    acc += v;
                }
                gb[oc] += acc;
            }
        }
    }
    (grad_input, grad_kernel, grad_bias)
}

/// Direct quadruple-loop cross-correlation. Slow; kept public so tests and
/// diagnostics can cross-check the fast path against the definition.
pub fn conv2d_reference(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = conv_dims(input, kernel, bias)?;
    let (pad_y, pad_x) = (d.kh / 2, d.kw / 2);
    let hw = d.h * d.w;
    let mut out = Tensor::zeros(&[d.n, d.co, d.h, d.w]);
    for b in 0..d.n {
        for oc in 0..d.co {
            for y in 0..d.h {
                for x in 0..d.w {
                    let mut acc = bias.data()[oc];
                    for ic in 0..d.ci {
                        for ky in 0..d.kh {
                            for kx in 0..d.kw {
                                let iy = y as isize + ky as isize - pad_y as isize;
                                let ix = x as isize + kx as isize - pad_x as isize;
                                if iy < 0 || iy >= d.h as isize || ix < 0 || ix >= d.w as isize {
                                    continue;
                                }
                                let iv = input.data()
                                    [((b * d.ci + ic) * d.h + iy as usize) * d.w + ix as usize];
                                let kv = kernel.data()[((oc * d.ci + ic) * d.kh + ky) * d.kw + kx];
                                acc += iv * kv;
                            }
                        }
                    }
                    out.data_mut()[(b * d.co + oc) * hw + y * d.w + x] = acc;
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn pixel_shuffle_fwd(input: &Tensor, scale: usize) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "pixel_shuffle input must be NCHW, got {shape:?}"
        )));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let s2 = scale * scale;
    if c % s2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "pixel_shuffle: channels {c} not divisible by {scale}^2"
        )));
    }
    let c_out = c / s2;
    let mut out = Tensor::zeros(&[n, c_out, h * scale, w * scale]);
    let (oh, ow) = (h * scale, w * scale);
    for b in 0..n {
        for oc in 0..c_out {
            for dy in 0..scale {
                for dx in 0..scale {
                    let ic = oc * s2 + dy * scale + dx;
                    for y in 0..h {
                        for x in 0..w {
                            let v = input.data()[((b * c + ic) * h + y) * w + x];
                            out.data_mut()
                                [((b * c_out + oc) * oh + y * scale + dy) * ow + x * scale + dx] =
                                v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse permutation of `pixel_shuffle_fwd`.
pub(crate) fn pixel_shuffle_bwd(grad_out: &Tensor, scale: usize, input_shape: &[usize]) -> Tensor {
    let (n, c, h, w) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let s2 = scale * scale;
    let c_out = c / s2;
    let (oh, ow) = (h * scale, w * scale);
    let mut grad_in = Tensor::zeros(input_shape);
    for b in 0..n {
        for oc in 0..c_out {
            for dy in 0..scale {
                for dx in 0..scale {
                    let ic = oc * s2 + dy * scale + dx;
                    for y in 0..h {
                        for x in 0..w {
                            let v = grad_out.data()
                                [((b * c_out + oc) * oh + y * scale + dy) * ow + x * scale + dx];
                            grad_in.data_mut()[((b * c + ic) * h + y) * w + x] = v;
                        }
                    }
                }
            }
        }
    }
    grad_in
}
