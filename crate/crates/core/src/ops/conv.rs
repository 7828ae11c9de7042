//! Regular 2D convolution (zero padding, odd kernels) and its exact
//! adjoint. Weights are laid out (outC, inC, kH, kW) row-major.

use crate::error::{Error, Result};
use crate::par::map_indexed;
use crate::tensor::Tensor;

pub fn conv2d_output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
) -> Result<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = input + 2 * padding;
    if padded < span {
        return Err(Error::ShapeMismatch(format!(
            "input extent {input} with padding {padding} is smaller than the \
             dilated kernel span {span}"
        )));
    }
    Ok((padded - span) / stride + 1)
}

fn validate(input: &Tensor, weights: &Tensor, bias: &[f64], stride: usize, dilation: usize) -> Result<()> {
    if stride == 0 || dilation == 0 {
        return Err(Error::InvalidArgument(
            "stride and dilation must be positive".into(),
        ));
    }
    let [_, in_c, _, _] = input.shape();
    let [out_c, w_in_c, kh, kw] = weights.shape();
    if w_in_c != in_c {
        return Err(Error::ShapeMismatch(format!(
            "weights expect {w_in_c} input channels, input has {in_c}"
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel extents must be odd, got {kh}x{kw}"
        )));
    }
    if bias.len() != out_c {
        return Err(Error::ShapeMismatch(format!(
            "bias has {} entries, weights produce {out_c} channels",
            bias.len()
        )));
    }
    Ok(())
}

pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    stride: usize,
    dilation: usize,
    padding: usize,
) -> Result<Tensor> {
    conv2d_general(input, weights, bias, stride, dilation, (padding, padding))
}

/// Convolution with independent vertical/horizontal padding, needed for
/// the factorized kx1 and 1xk kernels.
pub fn conv2d_general(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    stride: usize,
    dilation: usize,
    padding: (usize, usize),
) -> Result<Tensor> {
    validate(input, weights, bias, stride, dilation)?;
    let [n, in_c, h, w] = input.shape();
    let [out_c, _, kh, kw] = weights.shape();
    let oh = conv2d_output_extent(h, kh, stride, dilation, padding.0)?;
    let ow = conv2d_output_extent(w, kw, stride, dilation, padding.1)?;

    let wd = weights.data();
    let planes = map_indexed(n, |b| {
        let mut plane = vec![0.0; out_c * oh * ow];
        for oc in 0..out_c {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias[oc];
                    for ic in 0..in_c {
                        let xplane = input.plane(b, ic);
                        let wbase = ((oc * in_c + ic) * kh) * kw;
                        for ky in 0..kh {
                            let iy = (y * stride + ky * dilation) as isize - padding.0 as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (x * stride + kx * dilation) as isize - padding.1 as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += wd[wbase + ky * kw + kx]
                                    * xplane[iy as usize * w + ix as usize];
                            }
                        }
                    }
                    plane[(oc * oh + y) * ow + x] = acc;
                }
            }
        }
        plane
    });
    Tensor::from_vec([n, out_c, oh, ow], planes.concat())
}

/// Gradients of `conv2d` with respect to input, weights, and bias, given
/// the upstream gradient on the output.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    dilation: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    conv2d_backward_general(input, weights, stride, dilation, (padding, padding), grad_out)
}

pub fn conv2d_backward_general(
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    dilation: usize,
    padding: (usize, usize),
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let [n, in_c, h, w] = input.shape();
    let [out_c, _, kh, kw] = weights.shape();
    let [gn, goc, oh, ow] = grad_out.shape();
    if gn != n || goc != out_c {
        return Err(Error::ShapeMismatch(format!(
            "grad_out shape {:?} does not match ({n}, {out_c}, ..)",
            grad_out.shape()
        )));
    }
    let wd = weights.data();

    // Per-batch partials, combined in batch order so the result is
    // independent of scheduling.
    let parts = map_indexed(n, |b| {
        let mut gin = vec![0.0; in_c * h * w];
        let mut gw = vec![0.0; wd.len()];
        let mut gb = vec![0.0; out_c];
        for oc in 0..out_c {
            let gplane = grad_out.plane(b, oc);
            for y in 0..oh {
                for x in 0..ow {
                    let g = gplane[y * ow + x];
                    if g == 0.0 {
                        continue;
                    }
                    gb[oc] += g;
                    for ic in 0..in_c {
                        let xplane = input.plane(b, ic);
                        let wbase = ((oc * in_c + ic) * kh) * kw;
                        let gin_base = ic * h * w;
                        for ky in 0..kh {
                            let iy = (y * stride + ky * dilation) as isize - padding.0 as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (x * stride + kx * dilation) as isize - padding.1 as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let pix = iy as usize * w + ix as usize;
                                gw[wbase + ky * kw + kx] += g * xplane[pix];
                                gin[gin_base + pix] += g * wd[wbase + ky * kw + kx];
                            }
                        }
                    }
                }
            }
        }
        (gin, gw, gb)
    });

    let mut gin_all = Vec::with_capacity(n * in_c * h * w);
    let mut gw_total = vec![0.0; wd.len()];
    let mut gb_total = vec![0.0; out_c];
    for (gin, gw, gb) in parts {
        gin_all.extend_from_slice(&gin);
        for (t, v) in gw_total.iter_mut().zip(&gw) {
            *t += v;
        }
        for (t, v) in gb_total.iter_mut().zip(&gb) {
            *t += v;
        }
    }
    Ok((
        Tensor::from_vec([n, in_c, h, w], gin_all)?,
        Tensor::from_vec(weights.shape(), gw_total)?,
        gb_total,
    ))
}
