//! Deformable convolution (DC), restricted deformable convolution (RDC)
//! and factorized RDC (FRDC), all stride 1 with zero padding sized so the
//! output spatial extents equal the input's. Offsets are stored as a
//! (batch, offset_channels, H, W) tensor; per tap the vertical component
//! precedes the horizontal one.

use crate::error::{Error, Result};
use crate::ops::conv::conv2d_general;
use crate::par::map_indexed;
use crate::tensor::Tensor;

/// The regular sampling grid of one kernel: tap displacements relative to
/// the sliding position, already scaled by the dilation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelGeometry {
    kh: usize,
    kw: usize,
    dilation: usize,
    taps: Vec<(isize, isize)>,
    center: usize,
}

impl KernelGeometry {
    pub fn new(kh: usize, kw: usize, dilation: usize) -> Result<Self> {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel extents must be odd, got {kh}x{kw}"
            )));
        }
        if dilation == 0 {
            return Err(Error::InvalidArgument("dilation must be positive".into()));
        }
        let mut taps = Vec::with_capacity(kh * kw);
        for r in 0..kh {
            for c in 0..kw {
                taps.push((
                    (r as isize - (kh / 2) as isize) * dilation as isize,
                    (c as isize - (kw / 2) as isize) * dilation as isize,
                ));
            }
        }
        let center = (kh / 2) * kw + kw / 2;
        debug_assert_eq!(taps[center], (0, 0));
        Ok(KernelGeometry {
            kh,
            kw,
            dilation,
            taps,
            center,
        })
    }

    pub fn kernel_extents(&self) -> (usize, usize) {
        (self.kh, self.kw)
    }

    pub fn dilation(&self) -> usize {
        self.dilation
    }

    /// Number of taps N.
    pub fn tap_count(&self) -> usize {
        self.taps.len()
    }

    pub fn taps(&self) -> &[(isize, isize)] {
        &self.taps
    }

    pub fn center_index(&self) -> usize {
        self.center
    }

    /// Zero padding that keeps the output extents equal to the input's.
    pub fn same_padding(&self) -> (usize, usize) {
        (
            self.dilation * (self.kh - 1) / 2,
            self.dilation * (self.kw - 1) / 2,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeformVariant {
    /// All N taps carry learned 2D offsets.
    Deformable,
    /// Center tap pinned; the N−1 outer taps carry learned 2D offsets.
    Restricted,
    /// 1D kernel; outer taps carry one along-axis displacement each.
    Factorized,
}

/// Offset-field channel count the variant requires for this geometry.
pub fn offset_channels(variant: DeformVariant, geometry: &KernelGeometry) -> usize {
    let n = geometry.tap_count();
    match variant {
        DeformVariant::Deformable => 2 * n,
        DeformVariant::Restricted => 2 * (n - 1),
        DeformVariant::Factorized => n - 1,
    }
}

/// A fractional sampling position: `u` horizontal (width axis), `v`
/// vertical (height axis), in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePosition {
    pub u: f64,
    pub v: f64,
}

#[inline]
fn read(plane: &[f64], h: isize, w: isize, y: isize, x: isize) -> f64 {
    if y < 0 || y >= h || x < 0 || x >= w {
        0.0
    } else {
        plane[(y * w + x) as usize]
    }
}

/// Bilinear sample of one feature plane over an implicit zero field
/// outside the extents. Returns the value and its partials with respect
/// to (u, v); the cell is floor-based, so integer positions use the
/// right-continuous convention.
#[inline]
pub fn bilinear_sample_with_grad(
    plane: &[f64],
    height: usize,
    width: usize,
    pos: SamplePosition,
) -> (f64, f64, f64) {
    let (h, w) = (height as isize, width as isize);
    let u0 = pos.u.floor();
    let v0 = pos.v.floor();
    let du = pos.u - u0;
    let dv = pos.v - v0;
    let (x0, y0) = (u0 as isize, v0 as isize);
    let q00 = read(plane, h, w, y0, x0);
    let q01 = read(plane, h, w, y0, x0 + 1);
    let q10 = read(plane, h, w, y0 + 1, x0);
    let q11 = read(plane, h, w, y0 + 1, x0 + 1);
    let value = (1.0 - dv) * ((1.0 - du) * q00 + du * q01) + dv * ((1.0 - du) * q10 + du * q11);
    let d_du = (1.0 - dv) * (q01 - q00) + dv * (q11 - q10);
    let d_dv = (1.0 - du) * (q10 - q00) + du * (q11 - q01);
    (value, d_du, d_dv)
}

pub fn bilinear_sample(plane: &[f64], height: usize, width: usize, pos: SamplePosition) -> f64 {
    bilinear_sample_with_grad(plane, height, width, pos).0
}

/// Scatters `g` to the four neighbors of `pos` with the bilinear weights;
/// out-of-bounds neighbors are dropped (zero-field convention).
#[inline]
fn bilinear_scatter(plane: &mut [f64], height: usize, width: usize, pos: SamplePosition, g: f64) {
    let (h, w) = (height as isize, width as isize);
    let u0 = pos.u.floor();
    let v0 = pos.v.floor();
    let du = pos.u - u0;
    let dv = pos.v - v0;
    let (x0, y0) = (u0 as isize, v0 as isize);
    let mut add = |y: isize, x: isize, wgt: f64| {
        if y >= 0 && y < h && x >= 0 && x < w {
            plane[(y * w + x) as usize] += g * wgt;
        }
    };
    add(y0, x0, (1.0 - du) * (1.0 - dv));
    add(y0, x0 + 1, du * (1.0 - dv));
    add(y0 + 1, x0, (1.0 - du) * dv);
    add(y0 + 1, x0 + 1, du * dv);
}

/// Gradients produced by a deformable backward pass.
#[derive(Debug, Clone)]
pub struct DeformGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Vec<f64>,
    pub offsets: Tensor,
}

fn validate_deform(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    offsets: &Tensor,
    geometry: &KernelGeometry,
    restricted: bool,
) -> Result<()> {
    let [n, in_c, h, w] = input.shape();
    let [out_c, w_in_c, kh, kw] = weights.shape();
    if (kh, kw) != geometry.kernel_extents() {
        return Err(Error::ShapeMismatch(format!(
            "weights kernel {kh}x{kw} does not match geometry {:?}",
            geometry.kernel_extents()
        )));
    }
    if w_in_c != in_c {
        return Err(Error::ShapeMismatch(format!(
            "weights expect {w_in_c} input channels, input has {in_c}"
        )));
    }
    if bias.len() != out_c {
        return Err(Error::ShapeMismatch(format!(
            "bias has {} entries for {out_c} output channels",
            bias.len()
        )));
    }
    let variant = if restricted {
        DeformVariant::Restricted
    } else {
        DeformVariant::Deformable
    };
    let expected = offset_channels(variant, geometry);
    let [on, oc, oh, ow] = offsets.shape();
    if oc != expected {
        let n_taps = geometry.tap_count();
        if restricted && oc == 2 * n_taps {
            return Err(Error::ShapeMismatch(format!(
                "offset field has {oc} channels (the DC layout); RDC expects 2(N-1) = {expected}"
            )));
        }
        return Err(Error::ShapeMismatch(format!(
            "offset field has {oc} channels, expected {expected}"
        )));
    }
    if on != n || oh != h || ow != w {
        return Err(Error::ShapeMismatch(format!(
            "offset field {:?} does not match output extents ({n}, {expected}, {h}, {w})",
            offsets.shape()
        )));
    }
    Ok(())
}

/// Shared DC/RDC forward. For each tap the sample position is the sliding
/// position plus the grid displacement plus the learned offset; with
/// `restricted` the center tap reads the integer lattice directly and
/// carries no offset.
fn deform_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    offsets: &Tensor,
    geometry: &KernelGeometry,
    restricted: bool,
) -> Result<Tensor> {
    validate_deform(input, weights, bias, offsets, geometry, restricted)?;
    let [n, in_c, h, w] = input.shape();
    let [out_c, _, _, _] = weights.shape();
    let n_taps = geometry.tap_count();
    let center = geometry.center_index();
    let wd = weights.data();

    let planes = map_indexed(n, |b| {
        let mut out = vec![0.0; out_c * h * w];
        let mut samples = vec![0.0; in_c * n_taps];
        for y in 0..h {
            for x in 0..w {
                for (j, &(dy, dx)) in geometry.taps().iter().enumerate() {
                    if restricted && j == center {
                        for ic in 0..in_c {
                            samples[ic * n_taps + j] = input.plane(b, ic)[y * w + x];
                        }
                        continue;
                    }
                    let oj = if restricted && j > center { j - 1 } else { j };
                    let dv = offsets.at(b, 2 * oj, y, x);
                    let du = offsets.at(b, 2 * oj + 1, y, x);
                    let pos = SamplePosition {
                        u: x as f64 + dx as f64 + du,
                        v: y as f64 + dy as f64 + dv,
                    };
                    for ic in 0..in_c {
                        samples[ic * n_taps + j] =
                            bilinear_sample(input.plane(b, ic), h, w, pos);
                    }
                }
                for oc in 0..out_c {
                    let mut acc = bias[oc];
                    for ic in 0..in_c {
                        let wbase = (oc * in_c + ic) * n_taps;
                        for j in 0..n_taps {
                            acc += wd[wbase + j] * samples[ic * n_taps + j];
                        }
                    }
                    out[(oc * h + y) * w + x] = acc;
                }
            }
        }
        out
    });
    Tensor::from_vec([n, out_c, h, w], planes.concat())
}

fn deform_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    offsets: &Tensor,
    geometry: &KernelGeometry,
    restricted: bool,
    grad_out: &Tensor,
) -> Result<DeformGrads> {
    validate_deform(input, weights, bias, offsets, geometry, restricted)?;
    let [n, in_c, h, w] = input.shape();
    let [out_c, _, _, _] = weights.shape();
    if grad_out.shape() != [n, out_c, h, w] {
        return Err(Error::ShapeMismatch(format!(
            "grad_out shape {:?}, expected {:?}",
            grad_out.shape(),
            [n, out_c, h, w]
        )));
    }
    let n_taps = geometry.tap_count();
    let center = geometry.center_index();
    let off_c = offsets.channels();
    let wd = weights.data();

    let parts = map_indexed(n, |b| {
        let mut gin = vec![0.0; in_c * h * w];
        let mut gw = vec![0.0; wd.len()];
        let mut gb = vec![0.0; out_c];
        let mut goff = vec![0.0; off_c * h * w];
        for y in 0..h {
            for x in 0..w {
                for (j, &(dy, dx)) in geometry.taps().iter().enumerate() {
                    let (pos, oj) = if restricted && j == center {
                        (
                            SamplePosition {
                                u: x as f64,
                                v: y as f64,
                            },
                            usize::MAX,
                        )
                    } else {
                        let oj = if restricted && j > center { j - 1 } else { j };
                        let dv = offsets.at(b, 2 * oj, y, x);
                        let du = offsets.at(b, 2 * oj + 1, y, x);
                        (
                            SamplePosition {
                                u: x as f64 + dx as f64 + du,
                                v: y as f64 + dy as f64 + dv,
                            },
                            oj,
                        )
                    };
                    let mut g_dv = 0.0;
                    let mut g_du = 0.0;
                    for ic in 0..in_c {
                        // Adjoint of this tap's sample across all output
                        // channels.
                        let mut g_sample = 0.0;
                        for oc in 0..out_c {
                            g_sample += grad_out.plane(b, oc)[y * w + x]
                                * wd[(oc * in_c + ic) * n_taps + j];
                        }
                        if restricted && j == center {
                            // Integer read: gradient flows straight back.
                            gin[ic * h * w + y * w + x] += g_sample;
                            let value = input.plane(b, ic)[y * w + x];
                            for oc in 0..out_c {
                                gw[(oc * in_c + ic) * n_taps + j] +=
                                    grad_out.plane(b, oc)[y * w + x] * value;
                            }
                            continue;
                        }
                        let (value, d_du, d_dv) =
                            bilinear_sample_with_grad(input.plane(b, ic), h, w, pos);
                        for oc in 0..out_c {
                            gw[(oc * in_c + ic) * n_taps + j] +=
                                grad_out.plane(b, oc)[y * w + x] * value;
                        }
                        bilinear_scatter(
                            &mut gin[ic * h * w..(ic + 1) * h * w],
                            h,
                            w,
                            pos,
                            g_sample,
                        );
                        g_du += g_sample * d_du;
                        g_dv += g_sample * d_dv;
                    }
                    if oj != usize::MAX {
                        goff[(2 * oj * h + y) * w + x] += g_dv;
                        goff[((2 * oj + 1) * h + y) * w + x] += g_du;
                    }
                }
                for oc in 0..out_c {
                    gb[oc] += grad_out.plane(b, oc)[y * w + x];
                }
            }
        }
        (gin, gw, gb, goff)
    });

    let mut gin_all = Vec::with_capacity(n * in_c * h * w);
    let mut goff_all = Vec::with_capacity(n * off_c * h * w);
    let mut gw_total = vec![0.0; wd.len()];
    let mut gb_total = vec![0.0; out_c];
    for (gin, gw, gb, goff) in parts {
        gin_all.extend_from_slice(&gin);
        goff_all.extend_from_slice(&goff);
        for (t, v) in gw_total.iter_mut().zip(&gw) {
            *t += v;
        }
        for (t, v) in gb_total.iter_mut().zip(&gb) {
            *t += v;
        }
    }
    Ok(DeformGrads {
        input: Tensor::from_vec([n, in_c, h, w], gin_all)?,
        weights: Tensor::from_vec(weights.shape(), gw_total)?,
        bias: gb_total,
        offsets: Tensor::from_vec([n, off_c, h, w], goff_all)?,
    })
}

pub fn deformable_conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    offsets: &Tensor,
    geometry: &KernelGeometry,
) -> Result<Tensor> {
    deform_forward(input, weights, bias, offsets, geometry, false)
}

pub fn deformable_conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    offsets: &Tensor,
    geometry: &KernelGeometry,
    grad_out: &Tensor,
) -> Result<DeformGrads> {
    deform_backward(input, weights, bias, offsets, geometry, false, grad_out)
}

pub fn restricted_deformable_conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    offsets: &Tensor,
    geometry: &KernelGeometry,
) -> Result<Tensor> {
    deform_forward(input, weights, bias, offsets, geometry, true)
}

pub fn restricted_deformable_conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    offsets: &Tensor,
    geometry: &KernelGeometry,
    grad_out: &Tensor,
) -> Result<DeformGrads> {
    deform_backward(input, weights, bias, offsets, geometry, true, grad_out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Vertical,
    Horizontal,
}

fn validate_frdc(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    axis_offsets: &Tensor,
    axis: Axis,
) -> Result<usize> {
    let [n, in_c, h, w] = input.shape();
    let [out_c, w_in_c, kh, kw] = weights.shape();
    let k = match axis {
        Axis::Vertical => {
            if kw != 1 || kh % 2 == 0 {
                return Err(Error::InvalidArgument(format!(
                    "vertical factorized kernel must be kx1 with odd k, got {kh}x{kw}"
                )));
            }
            kh
        }
        Axis::Horizontal => {
            if kh != 1 || kw % 2 == 0 {
                return Err(Error::InvalidArgument(format!(
                    "horizontal factorized kernel must be 1xk with odd k, got {kh}x{kw}"
                )));
            }
            kw
        }
    };
    if w_in_c != in_c {
        return Err(Error::ShapeMismatch(format!(
            "weights expect {w_in_c} input channels, input has {in_c}"
        )));
    }
    if bias.len() != out_c {
        return Err(Error::ShapeMismatch(format!(
            "bias has {} entries for {out_c} output channels",
            bias.len()
        )));
    }
    let [on, oc, oh, ow] = axis_offsets.shape();
    if oc == 2 * (k - 1) {
        return Err(Error::ShapeMismatch(format!(
            "axis offsets have {oc} channels (a 2D layout); FRDC expects k-1 = {}",
            k - 1
        )));
    }
    if oc != k - 1 {
        return Err(Error::ShapeMismatch(format!(
            "axis offsets have {oc} channels, expected k-1 = {}",
            k - 1
        )));
    }
    if on != n || oh != h || ow != w {
        return Err(Error::ShapeMismatch(format!(
            "axis offset field {:?} does not match output extents",
            axis_offsets.shape()
        )));
    }
    Ok(k)
}

/// Samples a plane along one axis at a fractional coordinate, the
/// degenerate 1D case of the bilinear form. Returns value and its
/// derivative along the axis.
#[inline]
fn linear_sample_axis(
    plane: &[f64],
    h: usize,
    w: usize,
    y: f64,
    x: f64,
    axis: Axis,
) -> (f64, f64) {
    let (hi, wi) = (h as isize, w as isize);
    match axis {
        Axis::Vertical => {
            let y0 = y.floor();
            let t = y - y0;
            let yi = y0 as isize;
            let xi = x as isize;
            let a = read(plane, hi, wi, yi, xi);
            let b = read(plane, hi, wi, yi + 1, xi);
            ((1.0 - t) * a + t * b, b - a)
        }
        Axis::Horizontal => {
            let x0 = x.floor();
            let t = x - x0;
            let xi = x0 as isize;
            let yi = y as isize;
            let a = read(plane, hi, wi, yi, xi);
            let b = read(plane, hi, wi, yi, xi + 1);
            ((1.0 - t) * a + t * b, b - a)
        }
    }
}

/// FRDC forward: a 1D restricted deformable convolution where each outer
/// tap is displaced only along the kernel's own axis by a learned
/// scalar, an adaptively learned dilation.
pub fn factorized_rdc_1d(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    axis_offsets: &Tensor,
    axis: Axis,
    dilation: usize,
) -> Result<Tensor> {
    let k = validate_frdc(input, weights, bias, axis_offsets, axis)?;
    let [n, in_c, h, w] = input.shape();
    let [out_c, _, _, _] = weights.shape();
    let wd = weights.data();
    let half = (k / 2) as isize;

    let planes = map_indexed(n, |b| {
        let mut out = vec![0.0; out_c * h * w];
        let mut samples = vec![0.0; in_c * k];
        for y in 0..h {
            for x in 0..w {
                for j in 0..k {
                    let grid = (j as isize - half) * dilation as isize;
                    if grid == 0 {
                        for ic in 0..in_c {
                            samples[ic * k + j] = input.plane(b, ic)[y * w + x];
                        }
                        continue;
                    }
                    let oj = if j > k / 2 { j - 1 } else { j };
                    let t = axis_offsets.at(b, oj, y, x);
                    let (sy, sx) = match axis {
                        Axis::Vertical => (y as f64 + grid as f64 + t, x as f64),
                        Axis::Horizontal => (y as f64, x as f64 + grid as f64 + t),
                    };
                    for ic in 0..in_c {
                        samples[ic * k + j] =
                            linear_sample_axis(input.plane(b, ic), h, w, sy, sx, axis).0;
                    }
                }
                for oc in 0..out_c {
                    let mut acc = bias[oc];
                    for ic in 0..in_c {
                        let wbase = (oc * in_c + ic) * k;
                        for j in 0..k {
                            acc += wd[wbase + j] * samples[ic * k + j];
                        }
                    }
                    out[(oc * h + y) * w + x] = acc;
                }
            }
        }
        out
    });
    Tensor::from_vec([n, out_c, h, w], planes.concat())
}

pub fn factorized_rdc_1d_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    axis_offsets: &Tensor,
    axis: Axis,
    dilation: usize,
    grad_out: &Tensor,
) -> Result<DeformGrads> {
    let k = validate_frdc(input, weights, bias, axis_offsets, axis)?;
    let [n, in_c, h, w] = input.shape();
    let [out_c, _, _, _] = weights.shape();
    if grad_out.shape() != [n, out_c, h, w] {
        return Err(Error::ShapeMismatch(format!(
            "grad_out shape {:?}, expected {:?}",
            grad_out.shape(),
            [n, out_c, h, w]
        )));
    }
    let wd = weights.data();
    let half = (k / 2) as isize;
    let off_c = k - 1;

    let parts = map_indexed(n, |b| {
        let mut gin = vec![0.0; in_c * h * w];
        let mut gw = vec![0.0; wd.len()];
        let mut gb = vec![0.0; out_c];
        let mut goff = vec![0.0; off_c * h * w];
        for y in 0..h {
            for x in 0..w {
                for j in 0..k {
                    let grid = (j as isize - half) * dilation as isize;
                    let center = grid == 0;
                    let oj = if j > k / 2 { j - 1 } else { j };
                    let (sy, sx) = if center {
                        (y as f64, x as f64)
                    } else {
                        let t = axis_offsets.at(b, oj, y, x);
                        match axis {
                            Axis::Vertical => (y as f64 + grid as f64 + t, x as f64),
                            Axis::Horizontal => (y as f64, x as f64 + grid as f64 + t),
                        }
                    };
                    let mut g_t = 0.0;
                    for ic in 0..in_c {
                        let mut g_sample = 0.0;
                        for oc in 0..out_c {
                            g_sample += grad_out.plane(b, oc)[y * w + x]
                                * wd[(oc * in_c + ic) * k + j];
                        }
                        let (value, d_axis) = if center {
                            (input.plane(b, ic)[y * w + x], 0.0)
                        } else {
                            linear_sample_axis(input.plane(b, ic), h, w, sy, sx, axis)
                        };
                        for oc in 0..out_c {
                            gw[(oc * in_c + ic) * k + j] +=
                                grad_out.plane(b, oc)[y * w + x] * value;
                        }
                        if center {
                            gin[ic * h * w + y * w + x] += g_sample;
                        } else {
                            // Linear interpolation scatters to two
                            // neighbors along the axis.
                            let gplane = &mut gin[ic * h * w..(ic + 1) * h * w];
                            let (hi, wi) = (h as isize, w as isize);
                            match axis {
                                Axis::Vertical => {
                                    let y0 = sy.floor();
                                    let t = sy - y0;
                                    let yi = y0 as isize;
                                    let xi = sx as isize;
                                    if yi >= 0 && yi < hi {
                                        gplane[yi as usize * w + xi as usize] +=
                                            g_sample * (1.0 - t);
                                    }
                                    if yi + 1 >= 0 && yi + 1 < hi {
                                        gplane[(yi + 1) as usize * w + xi as usize] +=
                                            g_sample * t;
                                    }
                                }
                                Axis::Horizontal => {
                                    let x0 = sx.floor();
                                    let t = sx - x0;
                                    let xi = x0 as isize;
                                    let yi = sy as isize;
                                    if xi >= 0 && xi < wi {
                                        gplane[yi as usize * w + xi as usize] +=
                                            g_sample * (1.0 - t);
                                    }
                                    if xi + 1 >= 0 && xi + 1 < wi {
                                        gplane[yi as usize * w + (xi + 1) as usize] +=
                                            g_sample * t;
                                    }
                                }
                            }
                            g_t += g_sample * d_axis;
                        }
                    }
                    if !center {
                        goff[(oj * h + y) * w + x] += g_t;
                    }
                }
                for oc in 0..out_c {
                    gb[oc] += grad_out.plane(b, oc)[y * w + x];
                }
            }
        }
        (gin, gw, gb, goff)
    });

    let mut gin_all = Vec::with_capacity(n * in_c * h * w);
    let mut goff_all = Vec::with_capacity(n * off_c * h * w);
    let mut gw_total = vec![0.0; wd.len()];
    let mut gb_total = vec![0.0; out_c];
    for (gin, gw, gb, goff) in parts {
        gin_all.extend_from_slice(&gin);
        goff_all.extend_from_slice(&goff);
        for (t, v) in gw_total.iter_mut().zip(&gw) {
            *t += v;
        }
        for (t, v) in gb_total.iter_mut().zip(&gb) {
            *t += v;
        }
    }
    Ok(DeformGrads {
        input: Tensor::from_vec([n, in_c, h, w], gin_all)?,
        weights: Tensor::from_vec(weights.shape(), gw_total)?,
        bias: gb_total,
        offsets: Tensor::from_vec([n, off_c, h, w], goff_all)?,
    })
}

/// A zero-initialized regular convolution layer that learns the offset
/// field from the host layer's input; same kernel extents, dilation and
/// padding as the host, so the offset spatial extents match the output.
#[derive(Debug, Clone)]
pub struct OffsetLayerSpec {
    pub weights: Tensor,
    pub bias: Vec<f64>,
    pub dilation: usize,
    pub padding: (usize, usize),
}

pub fn make_offset_layer(
    in_channels: usize,
    geometry: &KernelGeometry,
    variant: DeformVariant,
) -> OffsetLayerSpec {
    let out_channels = offset_channels(variant, geometry);
    let (kh, kw) = geometry.kernel_extents();
    OffsetLayerSpec {
        weights: Tensor::zeros([out_channels, in_channels, kh, kw]),
        bias: vec![0.0; out_channels],
        dilation: geometry.dilation(),
        padding: geometry.same_padding(),
    }
}

impl OffsetLayerSpec {
    /// Runs the offset-learning convolution over the host input.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        conv2d_general(input, &self.weights, &self.bias, 1, self.dilation, self.padding)
    }
}
