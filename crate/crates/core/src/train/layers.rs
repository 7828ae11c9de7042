//! Trainable layer primitives with cached forward state for the exact
//! backward pass. Parameters carry their optimizer state so one flat
//! walk over the network can apply updates.

use rand::Rng;

use crate::deform::{
    deformable_conv2d, deformable_conv2d_backward, factorized_rdc_1d,
    factorized_rdc_1d_backward, make_offset_layer, restricted_deformable_conv2d,
    restricted_deformable_conv2d_backward, Axis, DeformVariant, KernelGeometry,
};
use crate::error::{Error, Result};
use crate::ops::conv::{conv2d_backward_general, conv2d_general};
use crate::ops::norm::{batch_normalize, batch_normalize_backward, BnCache, Mode, NormStatistics};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
    OffsetWeight,
    OffsetBias,
}

impl ParamKind {
    pub fn is_offset(self) -> bool {
        matches!(self, ParamKind::OffsetWeight | ParamKind::OffsetBias)
    }

    /// Weight decay is applied to convolution weights only, not to
    /// biases or normalization scale/shift.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::OffsetWeight)
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub velocity: Vec<f64>,
    pub kind: ParamKind,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor, kind: ParamKind) -> Self {
        let len = value.len();
        Param {
            name: name.into(),
            value,
            grad: vec![0.0; len],
            velocity: vec![0.0; len],
            kind,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    fn accumulate(&mut self, delta: &[f64]) {
        for (g, d) in self.grad.iter_mut().zip(delta) {
            *g += d;
        }
    }
}

/// Xavier uniform initialization with fan-in/fan-out averaging.
pub fn xavier_init<R: Rng>(shape: [usize; 4], rng: &mut R) -> Tensor {
    let [out_c, in_c, kh, kw] = shape;
    let fan_in = (in_c * kh * kw) as f64;
    let fan_out = (out_c * kh * kw) as f64;
    let limit = (6.0 / (fan_in + fan_out)).sqrt();
    let data = (0..shape.iter().product())
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Regular convolution layer.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub weights: Param,
    pub bias: Param,
    pub stride: usize,
    pub dilation: usize,
    pub padding: (usize, usize),
    cache: Option<Tensor>,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        dilation: usize,
        padding: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let shape = [out_channels, in_channels, kernel.0, kernel.1];
        ConvLayer {
            weights: Param::new(format!("{name}.weight"), xavier_init(shape, rng), ParamKind::Weight),
            bias: Param::new(
                format!("{name}.bias"),
                Tensor::zeros([out_channels, 1, 1, 1]),
                ParamKind::Bias,
            ),
            stride,
            dilation,
            padding,
            cache: None,
        }
    }

    /// Zero-initialized offset-learning convolution for a deformable
    /// host layer.
    pub fn offset_layer(
        name: &str,
        in_channels: usize,
        geometry: &KernelGeometry,
        variant: DeformVariant,
    ) -> Self {
        let spec = make_offset_layer(in_channels, geometry, variant);
        let out_channels = spec.weights.shape()[0];
        ConvLayer {
            weights: Param::new(format!("{name}.weight"), spec.weights, ParamKind::OffsetWeight),
            bias: Param::new(
                format!("{name}.bias"),
                Tensor::zeros([out_channels, 1, 1, 1]),
                ParamKind::OffsetBias,
            ),
            stride: 1,
            dilation: spec.dilation,
            padding: spec.padding,
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor, train: bool) -> Result<Tensor> {
        let out = conv2d_general(
            input,
            &self.weights.value,
            self.bias.value.data(),
            self.stride,
            self.dilation,
            self.padding,
        )?;
        self.cache = train.then(|| input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("backward without cached forward".into()))?;
        let (gin, gw, gb) = conv2d_backward_general(
            input,
            &self.weights.value,
            self.stride,
            self.dilation,
            self.padding,
            grad_out,
        )?;
        self.weights.accumulate(gw.data());
        self.bias.accumulate(&gb);
        Ok(gin)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weights, &mut self.bias]
    }
}

/// A deformable convolution layer in one of the three variants, with its
/// zero-initialized offset-learning convolution.
#[derive(Debug, Clone)]
pub struct DeformLayer {
    pub variant: DeformVariant,
    pub geometry: KernelGeometry,
    pub axis: Option<Axis>,
    pub weights: Param,
    pub bias: Param,
    pub offset_conv: ConvLayer,
    cache: Option<(Tensor, Tensor)>,
}

impl DeformLayer {
    pub fn new<R: Rng>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geometry: KernelGeometry,
        variant: DeformVariant,
        rng: &mut R,
    ) -> Result<Self> {
        let (kh, kw) = geometry.kernel_extents();
        let axis = match variant {
            DeformVariant::Factorized => Some(if kw == 1 {
                Axis::Vertical
            } else if kh == 1 {
                Axis::Horizontal
            } else {
                return Err(Error::InvalidArgument(
                    "factorized variant requires a 1D kernel".into(),
                ));
            }),
            _ => None,
        };
        let shape = [out_channels, in_channels, kh, kw];
        Ok(DeformLayer {
            offset_conv: ConvLayer::offset_layer(
                &format!("{name}.offsets"),
                in_channels,
                &geometry,
                variant,
            ),
            variant,
            geometry,
            axis,
            weights: Param::new(format!("{name}.weight"), xavier_init(shape, rng), ParamKind::Weight),
            bias: Param::new(
                format!("{name}.bias"),
                Tensor::zeros([out_channels, 1, 1, 1]),
                ParamKind::Bias,
            ),
            cache: None,
        })
    }

    pub fn forward(&mut self, input: &Tensor, train: bool) -> Result<Tensor> {
        let offsets = self.offset_conv.forward(input, train)?;
        let out = match self.variant {
            DeformVariant::Deformable => deformable_conv2d(
                input,
                &self.weights.value,
                self.bias.value.data(),
                &offsets,
                &self.geometry,
            )?,
            DeformVariant::Restricted => restricted_deformable_conv2d(
                input,
                &self.weights.value,
                self.bias.value.data(),
                &offsets,
                &self.geometry,
            )?,
            DeformVariant::Factorized => factorized_rdc_1d(
                input,
                &self.weights.value,
                self.bias.value.data(),
                &offsets,
                self.axis.unwrap(),
                self.geometry.dilation(),
            )?,
        };
        self.cache = train.then(|| (input.clone(), offsets));
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (input, offsets) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("backward without cached forward".into()))?;
        let grads = match self.variant {
            DeformVariant::Deformable => deformable_conv2d_backward(
                input,
                &self.weights.value,
                self.bias.value.data(),
                offsets,
                &self.geometry,
                grad_out,
            )?,
            DeformVariant::Restricted => restricted_deformable_conv2d_backward(
                input,
                &self.weights.value,
                self.bias.value.data(),
                offsets,
                &self.geometry,
                grad_out,
            )?,
            DeformVariant::Factorized => factorized_rdc_1d_backward(
                input,
                &self.weights.value,
                self.bias.value.data(),
                offsets,
                self.axis.unwrap(),
                self.geometry.dilation(),
                grad_out,
            )?,
        };
        self.weights.accumulate(grads.weights.data());
        self.bias.accumulate(&grads.bias);
        // The offset field came from the offset convolution; continue the
        // chain and merge its input gradient with the sampler's.
        let mut gin = self.offset_conv.backward(&grads.offsets)?;
        for (a, b) in gin.data_mut().iter_mut().zip(grads.input.data()) {
            *a += b;
        }
        Ok(gin)
    }

    /// Mean absolute offset over the cached field, in pixels; a probe
    /// for how much deformation the layer has learned.
    pub fn cached_offset_mean_abs(&self) -> Option<f64> {
        let (_, offsets) = self.cache.as_ref()?;
        let sum: f64 = offsets.data().iter().map(|v| v.abs()).sum();
        Some(sum / offsets.len() as f64)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = vec![&mut self.weights, &mut self.bias];
        p.extend(self.offset_conv.params_mut());
        p
    }
}

/// Batch normalization with externally owned running statistics; the
/// layer owns only the learned scale and shift plus its slot id in the
/// domain bank.
#[derive(Debug, Clone)]
pub struct NormLayer {
    pub scale: Param,
    pub shift: Param,
    pub channels: usize,
    pub momentum: f64,
    pub slot: usize,
    cache: Option<BnCache>,
}

impl NormLayer {
    pub fn new(name: &str, channels: usize, momentum: f64, slot: usize) -> Self {
        NormLayer {
            scale: Param::new(
                format!("{name}.scale"),
                Tensor::full([channels, 1, 1, 1], 1.0),
                ParamKind::NormScale,
            ),
            shift: Param::new(
                format!("{name}.shift"),
                Tensor::zeros([channels, 1, 1, 1]),
                ParamKind::NormShift,
            ),
            channels,
            momentum,
            slot,
            cache: None,
        }
    }

    pub fn forward(
        &mut self,
        input: &Tensor,
        stats: &mut NormStatistics,
        mode: Mode,
    ) -> Result<Tensor> {
        let (out, cache) = batch_normalize(
            input,
            stats,
            self.scale.value.data(),
            self.shift.value.data(),
            mode,
            self.momentum,
        )?;
        self.cache = Some(cache);
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("backward without cached forward".into()))?;
        let (gin, gscale, gshift) = batch_normalize_backward(cache, grad_out)?;
        self.scale.accumulate(&gscale);
        self.shift.accumulate(&gshift);
        Ok(gin)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.scale, &mut self.shift]
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReluLayer {
    cache: Option<Tensor>,
}

impl ReluLayer {
    pub fn forward(&mut self, input: &Tensor, train: bool) -> Tensor {
        let out = crate::ops::activation::relu(input);
        self.cache = train.then(|| input.clone());
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("backward without cached forward".into()))?;
        crate::ops::activation::relu_backward(input, grad_out)
    }
}
