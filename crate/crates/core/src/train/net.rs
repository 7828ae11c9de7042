//! A small segmentation network for controlled experiments: a conv stem,
//! a configurable stack of downsampling and residual blocks where the
//! residual convolutions can be swapped for deformable variants, and
//! per-domain classifier heads (one main head and one auxiliary head per
//! domain, all sharing the trunk).

use rand::Rng;

use crate::deform::{DeformVariant, KernelGeometry};
use crate::error::{Error, Result};
use crate::ops::norm::Mode;
use crate::tensor::Tensor;
use crate::train::bank::DomainNormBank;
use crate::train::layers::{ConvLayer, DeformLayer, NormLayer, Param, ReluLayer};

pub const NORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Regular,
    Dc,
    Rdc,
    Frdc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockSpec {
    /// Strided 3x3 convolution halving the spatial extents.
    Downsample,
    Residual { variant: Variant, dilation: usize },
}

#[derive(Debug, Clone)]
pub struct ToyNetConfig {
    pub in_channels: usize,
    pub channels: usize,
    pub blocks: Vec<BlockSpec>,
    pub classes: usize,
    pub domains: usize,
    pub aux_channels: usize,
    /// Normalize the raw input through a bank slot before the stem, so
    /// per-domain running means track the domain input distribution.
    pub input_norm: bool,
}

impl ToyNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.channels == 0 {
            return Err(Error::InvalidArgument("channel counts must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidArgument("need at least two classes".into()));
        }
        if self.domains == 0 {
            return Err(Error::InvalidArgument("need at least one domain".into()));
        }
        if self.aux_channels == 0 {
            return Err(Error::InvalidArgument("aux_channels must be positive".into()));
        }
        let mut seen_down = false;
        for block in &self.blocks {
            match block {
                BlockSpec::Downsample => seen_down = true,
                BlockSpec::Residual { variant, dilation } => {
                    if *dilation == 0 {
                        return Err(Error::InvalidArgument("dilation must be positive".into()));
                    }
                    if *variant != Variant::Regular && !seen_down {
                        return Err(Error::InvalidArgument(
                            "deformable blocks must follow a downsampling block".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn output_stride(&self) -> usize {
        let downs = self
            .blocks
            .iter()
            .filter(|b| matches!(b, BlockSpec::Downsample))
            .count();
        1 << downs
    }
}

/// The first convolution of a residual block, in one of four shapes.
#[derive(Debug, Clone)]
enum BlockOp {
    Conv(ConvLayer),
    Deform(DeformLayer),
    /// FRDC factorizes the 3x3 into a vertical then a horizontal 1D
    /// restricted deformable convolution with a relu between them.
    FrdcPair {
        vertical: DeformLayer,
        relu: ReluLayer,
        horizontal: DeformLayer,
    },
}

impl BlockOp {
    fn forward(&mut self, input: &Tensor, train: bool) -> Result<Tensor> {
        match self {
            BlockOp::Conv(c) => c.forward(input, train),
            BlockOp::Deform(d) => d.forward(input, train),
            BlockOp::FrdcPair {
                vertical,
                relu,
                horizontal,
            } => {
                let v = vertical.forward(input, train)?;
                let a = relu.forward(&v, train);
                horizontal.forward(&a, train)
            }
        }
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        match self {
            BlockOp::Conv(c) => c.backward(grad_out),
            BlockOp::Deform(d) => d.backward(grad_out),
            BlockOp::FrdcPair {
                vertical,
                relu,
                horizontal,
            } => {
                let gh = horizontal.backward(grad_out)?;
                let gr = relu.backward(&gh)?;
                vertical.backward(&gr)
            }
        }
    }

    fn deform_layers(&self) -> Vec<&DeformLayer> {
        match self {
            BlockOp::Conv(_) => vec![],
            BlockOp::Deform(d) => vec![d],
            BlockOp::FrdcPair {
                vertical,
                horizontal,
                ..
            } => vec![vertical, horizontal],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            BlockOp::Conv(c) => c.params_mut(),
            BlockOp::Deform(d) => d.params_mut(),
            BlockOp::FrdcPair {
                vertical,
                horizontal,
                ..
            } => {
                let mut p = vertical.params_mut();
                p.extend(horizontal.params_mut());
                p
            }
        }
    }
}

#[derive(Debug, Clone)]
struct ResidualBlock {
    op1: BlockOp,
    norm1: NormLayer,
    relu1: ReluLayer,
    conv2: ConvLayer,
    norm2: NormLayer,
    relu_out: ReluLayer,
    skip_cache: Option<Tensor>,
}

impl ResidualBlock {
    fn forward(&mut self, input: &Tensor, stats: &mut DomainNormBank, domain: usize, mode: Mode, train: bool) -> Result<Tensor> {
        let a = self.op1.forward(input, train)?;
        let b = self
            .norm1
            .forward(&a, stats.stats_mut(domain, self.norm1.slot)?, mode)?;
        let c = self.relu1.forward(&b, train);
        let d = self.conv2.forward(&c, train)?;
        let mut e = self
            .norm2
            .forward(&d, stats.stats_mut(domain, self.norm2.slot)?, mode)?;
        if e.shape() != input.shape() {
            return Err(Error::ShapeMismatch(
                "residual branch changed the activation shape".into(),
            ));
        }
        for (v, s) in e.data_mut().iter_mut().zip(input.data()) {
            *v += s;
        }
        self.skip_cache = train.then(|| e.clone());
        Ok(self.relu_out.forward(&e, train))
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let g = self.relu_out.backward(grad_out)?;
        let ge = self.norm2.backward(&g)?;
        let gd = self.conv2.backward(&ge)?;
        let gc = self.relu1.backward(&gd)?;
        let gb = self.norm1.backward(&gc)?;
        let mut gin = self.op1.backward(&gb)?;
        // Skip connection adds the post-norm gradient straight through.
        for (a, b) in gin.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
        Ok(gin)
    }
}

#[derive(Debug, Clone)]
enum TrunkBlock {
    Down {
        conv: ConvLayer,
        norm: NormLayer,
        relu: ReluLayer,
    },
    Residual(ResidualBlock),
}

/// An auxiliary classifier branch: a shared 1x1 bottleneck followed by a
/// per-domain 1x1 classifier.
#[derive(Debug, Clone)]
struct AuxHead {
    bottleneck: ConvLayer,
    norm: NormLayer,
    relu: ReluLayer,
    classifiers: Vec<ConvLayer>,
}

#[derive(Debug, Clone)]
pub struct ToyNet {
    pub config: ToyNetConfig,
    input_norm: Option<NormLayer>,
    stem: ConvLayer,
    stem_norm: NormLayer,
    stem_relu: ReluLayer,
    blocks: Vec<TrunkBlock>,
    main_heads: Vec<ConvLayer>,
    aux: AuxHead,
    norm_channels: Vec<usize>,
    last_domain: Option<usize>,
}

impl ToyNet {
    pub fn new<R: Rng>(config: ToyNetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let ch = config.channels;
        let mut norm_channels = Vec::new();
        let mut slot = |c: usize| {
            norm_channels.push(c);
            norm_channels.len() - 1
        };

        let input_norm = config
            .input_norm
            .then(|| NormLayer::new("input_norm", config.in_channels, NORM_MOMENTUM, slot(config.in_channels)));
        let stem = ConvLayer::new("stem", config.in_channels, ch, (3, 3), 1, 1, (1, 1), rng);
        let stem_norm = NormLayer::new("stem.norm", ch, NORM_MOMENTUM, slot(ch));

        let mut blocks = Vec::new();
        for (i, spec) in config.blocks.iter().enumerate() {
            match spec {
                BlockSpec::Downsample => {
                    blocks.push(TrunkBlock::Down {
                        conv: ConvLayer::new(
                            &format!("block{i}.down"),
                            ch,
                            ch,
                            (3, 3),
                            2,
                            1,
                            (1, 1),
                            rng,
                        ),
                        norm: NormLayer::new(&format!("block{i}.norm"), ch, NORM_MOMENTUM, slot(ch)),
                        relu: ReluLayer::default(),
                    });
                }
                BlockSpec::Residual { variant, dilation } => {
                    let name = format!("block{i}");
                    let op1 = match variant {
                        Variant::Regular => BlockOp::Conv(ConvLayer::new(
                            &format!("{name}.conv1"),
                            ch,
                            ch,
                            (3, 3),
                            1,
                            *dilation,
                            (*dilation, *dilation),
                            rng,
                        )),
                        Variant::Dc | Variant::Rdc => {
                            let geometry = KernelGeometry::new(3, 3, *dilation)?;
                            let dv = if *variant == Variant::Dc {
                                DeformVariant::Deformable
                            } else {
                                DeformVariant::Restricted
                            };
                            BlockOp::Deform(DeformLayer::new(
                                &format!("{name}.deform1"),
                                ch,
                                ch,
                                geometry,
                                dv,
                                rng,
                            )?)
                        }
                        Variant::Frdc => {
                            let vg = KernelGeometry::new(3, 1, *dilation)?;
                            let hg = KernelGeometry::new(1, 3, *dilation)?;
                            BlockOp::FrdcPair {
                                vertical: DeformLayer::new(
                                    &format!("{name}.frdc_v"),
                                    ch,
                                    ch,
                                    vg,
                                    DeformVariant::Factorized,
                                    rng,
                                )?,
                                relu: ReluLayer::default(),
                                horizontal: DeformLayer::new(
                                    &format!("{name}.frdc_h"),
                                    ch,
                                    ch,
                                    hg,
                                    DeformVariant::Factorized,
                                    rng,
                                )?,
                            }
                        }
                    };
                    blocks.push(TrunkBlock::Residual(ResidualBlock {
                        op1,
                        norm1: NormLayer::new(&format!("{name}.norm1"), ch, NORM_MOMENTUM, slot(ch)),
                        relu1: ReluLayer::default(),
                        conv2: ConvLayer::new(
                            &format!("{name}.conv2"),
                            ch,
                            ch,
                            (3, 3),
                            1,
                            1,
                            (1, 1),
                            rng,
                        ),
                        norm2: NormLayer::new(&format!("{name}.norm2"), ch, NORM_MOMENTUM, slot(ch)),
                        relu_out: ReluLayer::default(),
                        skip_cache: None,
                    }));
                }
            }
        }

        let main_heads = (0..config.domains)
            .map(|d| {
                ConvLayer::new(
                    &format!("head{d}"),
                    ch,
                    config.classes,
                    (1, 1),
                    1,
                    1,
                    (0, 0),
                    rng,
                )
            })
            .collect();
        let aux = AuxHead {
            bottleneck: ConvLayer::new(
                "aux.bottleneck",
                ch,
                config.aux_channels,
                (1, 1),
                1,
                1,
                (0, 0),
                rng,
            ),
            norm: NormLayer::new("aux.norm", config.aux_channels, NORM_MOMENTUM, slot(config.aux_channels)),
            relu: ReluLayer::default(),
            classifiers: (0..config.domains)
                .map(|d| {
                    ConvLayer::new(
                        &format!("aux.head{d}"),
                        config.aux_channels,
                        config.classes,
                        (1, 1),
                        1,
                        1,
                        (0, 0),
                        rng,
                    )
                })
                .collect(),
        };

        Ok(ToyNet {
            config,
            input_norm,
            stem,
            stem_norm,
            stem_relu: ReluLayer::default(),
            blocks,
            main_heads,
            aux,
            norm_channels,
            last_domain: None,
        })
    }

    /// Per-slot channel counts, in slot order, for sizing a
    /// [`DomainNormBank`].
    pub fn norm_channels(&self) -> &[usize] {
        &self.norm_channels
    }

    pub fn output_stride(&self) -> usize {
        self.config.output_stride()
    }

    /// Runs the trunk and both heads for one domain. Train mode caches
    /// activations for [`ToyNet::backward`] and updates that domain's
    /// running statistics.
    pub fn domain_forward(
        &mut self,
        input: &Tensor,
        domain: usize,
        bank: &mut DomainNormBank,
        mode: Mode,
    ) -> Result<(Tensor, Tensor)> {
        if domain >= self.config.domains {
            return Err(Error::UnknownDomain(domain));
        }
        let train = mode == Mode::Train;
        let mut x = input.clone();
        if let Some(n) = &mut self.input_norm {
            x = n.forward(&x, bank.stats_mut(domain, n.slot)?, mode)?;
        }
        x = self.stem.forward(&x, train)?;
        x = self
            .stem_norm
            .forward(&x, bank.stats_mut(domain, self.stem_norm.slot)?, mode)?;
        x = self.stem_relu.forward(&x, train);
        for block in &mut self.blocks {
            x = match block {
                TrunkBlock::Down { conv, norm, relu } => {
                    let a = conv.forward(&x, train)?;
                    let b = norm.forward(&a, bank.stats_mut(domain, norm.slot)?, mode)?;
                    relu.forward(&b, train)
                }
                TrunkBlock::Residual(r) => r.forward(&x, bank, domain, mode, train)?,
            };
        }
        let main = self.main_heads[domain].forward(&x, train)?;
        let a = self.aux.bottleneck.forward(&x, train)?;
        let b = self
            .aux
            .norm
            .forward(&a, bank.stats_mut(domain, self.aux.norm.slot)?, mode)?;
        let c = self.aux.relu.forward(&b, train);
        let aux = self.aux.classifiers[domain].forward(&c, train)?;
        self.last_domain = train.then_some(domain);
        Ok((main, aux))
    }

    /// Backpropagates head gradients from the most recent train-mode
    /// forward pass, accumulating into every parameter's `grad`.
    pub fn backward(&mut self, grad_main: &Tensor, grad_aux: &Tensor) -> Result<()> {
        let domain = self.last_domain.ok_or_else(|| {
            Error::InvalidArgument("backward without a train-mode forward".into())
        })?;
        let mut g = self.main_heads[domain].backward(grad_main)?;
        let gc = self.aux.classifiers[domain].backward(grad_aux)?;
        let gb = self.aux.relu.backward(&gc)?;
        let ga = self.aux.norm.backward(&gb)?;
        let gx = self.aux.bottleneck.backward(&ga)?;
        for (a, b) in g.data_mut().iter_mut().zip(gx.data()) {
            *a += b;
        }
        for block in self.blocks.iter_mut().rev() {
            g = match block {
                TrunkBlock::Down { conv, norm, relu } => {
                    let gr = relu.backward(&g)?;
                    let gn = norm.backward(&gr)?;
                    conv.backward(&gn)?
                }
                TrunkBlock::Residual(r) => r.backward(&g)?,
            };
        }
        let gs = self.stem_relu.backward(&g)?;
        let gn = self.stem_norm.backward(&gs)?;
        let mut gi = self.stem.backward(&gn)?;
        if let Some(n) = &mut self.input_norm {
            gi = n.backward(&gi)?;
        }
        let _ = gi;
        Ok(())
    }

    /// All trainable parameters in a fixed construction order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        if let Some(n) = &mut self.input_norm {
            out.extend(n.params_mut());
        }
        out.extend(self.stem.params_mut());
        out.extend(self.stem_norm.params_mut());
        for block in &mut self.blocks {
            match block {
                TrunkBlock::Down { conv, norm, .. } => {
                    out.extend(conv.params_mut());
                    out.extend(norm.params_mut());
                }
                TrunkBlock::Residual(r) => {
                    out.extend(r.op1.params_mut());
                    out.extend(r.norm1.params_mut());
                    out.extend(r.conv2.params_mut());
                    out.extend(r.norm2.params_mut());
                }
            }
        }
        for head in &mut self.main_heads {
            out.extend(head.params_mut());
        }
        out.extend(self.aux.bottleneck.params_mut());
        out.extend(self.aux.norm.params_mut());
        for head in &mut self.aux.classifiers {
            out.extend(head.params_mut());
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Mean absolute learned offset over every deformable layer's cached
    /// offset field, if any exist and a forward pass has run.
    pub fn offset_mean_abs(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for block in &self.blocks {
            if let TrunkBlock::Residual(r) = block {
                for layer in r.op1.deform_layers() {
                    if let Some(m) = layer.cached_offset_mean_abs() {
                        sum += m;
                        count += 1;
                    }
                }
            }
        }
        (count > 0).then(|| sum / count as f64)
    }
}
