//! Declarative layer stacks and their shape and parameter arithmetic.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::domain::DOMAINS;
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::kernels::ConvGeom;
use crate::tensor::Tensor;

/// Standard deviation of the normal initializer for kernels and weights.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Dense {
        out: usize,
    },
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    ConvTranspose {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Block {
    pub kind: LayerKind,
    pub batch_norm: bool,
    pub activation: Activation,
}

impl Block {
    pub fn new(kind: LayerKind, batch_norm: bool, activation: Activation) -> Self {
        Block {
            kind,
            batch_norm,
            activation,
        }
    }
}

/// Per-sample shape (batch axis excluded).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleShape {
    Flat(usize),
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl SampleShape {
    pub fn numel(&self) -> usize {
        match *self {
            SampleShape::Flat(n) => n,
            SampleShape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    /// Full tensor dims for a batch of `b`.
    pub fn batch_dims(&self, b: usize) -> Vec<usize> {
        match *self {
            SampleShape::Flat(n) => vec![b, n],
            SampleShape::Image {
                channels,
                height,
                width,
            } => vec![b, channels, height, width],
        }
    }

    /// Sample shape after the domain one-hot is appended.
    pub fn injected(&self) -> SampleShape {
        match *self {
            SampleShape::Flat(n) => SampleShape::Flat(n + DOMAINS),
            SampleShape::Image {
                channels,
                height,
                width,
            } => SampleShape::Image {
                channels: channels + DOMAINS,
                height,
                width,
            },
        }
    }

    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        match dims {
            [_, n] => Ok(SampleShape::Flat(*n)),
            [_, c, h, w] => Ok(SampleShape::Image {
                channels: *c,
                height: *h,
                width: *w,
            }),
            _ => Err(Error::InvalidShape(format!("no sample shape for {dims:?}"))),
        }
    }
}

impl fmt::Display for SampleShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleShape::Flat(n) => write!(f, "{n}"),
            SampleShape::Image {
                channels,
                height,
                width,
            } => write!(f, "{channels}x{height}x{width}"),
        }
    }
}

/// (suffix, dims) of each parameter tensor.
type ParamShapes = Vec<(&'static str, Vec<usize>)>;

/// Parameter tensors of one block.
fn block_params(block: &Block, input: SampleShape) -> Result<(SampleShape, ParamShapes)> {
    let (out, mut params) = match (block.kind, input) {
        (LayerKind::Dense { out }, inp) => (
            SampleShape::Flat(out),
            vec![("kernel", vec![inp.numel(), out]), ("bias", vec![out])],
        ),
        (
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                pad,
            },
            SampleShape::Image {
                channels,
                height,
                width,
            },
        ) => {
            let h = ConvGeom::out_extent(height, kernel, stride, pad);
            let w = ConvGeom::out_extent(width, kernel, stride, pad);
            let (Some(h), Some(w)) = (h, w) else {
                return Err(Error::Geometry(format!(
                    "conv k{kernel} s{stride} p{pad} on {height}×{width}"
                )));
            };
            (
                SampleShape::Image {
                    channels: out_channels,
                    height: h,
                    width: w,
                },
                vec![
                    ("kernel", vec![out_channels, channels, kernel, kernel]),
                    ("bias", vec![out_channels]),
                ],
            )
        }
        (
            LayerKind::ConvTranspose {
                out_channels,
                kernel,
                stride,
                pad,
            },
            SampleShape::Image {
                channels,
                height,
                width,
            },
        ) => {
            let h = ConvGeom::transpose_extent(height, kernel, stride, pad);
            let w = ConvGeom::transpose_extent(width, kernel, stride, pad);
            let (Some(h), Some(w)) = (h, w) else {
                return Err(Error::Geometry(format!(
                    "transposed conv k{kernel} s{stride} p{pad} on {height}×{width}"
                )));
            };
            (
                SampleShape::Image {
                    channels: out_channels,
                    height: h,
                    width: w,
                },
                vec![
                    ("kernel", vec![channels, out_channels, kernel, kernel]),
                    ("bias", vec![out_channels]),
                ],
            )
        }
        (kind, SampleShape::Flat(_)) => {
            return Err(Error::Geometry(format!("{kind:?} needs an image input")));
        }
    };
    if block.batch_norm {
        let c = match out {
            SampleShape::Flat(n) => n,
            SampleShape::Image { channels, .. } => channels,
        };
        params.push(("bn_scale", vec![c]));
        params.push(("bn_shift", vec![c]));
    }
    Ok((out, params))
}

/// Parameter layout of a whole stack: (full name, dims) in construction order.
pub(crate) type Layout = Vec<(String, Vec<usize>)>;

fn stack_layout(
    prefix: &str,
    blocks: &[Block],
    input: SampleShape,
    inject_every: bool,
) -> Result<(Vec<SampleShape>, Layout)> {
    let mut shapes = Vec::with_capacity(blocks.len());
    let mut layout = Vec::new();
    let mut cur = input;
    for (i, block) in blocks.iter().enumerate() {
        let inp = if inject_every || i == 0 { cur.injected() } else { cur };
        let (out, params) = block_params(block, inp)?;
        for (suffix, dims) in params {
            layout.push((format!("{prefix}.layer{i}.{suffix}"), dims));
        }
        shapes.push(out);
        cur = out;
    }
    Ok((shapes, layout))
}

/// Initializes a layout: kernels ~ N(0, 0.02), biases and shifts 0, scales 1.
pub(crate) fn init_layout(layout: &Layout, seed: u64) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut store = ParamStore::new();
    for (name, dims) in layout {
        let n: usize = dims.iter().product();
        let data = if name.ends_with(".kernel") {
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        } else if name.ends_with(".bn_scale") {
            vec![1.0; n]
        } else {
            vec![0.0; n]
        };
        store.insert(name.clone(), Tensor::new(dims, data)?)?;
    }
    Ok(store)
}

fn layout_count(layout: &Layout) -> usize {
    layout.iter().map(|(_, d)| d.iter().product::<usize>()).sum()
}

/// Generator layer stack. The domain one-hot is appended to the input of
/// every block.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub latent_dim: usize,
    /// Reshape `z` to `latent × 1 × 1` before the first block.
    pub spatial_input: bool,
    pub blocks: Vec<Block>,
}

impl GeneratorSpec {
    /// Desk-scale image generator: a 1×1 → s₀×s₀ projection block followed by
    /// stride-2 upsampling blocks and a 3×3 output block, channels
    /// 4w → 2w → w → 1, batch-norm + relu on hidden blocks, tanh output.
    pub fn image(latent_dim: usize, width: usize, resolution: usize) -> Result<Self> {
        // (seed kernel, mid kernel) such that 1 → s₀ → 2s₀(±1) → resolution
        let (seed_k, mid_k) = match resolution {
            8 => (2, 4),
            14 => (4, 3),
            16 => (4, 4),
            28 => (7, 4),
            r => return Err(Error::Unsupported(format!("generator resolution {r}"))),
        };
        let relu_bn = |kind| Block::new(kind, true, Activation::Relu);
        Ok(GeneratorSpec {
            latent_dim,
            spatial_input: true,
            blocks: vec![
                relu_bn(LayerKind::ConvTranspose {
                    out_channels: 4 * width,
                    kernel: seed_k,
                    stride: 1,
                    pad: 0,
                }),
                relu_bn(LayerKind::ConvTranspose {
                    out_channels: 2 * width,
                    kernel: mid_k,
                    stride: 2,
                    pad: 1,
                }),
                relu_bn(LayerKind::ConvTranspose {
                    out_channels: width,
                    kernel: 4,
                    stride: 2,
                    pad: 1,
                }),
                Block::new(
                    LayerKind::ConvTranspose {
                        out_channels: 1,
                        kernel: 3,
                        stride: 1,
                        pad: 1,
                    },
                    false,
                    Activation::Tanh,
                ),
            ],
        })
    }

    /// Point-cloud generator: two relu dense blocks and a linear output.
    ///
    /// No batch-norm: a single-domain forward would see the one-hot as a
    /// batch-constant offset and normalize it away, so the generator would
    /// only stay domain-aware under paired batches.
    pub fn points(latent_dim: usize, hidden: usize, dims: usize) -> Self {
        GeneratorSpec {
            latent_dim,
            spatial_input: false,
            blocks: vec![
                Block::new(LayerKind::Dense { out: hidden }, false, Activation::Relu),
                Block::new(LayerKind::Dense { out: hidden }, false, Activation::Relu),
                Block::new(LayerKind::Dense { out: dims }, false, Activation::Identity),
            ],
        }
    }

    pub fn input_shape(&self) -> SampleShape {
        if self.spatial_input {
            SampleShape::Image {
                channels: self.latent_dim,
                height: 1,
                width: 1,
            }
        } else {
            SampleShape::Flat(self.latent_dim)
        }
    }

    /// Output shape of every block.
    pub fn layer_shapes(&self) -> Result<Vec<SampleShape>> {
        Ok(stack_layout("gen", &self.blocks, self.input_shape(), true)?.0)
    }

    pub fn output_shape(&self) -> Result<SampleShape> {
        self.layer_shapes()?
            .last()
            .copied()
            .ok_or_else(|| Error::InvalidShape("generator has no blocks".into()))
    }

    pub(crate) fn layout(&self) -> Result<Layout> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidShape("generator has no blocks".into()));
        }
        Ok(stack_layout("gen", &self.blocks, self.input_shape(), true)?.1)
    }

    /// Number of scalar parameters: per block, (in + 2)·out·k² + out for
    /// convolutions, (in + 2)·out + out for dense layers, plus 2·out for
    /// batch-norm.
    pub fn param_count(&self) -> Result<usize> {
        Ok(layout_count(&self.layout()?))
    }
}

/// Discriminator stack: hidden blocks, the last of which is the feature
/// layer, followed by a one-unit dense score. The domain one-hot is appended
/// to the input image only.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorSpec {
    pub input: SampleShape,
    pub hidden: Vec<Block>,
}

impl DiscriminatorSpec {
    /// Strided-conv LeNet variant: conv(w) → conv(2w) → dense(8w), leaky
    /// relu 0.2 throughout. Kernel 4 on even extents, 3 on odd, stride 2,
    /// pad 1.
    pub fn image(width: usize, resolution: usize) -> Result<Self> {
        let mut h = resolution;
        let mut hidden = Vec::new();
        for c in [width, 2 * width] {
            let kernel = if h.is_multiple_of(2) { 4 } else { 3 };
            h = ConvGeom::out_extent(h, kernel, 2, 1)
                .ok_or_else(|| Error::Unsupported(format!("discriminator resolution {resolution}")))?;
            hidden.push(Block::new(
                LayerKind::Conv {
                    out_channels: c,
                    kernel,
                    stride: 2,
                    pad: 1,
                },
                false,
                Activation::LeakyRelu(0.2),
            ));
        }
        hidden.push(Block::new(
            LayerKind::Dense { out: 8 * width },
            false,
            Activation::LeakyRelu(0.2),
        ));
        Ok(DiscriminatorSpec {
            input: SampleShape::Image {
                channels: 1,
                height: resolution,
                width: resolution,
            },
            hidden,
        })
    }

    pub fn points(hidden: usize, dims: usize) -> Self {
        let block = Block::new(LayerKind::Dense { out: hidden }, false, Activation::LeakyRelu(0.2));
        DiscriminatorSpec {
            input: SampleShape::Flat(dims),
            hidden: vec![block, block],
        }
    }

    pub(crate) fn layout(&self) -> Result<Layout> {
        if self.hidden.is_empty() {
            return Err(Error::InvalidShape("discriminator has no hidden blocks".into()));
        }
        if self.hidden.iter().any(|b| b.batch_norm) {
            return Err(Error::Unsupported(
                "batch-norm in the discriminator feature path".into(),
            ));
        }
        let (shapes, mut layout) = stack_layout("disc", &self.hidden, self.input, false)?;
        let features = shapes.last().expect("non-empty").numel();
        layout.push(("disc.score.kernel".into(), vec![features, 1]));
        layout.push(("disc.score.bias".into(), vec![1]));
        Ok(layout)
    }

    pub fn layer_shapes(&self) -> Result<Vec<SampleShape>> {
        Ok(stack_layout("disc", &self.hidden, self.input, false)?.0)
    }

    /// Width of the flattened feature vector feeding the score.
    pub fn feature_width(&self) -> Result<usize> {
        Ok(self
            .layer_shapes()?
            .last()
            .ok_or_else(|| Error::InvalidShape("discriminator has no hidden blocks".into()))?
            .numel())
    }

    /// Same arithmetic as [`GeneratorSpec::param_count`], with the domain
    /// channels counted on the first block only, plus `features + 1` for the
    /// score.
    pub fn param_count(&self) -> Result<usize> {
        Ok(layout_count(&self.layout()?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassifierSpec {
    pub features: usize,
    pub classes: usize,
}

impl ClassifierSpec {
    pub(crate) fn layout(&self) -> Layout {
        vec![
            ("cls.kernel".into(), vec![self.features, self.classes]),
            ("cls.bias".into(), vec![self.classes]),
        ]
    }

    pub fn param_count(&self) -> usize {
        (self.features + 1) * self.classes
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LayerKind::Dense { out } => write!(f, "dense({out})")?,
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                pad,
            } => write!(f, "conv({out_channels},k{kernel},s{stride},p{pad})")?,
            LayerKind::ConvTranspose {
                out_channels,
                kernel,
                stride,
                pad,
            } => write!(f, "tconv({out_channels},k{kernel},s{stride},p{pad})")?,
        }
        if self.batch_norm {
            write!(f, "+bn")?;
        }
        match self.activation {
            Activation::Identity => Ok(()),
            Activation::Relu => write!(f, "+relu"),
            Activation::LeakyRelu(s) => write!(f, "+lrelu{s}"),
            Activation::Tanh => write!(f, "+tanh"),
            Activation::Sigmoid => write!(f, "+sigmoid"),
        }
    }
}

fn write_blocks(f: &mut fmt::Formatter<'_>, blocks: &[Block]) -> fmt::Result {
    for (i, b) in blocks.iter().enumerate() {
        if i > 0 {
            write!(f, " ")?;
        }
        write!(f, "{b}")?;
    }
    Ok(())
}

impl fmt::Display for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "latent={} input={} ", self.latent_dim, self.input_shape())?;
        write_blocks(f, &self.blocks)
    }
}

impl fmt::Display for DiscriminatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "input={} ", self.input)?;
        write_blocks(f, &self.hidden)?;
        write!(f, " score")
    }
}
