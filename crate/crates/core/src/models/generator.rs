//! Symmetric skip-connected generator.
//!
//! Six conv-BN-PReLU blocks (K, K, K, K, K/2, 1 channels) are mirrored by six
//! deconv-BN-ReLU blocks (K/2, K, K, K, K, 3 channels) followed by Tanh. All
//! layers use 3x3 kernels, stride 1 and padding 1, so every feature map keeps
//! the input's spatial size. The output of conv block 2 is added to the
//! output of deconv block 4 and conv block 4 to deconv block 2. The final
//! deconv block is normalised but not rectified: Tanh is its activation.

use super::{run_block, Activation, BlockSpec, BnUpdate, LayerKind, Mode, Params};
use crate::autodiff::{ConvGeom, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;

const GEOM: ConvGeom = ConvGeom::new(1, 1);
const KERNEL: usize = 3;
/// `(conv block, deconv block)` pairs joined by additive skips (1-based).
pub const SKIPS: [(usize, usize); 2] = [(2, 4), (4, 2)];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    /// Base channel width `K`; must be even.
    pub k: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { k: 64 }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || !self.k.is_multiple_of(2) {
            return Err(Error::Config(format!("generator width K must be even and >= 2, got {}", self.k)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    blocks: Vec<BlockSpec>,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let k = config.k;
        let conv_widths = [k, k, k, k, k / 2, 1];
        let deconv_widths = [k / 2, k, k, k, k, 3];
        let mut blocks = Vec::with_capacity(12);
        let mut cin = 3;
        for (i, &c) in conv_widths.iter().enumerate() {
            blocks.push(BlockSpec {
                name: format!("g.conv{}", i + 1),
                kind: LayerKind::Conv,
                in_channels: cin,
                out_channels: c,
                kernel: KERNEL,
                geom: GEOM,
                batchnorm: true,
                activation: Activation::Prelu,
            });
            cin = c;
        }
        for (i, &c) in deconv_widths.iter().enumerate() {
            let last = i + 1 == deconv_widths.len();
            blocks.push(BlockSpec {
                name: format!("g.deconv{}", i + 1),
                kind: LayerKind::Deconv,
                in_channels: cin,
                out_channels: c,
                kernel: KERNEL,
                geom: GEOM,
                batchnorm: true,
                activation: if last { Activation::None } else { Activation::Relu },
            });
            cin = c;
        }
        Ok(Self { config, blocks })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    /// Maps `N x 3 x H x W` images in [-1, 1] to de-rained images in [-1, 1].
    pub fn forward<'t, T: Element>(
        &self,
        x: Var<'t, T>,
        params: &Params<'t, '_, T>,
        mode: Mode,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> Result<Var<'t, T>> {
        let (_, c, h, w) = x.value().dims4("generator")?;
        if c != 3 {
            return Err(Error::shape("generator", format!("expected 3 input channels, got {c}")));
        }
        if h < 8 || w < 8 {
            return Err(Error::geometry("generator", format!("input {h}x{w} is smaller than 8x8")));
        }
        let (convs, deconvs) = self.blocks.split_at(6);
        let mut conv_out = Vec::with_capacity(6);
        let mut hcur = x;
        for spec in convs {
            hcur = run_block(spec, hcur, params, mode, updates)?;
            conv_out.push(hcur);
        }
        for (j, spec) in deconvs.iter().enumerate() {
            hcur = run_block(spec, hcur, params, mode, updates)?;
            if let Some(&(from, _)) = SKIPS.iter().find(|(_, to)| *to == j + 1) {
                hcur = hcur.add(conv_out[from - 1])?;
            }
        }
        hcur.tanh()
    }
}
