//! Frozen feature network used by the perceptual loss.
//!
//! The layer stack copies the first two stages of VGG-16 up to the second
//! activation of stage two: conv3-64, ReLU, conv3-64, ReLU, 2x2 max-pool,
//! conv3-128, ReLU, conv3-128, ReLU. Its weights are always bound as
//! constants, so gradients flow through it to the image but never into it.

use std::path::PathBuf;

use super::{run_block, Activation, BlockSpec, LayerKind, Mode, Params};
use crate::autodiff::{ConvGeom, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;

/// Where the perceptual network's weights come from.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum PerceptualSource {
    /// He-scaled Gaussian weights drawn from the model seed.
    #[default]
    Seeded,
    /// `v.*` entries of a checkpoint file (e.g. converted VGG-16 weights).
    Checkpoint(PathBuf),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PerceptualConfig {
    pub source: PerceptualSource,
}

#[derive(Clone, Debug)]
pub struct PerceptualNet {
    blocks: Vec<BlockSpec>,
}

impl Default for PerceptualNet {
    fn default() -> Self {
        Self::new()
    }
}

impl PerceptualNet {
    pub const OUT_CHANNELS: usize = 128;

    pub fn new() -> Self {
        let widths = [(3, 64), (64, 64), (64, 128), (128, 128)];
        let blocks = widths
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout))| BlockSpec {
                name: format!("v.conv{}", i + 1),
                kind: LayerKind::Conv,
                in_channels: cin,
                out_channels: cout,
                kernel: 3,
                geom: ConvGeom::new(1, 1),
                batchnorm: false,
                activation: Activation::Relu,
            })
            .collect();
        Self { blocks }
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    /// `N x 3 x H x W -> N x 128 x H/2 x W/2`. `params` should be bound as
    /// constants.
    pub fn forward<'t, T: Element>(&self, img: Var<'t, T>, params: &Params<'t, '_, T>) -> Result<Var<'t, T>> {
        let (_, c, h, w) = img.value().dims4("perceptual")?;
        if c != 3 {
            return Err(Error::shape("perceptual", format!("expected 3 channels, got {c}")));
        }
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::geometry("perceptual", format!("spatial dims {h}x{w} must be even")));
        }
        // No batch norm in this network, so the mode and update list are inert.
        let mut none = Vec::new();
        let mut x = img;
        for (i, spec) in self.blocks.iter().enumerate() {
            x = run_block(spec, x, params, Mode::Eval, &mut none)?;
            if i == 1 {
                x = x.maxpool2()?;
            }
        }
        Ok(x)
    }
}
