//! Conditional patch discriminator.
//!
//! The condition (rainy input) and the candidate (clean or generated image)
//! are concatenated along channels and passed through
//! conv-BN, three conv-BN-PReLU blocks and a final 1-channel conv. A sigmoid
//! maps the patch map to probabilities whose spatial mean is the score.

use super::{run_block, Activation, BlockSpec, BnUpdate, LayerKind, Mode, Params};
use crate::autodiff::{ConvGeom, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;

const KERNEL: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    /// Base channel width `K2`.
    pub k2: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { k2: 48 }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k2 == 0 {
            return Err(Error::Config("discriminator width K2 must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    blocks: Vec<BlockSpec>,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig) -> Result<Self> {
        config.validate()?;
        let k2 = config.k2;
        let layers = [
            (k2, 2, true, Activation::None),
            (2 * k2, 2, true, Activation::Prelu),
            (4 * k2, 2, true, Activation::Prelu),
            (8 * k2, 1, true, Activation::Prelu),
            (1, 1, false, Activation::None),
        ];
        let mut cin = 6;
        let blocks = layers
            .iter()
            .enumerate()
            .map(|(i, &(cout, stride, bn, act))| {
                let spec = BlockSpec {
                    name: format!("d.conv{}", i + 1),
                    kind: LayerKind::Conv,
                    in_channels: cin,
                    out_channels: cout,
                    kernel: KERNEL,
                    geom: ConvGeom::new(stride, 1),
                    batchnorm: bn,
                    activation: act,
                };
                cin = cout;
                spec
            })
            .collect();
        Ok(Self { config, blocks })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    /// Smallest admissible square input side (three halvings, then two
    /// 4x4/stride-1/pad-1 layers that each shrink by one).
    pub const MIN_SIDE: usize = 24;

    /// Per-patch probabilities before aggregation, `N x 1 x h x w`.
    pub fn patch_map<'t, T: Element>(
        &self,
        condition: Var<'t, T>,
        candidate: Var<'t, T>,
        params: &Params<'t, '_, T>,
        mode: Mode,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> Result<Var<'t, T>> {
        let (cv, dv) = (condition.value(), candidate.value());
        if cv.shape() != dv.shape() {
            return Err(Error::shape(
                "discriminator",
                format!("condition {:?} vs candidate {:?}", cv.shape(), dv.shape()),
            ));
        }
        let (_, c, h, w) = cv.dims4("discriminator")?;
        if c != 3 {
            return Err(Error::shape("discriminator", format!("expected 3-channel images, got {c}")));
        }
        if h % 8 != 0 || w % 8 != 0 || h < Self::MIN_SIDE || w < Self::MIN_SIDE {
            return Err(Error::geometry(
                "discriminator",
                format!("input {h}x{w} must be divisible by 8 and at least {}", Self::MIN_SIDE),
            ));
        }
        let mut hcur = condition.concat_channels(candidate)?;
        for spec in &self.blocks {
            hcur = run_block(spec, hcur, params, mode, updates)?;
        }
        hcur.sigmoid()
    }

    /// One score in [0, 1] per sample.
    pub fn forward<'t, T: Element>(
        &self,
        condition: Var<'t, T>,
        candidate: Var<'t, T>,
        params: &Params<'t, '_, T>,
        mode: Mode,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> Result<Var<'t, T>> {
        self.patch_map(condition, candidate, params, mode, updates)?.sample_mean()
    }
}
