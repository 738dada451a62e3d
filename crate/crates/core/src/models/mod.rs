//! The generator, conditional discriminator and frozen perceptual network.
//!
//! Each network is described by a list of [`BlockSpec`]s. Parameter names,
//! initialisation and the forward pass are all driven by that list, so the
//! name inventory of a [`WeightStore`] is a function of the configuration.

mod discriminator;
mod generator;
mod perceptual;
mod store;

use std::collections::HashMap;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use generator::{Generator, GeneratorConfig};
pub use perceptual::{PerceptualConfig, PerceptualNet, PerceptualSource};
pub use store::{is_buffer, WeightStore};

use crate::autodiff::{BatchStats, ConvGeom, Tape, Var, BN_EPS, BN_MOMENTUM};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Batch normalisation behaviour of a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Normalise with batch statistics and report them for running updates.
    Train,
    /// Normalise with the stored running statistics.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Prelu,
}

/// One convolution or deconvolution with optional normalisation and activation.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub geom: ConvGeom,
    pub batchnorm: bool,
    pub activation: Activation,
}

impl BlockSpec {
    fn kernel_shape(&self) -> [usize; 4] {
        match self.kind {
            LayerKind::Conv => [self.out_channels, self.in_channels, self.kernel, self.kernel],
            LayerKind::Deconv => [self.in_channels, self.out_channels, self.kernel, self.kernel],
        }
    }

    /// Names and shapes of every entry this block owns, in a fixed order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let n = &self.name;
        let c = self.out_channels;
        let mut out = vec![(format!("{n}.kernel"), self.kernel_shape().to_vec()), (format!("{n}.bias"), vec![c])];
        if self.batchnorm {
            for p in ["gamma", "beta", "running_mean", "running_var"] {
                out.push((format!("{n}.bn.{p}"), vec![c]));
            }
        }
        if self.activation == Activation::Prelu {
            out.push((format!("{n}.prelu.slope"), vec![c]));
        }
        out
    }

    fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Running-statistic update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate<T: Element> {
    pub block: String,
    pub stats: BatchStats<T>,
}

/// Folds batch statistics into the running estimates of `store`.
pub fn apply_bn_updates<T: Element>(store: &mut WeightStore<T>, updates: &[BnUpdate<T>]) -> Result<()> {
    for u in updates {
        let mean_name = format!("{}.bn.running_mean", u.block);
        let var_name = format!("{}.bn.running_var", u.block);
        let mut mean = store.get(&mean_name)?.clone();
        let mut var = store.get(&var_name)?.clone();
        u.stats.blend_into(&mut mean, &mut var, BN_MOMENTUM);
        store.insert(mean_name, mean);
        store.insert(var_name, var);
    }
    Ok(())
}

/// Parameters of a store registered on a tape, either as differentiable
/// leaves or as constants.
pub struct Params<'t, 's, T: Element> {
    vars: HashMap<String, Var<'t, T>>,
    order: Vec<String>,
    store: &'s WeightStore<T>,
}

impl<'t, 's, T: Element> Params<'t, 's, T> {
    /// Registers every non-buffer entry under `prefix`.
    pub fn bind(tape: &'t Tape<T>, store: &'s WeightStore<T>, prefix: &str, trainable: bool) -> Self {
        let mut vars = HashMap::new();
        let mut order = Vec::new();
        for (name, value) in store.with_prefix(prefix) {
            if is_buffer(name) {
                continue;
            }
            let v = if trainable { tape.leaf(value.clone()) } else { tape.constant(value.clone()) };
            vars.insert(name.to_string(), v);
            order.push(name.to_string());
        }
        Self { vars, order, store }
    }

    /// Uses caller-supplied handles for the parameters and `store` only for
    /// batch-norm buffers. Lets a check substitute perturbed values.
    pub fn from_vars(store: &'s WeightStore<T>, vars: impl IntoIterator<Item = (String, Var<'t, T>)>) -> Self {
        let mut map = HashMap::new();
        let mut order = Vec::new();
        for (n, v) in vars {
            order.push(n.clone());
            map.insert(n, v);
        }
        order.sort();
        Self { vars: map, order, store }
    }

    pub fn var(&self, name: &str) -> Result<Var<'t, T>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("parameter `{name}` is not bound")))
    }

    pub fn buffer(&self, name: &str) -> Result<&'s Tensor<T>> {
        self.store.get(name)
    }

    /// Bound parameters in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, Var<'t, T>)> + '_ {
        self.order.iter().map(move |n| (n.as_str(), self.vars[n]))
    }
}

/// Runs one block: (de)convolution, optional batch norm, activation.
pub(crate) fn run_block<'t, T: Element>(
    spec: &BlockSpec,
    x: Var<'t, T>,
    p: &Params<'t, '_, T>,
    mode: Mode,
    updates: &mut Vec<BnUpdate<T>>,
) -> Result<Var<'t, T>> {
    let n = &spec.name;
    let k = p.var(&format!("{n}.kernel"))?;
    let b = p.var(&format!("{n}.bias"))?;
    let mut h = match spec.kind {
        LayerKind::Conv => x.conv2d(k, b, spec.geom)?,
        LayerKind::Deconv => x.deconv2d(k, b, spec.geom)?,
    };
    if spec.batchnorm {
        let gamma = p.var(&format!("{n}.bn.gamma"))?;
        let beta = p.var(&format!("{n}.bn.beta"))?;
        h = match mode {
            Mode::Train => {
                let (out, stats) = h.batchnorm_train(gamma, beta, BN_EPS)?;
                updates.push(BnUpdate { block: n.clone(), stats });
                out
            }
            Mode::Eval => {
                let mean = p.buffer(&format!("{n}.bn.running_mean"))?;
                let var = p.buffer(&format!("{n}.bn.running_var"))?;
                h.batchnorm_eval(gamma, beta, mean, var, BN_EPS)?
            }
        };
    }
    match spec.activation {
        Activation::None => Ok(h),
        Activation::Relu => h.relu(),
        Activation::Prelu => h.prelu(p.var(&format!("{n}.prelu.slope"))?),
    }
}

/// How kernels of a network are drawn at initialisation.
#[derive(Clone, Copy, Debug)]
enum KernelInit {
    /// Gaussian with fixed standard deviation.
    Gaussian(f32),
    /// Gaussian with standard deviation `sqrt(2 / fan_in)`.
    He,
}

fn init_blocks(specs: &[BlockSpec], rng: &mut ChaCha8Rng, init: KernelInit, store: &mut WeightStore<f32>) {
    for spec in specs {
        for (name, shape) in spec.param_shapes() {
            let value = if name.ends_with(".kernel") {
                let std = match init {
                    KernelInit::Gaussian(s) => s,
                    KernelInit::He => (2.0 / spec.fan_in() as f32).sqrt(),
                };
                let normal = Normal::new(0.0f32, std).expect("positive std");
                Tensor::from_fn(&shape, |_| normal.sample(rng))
            } else if name.ends_with(".gamma") || name.ends_with(".running_var") {
                Tensor::ones(&shape)
            } else if name.ends_with(".slope") {
                Tensor::full(&shape, 0.25)
            } else {
                Tensor::zeros(&shape)
            };
            store.insert(name, value);
        }
    }
}

/// Architecture widths and the perceptual weight source.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub perceptual: PerceptualConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()
    }
}

/// Standard deviation of generator and discriminator kernels at init.
pub const KERNEL_INIT_STD: f32 = 0.02;

/// Fresh weights for all three networks, fully determined by `seed`.
///
/// Generator and discriminator kernels are drawn from N(0, 0.02); biases and
/// BN shifts start at 0, BN scales and running variances at 1, PReLU slopes
/// at 0.25. The perceptual network either gets He-scaled Gaussian kernels or
/// is loaded from a checkpoint. Each network draws from its own stream, so
/// changing one width leaves the others untouched.
pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<WeightStore<f32>> {
    config.validate()?;
    let mut store = WeightStore::new();
    let stream = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s);
        rng
    };
    let g = Generator::new(config.generator.clone())?;
    init_blocks(g.blocks(), &mut stream(0), KernelInit::Gaussian(KERNEL_INIT_STD), &mut store);
    let d = Discriminator::new(config.discriminator.clone())?;
    init_blocks(d.blocks(), &mut stream(1), KernelInit::Gaussian(KERNEL_INIT_STD), &mut store);
    let v = PerceptualNet::new();
    match &config.perceptual.source {
        PerceptualSource::Seeded => init_blocks(v.blocks(), &mut stream(2), KernelInit::He, &mut store),
        PerceptualSource::Checkpoint(path) => store.merge(load_perceptual(&v, path)?),
    }
    Ok(store)
}

fn load_perceptual(v: &PerceptualNet, path: &PathBuf) -> Result<WeightStore<f32>> {
    let loaded = crate::io::checkpoint::load(path)?;
    let mut out = WeightStore::new();
    for spec in v.blocks() {
        for (name, shape) in spec.param_shapes() {
            let t = loaded.get(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            out.insert(name, t.clone());
        }
    }
    Ok(out)
}

/// Names that `config` places in a store, with their shapes.
pub fn expected_entries(config: &ModelConfig) -> Result<Vec<(String, Vec<usize>)>> {
    let g = Generator::new(config.generator.clone())?;
    let d = Discriminator::new(config.discriminator.clone())?;
    let v = PerceptualNet::new();
    Ok(g.blocks()
        .iter()
        .chain(d.blocks())
        .chain(v.blocks())
        .flat_map(BlockSpec::param_shapes)
        .collect())
}
