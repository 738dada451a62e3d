//! Finite-difference verification of every differentiable operator, the
//! losses and the three networks, run in 64-bit arithmetic.
//!
//! Each check reduces the function's output to a scalar with a fixed random
//! projection, so every output element contributes to the compared
//! gradient. Central differences use `h = 1e-3`; if a coordinate is not
//! well inside tolerance, `h = 1e-5` and `h = 1e-6` are also tried and the
//! best agreement kept, which guards against a rectifier kink falling inside
//! the difference interval.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{ConvGeom, Tape, Var, BN_EPS};
use crate::error::Result;
use crate::losses::{adversarial_loss, discriminator_loss, euclidean_loss, perceptual_loss};
use crate::models::{
    init_weights, is_buffer, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ModelConfig, Mode, Params,
    PerceptualNet, WeightStore,
};
use crate::tensor::Tensor;

pub const REL_TOL: f64 = 1e-4;
pub const STEPS: [f64; 3] = [1e-3, 1e-5, 1e-6];
/// Coordinates differenced per input tensor in full-network checks.
const NET_COORDS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub coords: usize,
    pub max_rel_err: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < REL_TOL
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    /// One line per check plus a summary; identical for identical seeds.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let tag = if c.passed() { "ok  " } else { "FAIL" };
            writeln!(s, "{tag} {:<28} coords={:<4} max_rel_err={:.3e}", c.name, c.coords, c.max_rel_err).unwrap();
        }
        let passed = self.checks.iter().filter(|c| c.passed()).count();
        writeln!(s, "gradcheck: {passed}/{} checks passed (tolerance {REL_TOL:e})", self.checks.len()).unwrap();
        s
    }
}

/// `|a - n| / max(|a|, |n|, floor)` where `floor` keeps near-zero
/// components from dominating.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let d = (analytic - numeric).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

/// Compares the tape gradient of `f` against central differences for up to
/// `max_coords` coordinates of each input.
pub fn check<F>(name: &str, inputs: &[Tensor<f64>], max_coords: usize, rng: &mut ChaCha8Rng, f: F) -> Result<CheckResult>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let proj = randn(rng, out.value().shape(), 1.0);
    let loss = out.weighted_sum(proj.clone())?;
    let grads = tape.backward(loss)?;

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let t = Tape::new();
        let vs: Vec<_> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
        f(&t, &vs)?.weighted_sum(proj.clone())?.value().item()
    };
    let fd = |which: usize, idx: usize, h: f64| -> Result<f64> {
        let mut xs = inputs.to_vec();
        let base = xs[which].data()[idx];
        xs[which].data_mut()[idx] = base + h;
        let up = eval(&xs)?;
        xs[which].data_mut()[idx] = base - h;
        let down = eval(&xs)?;
        Ok((up - down) / (2.0 * h))
    };

    let mut samples = Vec::new();
    for (i, x) in inputs.iter().enumerate() {
        let g = grads.get_or_zeros(vars[i]);
        let n = x.numel();
        let idx: Vec<usize> = if n <= max_coords { (0..n).collect() } else { sample(rng, n, max_coords).into_vec() };
        for j in idx {
            samples.push((i, j, g.data()[j], fd(i, j, STEPS[0])?));
        }
    }
    let scale = samples.iter().map(|s| s.3.abs()).fold(0.0, f64::max);
    let floor = (1e-3 * scale).max(1e-10);
    let mut worst: f64 = 0.0;
    for &(i, j, a, n) in &samples {
        let mut e = rel_err(a, n, floor);
        for &h in &STEPS[1..] {
            if e < 0.1 * REL_TOL {
                break;
            }
            e = e.min(rel_err(a, fd(i, j, h)?, floor));
        }
        worst = worst.max(e);
    }
    Ok(CheckResult { name: name.to_string(), coords: samples.len(), max_rel_err: worst })
}

fn img(rng: &mut ChaCha8Rng, c: usize) -> Tensor<f64> {
    randn(rng, &[1, c, 8, 8], 1.0)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn op_checks(rng: &mut ChaCha8Rng, out: &mut Vec<CheckResult>) -> Result<()> {
    const ALL: usize = usize::MAX;
    let s1 = ConvGeom::new(1, 1);
    let s2 = ConvGeom::new(2, 1);

    let ins = vec![img(rng, 3), randn(rng, &[4, 3, 3, 3], 0.3), randn(rng, &[4], 1.0)];
    out.push(check("conv2d 3x3 s1 p1", &ins, ALL, rng, |_, v| v[0].conv2d(v[1], v[2], s1))?);
    let ins = vec![img(rng, 3), randn(rng, &[4, 3, 4, 4], 0.3), randn(rng, &[4], 1.0)];
    out.push(check("conv2d 4x4 s2 p1", &ins, ALL, rng, |_, v| v[0].conv2d(v[1], v[2], s2))?);
    let ins = vec![img(rng, 3), randn(rng, &[3, 4, 3, 3], 0.3), randn(rng, &[4], 1.0)];
    out.push(check("deconv2d 3x3 s1 p1", &ins, ALL, rng, |_, v| v[0].deconv2d(v[1], v[2], s1))?);
    let ins = vec![img(rng, 3), randn(rng, &[3, 4, 4, 4], 0.3), randn(rng, &[4], 1.0)];
    out.push(check("deconv2d 4x4 s2 p1", &ins, ALL, rng, |_, v| v[0].deconv2d(v[1], v[2], s2))?);

    let ins = vec![img(rng, 3), uniform(rng, &[3], 0.5, 1.5), randn(rng, &[3], 1.0)];
    out.push(check("batchnorm train", &ins, ALL, rng, |_, v| Ok(v[0].batchnorm_train(v[1], v[2], BN_EPS)?.0))?);
    let mean = randn(rng, &[3], 0.5);
    let var = uniform(rng, &[3], 0.5, 2.0);
    out.push(check("batchnorm eval", &ins, ALL, rng, |_, v| v[0].batchnorm_eval(v[1], v[2], &mean, &var, BN_EPS))?);

    let ins = vec![img(rng, 3), uniform(rng, &[3], 0.1, 0.5)];
    out.push(check("prelu", &ins, ALL, rng, |_, v| v[0].prelu(v[1]))?);
    let x = vec![img(rng, 3)];
    out.push(check("relu", &x, ALL, rng, |_, v| v[0].relu())?);
    out.push(check("tanh", &x, ALL, rng, |_, v| v[0].tanh())?);
    out.push(check("sigmoid", &x, ALL, rng, |_, v| v[0].sigmoid())?);
    out.push(check("maxpool2", &x, ALL, rng, |_, v| v[0].maxpool2())?);
    out.push(check("scale", &x, ALL, rng, |_, v| v[0].scale(-1.7))?);
    out.push(check("one_minus", &x, ALL, rng, |_, v| v[0].one_minus())?);
    out.push(check("square", &x, ALL, rng, |_, v| v[0].square())?);
    out.push(check("sum", &x, ALL, rng, |_, v| v[0].sum())?);
    out.push(check("sample_mean", &x, ALL, rng, |_, v| v[0].sample_mean())?);

    let xy = vec![img(rng, 3), img(rng, 3)];
    out.push(check("add", &xy, ALL, rng, |_, v| v[0].add(v[1]))?);
    out.push(check("sub", &xy, ALL, rng, |_, v| v[0].sub(v[1]))?);
    out.push(check("mse", &xy, ALL, rng, |_, v| v[0].mse(v[1]))?);
    let xy2 = vec![img(rng, 3), img(rng, 2)];
    out.push(check("concat_channels", &xy2, ALL, rng, |_, v| v[0].concat_channels(v[1]))?);
    let p = vec![uniform(rng, &[6], 0.05, 0.95)];
    out.push(check("neg_log_mean", &p, ALL, rng, |_, v| v[0].neg_log_mean(1e-7))?);
    Ok(())
}

fn loss_checks(rng: &mut ChaCha8Rng, store: &WeightStore<f64>, out: &mut Vec<CheckResult>) -> Result<()> {
    const ALL: usize = usize::MAX;
    let xy = vec![uniform(rng, &[1, 3, 8, 8], -1.0, 1.0), uniform(rng, &[1, 3, 8, 8], -1.0, 1.0)];
    out.push(check("euclidean_loss", &xy, ALL, rng, |_, v| euclidean_loss(v[0], v[1]))?);
    let net = PerceptualNet::new();
    out.push(check("perceptual_loss", &xy[..1], 48, rng, |t, v| {
        let vp = Params::bind(t, store, "v.", false);
        perceptual_loss(v[0], t.constant(xy[1].clone()), &net, &vp)
    })?);
    let s = vec![uniform(rng, &[4], 0.05, 0.95)];
    out.push(check("adversarial_loss", &s, ALL, rng, |_, v| adversarial_loss(v[0]))?);
    let rf = vec![uniform(rng, &[4], 0.05, 0.95), uniform(rng, &[4], 0.05, 0.95)];
    out.push(check("discriminator_loss", &rf, ALL, rng, |_, v| discriminator_loss(v[0], v[1]))?);
    Ok(())
}

/// Parameter tensors of `store` under `prefix`, with their names.
fn params_of(store: &WeightStore<f64>, prefix: &str) -> (Vec<String>, Vec<Tensor<f64>>) {
    store.with_prefix(prefix).filter(|(n, _)| !is_buffer(n)).map(|(n, t)| (n.to_string(), t.clone())).unzip()
}

fn network_checks(rng: &mut ChaCha8Rng, store: &WeightStore<f64>, cfg: &ModelConfig, out: &mut Vec<CheckResult>) -> Result<()> {
    let g = Generator::new(cfg.generator.clone())?;
    let (names, mut ins) = params_of(store, "g.");
    ins.insert(0, uniform(rng, &[1, 3, 8, 8], -1.0, 1.0));
    out.push(check("generator (input + params)", &ins, NET_COORDS.max(16), rng, |_, v| {
        let p = Params::from_vars(store, names.iter().cloned().zip(v[1..].iter().copied()));
        g.forward(v[0], &p, Mode::Train, &mut Vec::new())
    })?);
    out.push(check("generator params (eval)", &ins, NET_COORDS, rng, |_, v| {
        let p = Params::from_vars(store, names.iter().cloned().zip(v[1..].iter().copied()));
        g.forward(v[0], &p, Mode::Eval, &mut Vec::new())
    })?);

    let d = Discriminator::new(cfg.discriminator.clone())?;
    let (names, mut ins) = params_of(store, "d.");
    let side = 32;
    ins.insert(0, uniform(rng, &[1, 3, side, side], -1.0, 1.0));
    ins.insert(1, uniform(rng, &[1, 3, side, side], -1.0, 1.0));
    out.push(check("discriminator (inputs + params)", &ins, NET_COORDS.max(16), rng, |_, v| {
        let p = Params::from_vars(store, names.iter().cloned().zip(v[2..].iter().copied()));
        d.patch_map(v[0], v[1], &p, Mode::Train, &mut Vec::new())
    })?);

    let net = PerceptualNet::new();
    let x = vec![uniform(rng, &[1, 3, 8, 8], -1.0, 1.0)];
    out.push(check("perceptual net (input)", &x, 48, rng, |t, v| {
        let vp = Params::bind(t, store, "v.", false);
        net.forward(v[0], &vp)
    })?);
    Ok(())
}

/// Small widths keep the full-network checks fast; the code path is the one
/// used in training.
pub fn check_model_config() -> ModelConfig {
    ModelConfig {
        generator: GeneratorConfig { k: 8 },
        discriminator: DiscriminatorConfig { k2: 8 },
        ..Default::default()
    }
}

/// Runs every check; deterministic in `seed`.
pub fn run_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = check_model_config();
    let mut store = init_weights(&cfg, seed)?.cast::<f64>();
    // Non-trivial affine and slope parameters so their gradients are exercised.
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for n in names {
        if n.ends_with(".bn.gamma") || n.ends_with(".bn.beta") || n.ends_with(".bias") {
            let shape = store.get(&n)?.shape().to_vec();
            let base = if n.ends_with(".bn.gamma") { 1.0 } else { 0.0 };
            let t = Tensor::from_fn(&shape, |_| base + 0.2 * rng.random_range(-1.0..1.0));
            store.insert(n, t);
        } else if n.ends_with(".running_var") {
            let shape = store.get(&n)?.shape().to_vec();
            store.insert(n, uniform(&mut rng, &shape, 0.5, 1.5));
        }
    }
    let mut checks = Vec::new();
    op_checks(&mut rng, &mut checks)?;
    loss_checks(&mut rng, &store, &mut checks)?;
    network_checks(&mut rng, &store, &cfg, &mut checks)?;
    Ok(SuiteReport { checks })
}
