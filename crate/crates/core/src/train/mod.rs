//! Alternating discriminator/generator optimisation, the training loop with
//! logging and checkpoints, and eval-mode inference.
//!
//! Each iteration runs the generator once in training mode, updates the
//! discriminator on (rainy, clean) versus (rainy, detached output), then
//! updates the generator on the ablation's objective with the freshly updated
//! discriminator and the perceptual network held constant. The batch used at
//! iteration `i` depends only on the seed and `i`, so a resumed run sees the
//! same batches as an uninterrupted one.

pub mod adam;
pub mod config;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{AdamConfig, AdamState};
pub use config::{Ablation, TrainConfig, TRAIN_KEYS};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::io::checkpoint::{self, tensor_to_u64, u64_to_tensor};
use crate::io::dataset::ImagePair;
use crate::io::image::{from_signed, image_dims, stack_images, to_signed, unstack_image};
use crate::losses::{discriminator_loss, refined_loss, LossReport, PerceptualTerm};
use crate::models::{
    apply_bn_updates, expected_entries, init_weights, is_buffer, Discriminator, Generator, GeneratorConfig, Mode,
    ModelConfig, Params, PerceptualNet, PerceptualSource, WeightStore,
};
use crate::tensor::Tensor;

/// The three networks of one configuration.
#[derive(Clone, Debug)]
pub struct Networks {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub perceptual: PerceptualNet,
}

impl Networks {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            generator: Generator::new(cfg.generator.clone())?,
            discriminator: Discriminator::new(cfg.discriminator.clone())?,
            perceptual: PerceptualNet::new(),
        })
    }
}

/// Everything that changes during training.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainState {
    pub weights: WeightStore<f32>,
    pub adam_g: AdamState,
    pub adam_d: AdamState,
    /// Completed iterations.
    pub iter: u64,
}

/// One batch in the generator's [-1, 1] range, `N x 3 x H x W`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub rainy: Tensor,
    pub clean: Tensor,
}

fn trainable_grads<'t>(
    params: &Params<'t, '_, f32>,
    grads: &crate::autodiff::Gradients<f32>,
) -> Vec<(String, Tensor)> {
    params.iter().map(|(n, v)| (n.to_string(), grads.get_or_zeros(v))).collect()
}

fn discriminator_step(nets: &Networks, state: &mut TrainState, batch: &Batch, fake: &Tensor, cfg: &TrainConfig) -> Result<f32> {
    let (d_loss, grads, updates) = {
        let tape = Tape::new();
        let dp = Params::bind(&tape, &state.weights, "d.", true);
        let x = tape.constant(batch.rainy.clone());
        let y = tape.constant(batch.clean.clone());
        let f = tape.constant(fake.clone());
        let mut updates = Vec::new();
        let real = nets.discriminator.forward(x, y, &dp, Mode::Train, &mut updates)?;
        let fake = nets.discriminator.forward(x, f, &dp, Mode::Train, &mut updates)?;
        let loss = discriminator_loss(real, fake)?;
        let g = tape.backward(loss)?;
        (loss.value().item()?, trainable_grads(&dp, &g), updates)
    };
    state.adam_d.step(&cfg.adam(), &mut state.weights, &grads)?;
    apply_bn_updates(&mut state.weights, &updates)?;
    Ok(d_loss)
}

/// One alternating update on `batch`; returns the losses measured during it.
pub fn train_step(nets: &Networks, state: &mut TrainState, batch: &Batch, cfg: &TrainConfig) -> Result<LossReport> {
    let weights = cfg.loss_weights();
    let g_store = state.weights.subset("g.");
    let tape = Tape::new();
    let gp = Params::bind(&tape, &g_store, "g.", true);
    let x = tape.constant(batch.rainy.clone());
    let y = tape.constant(batch.clean.clone());
    let mut g_updates = Vec::new();
    let fake = nets.generator.forward(x, &gp, Mode::Train, &mut g_updates)?;

    let mut d_loss = None;
    if cfg.ablation.uses_discriminator() {
        let fake_value = fake.value();
        for _ in 0..cfg.d_steps {
            d_loss = Some(discriminator_step(nets, state, batch, &fake_value, cfg)?);
        }
    }

    let (mut report, grads) = {
        let dp = Params::bind(&tape, &state.weights, "d.", false);
        let vp = Params::bind(&tape, &state.weights, "v.", false);
        let scores = if weights.uses_adversarial() {
            Some(nets.discriminator.forward(x, fake, &dp, Mode::Train, &mut Vec::new())?)
        } else {
            None
        };
        let term = PerceptualTerm { net: &nets.perceptual, params: &vp };
        let perceptual = weights.uses_perceptual().then_some(&term);
        let refined = refined_loss(fake, y, scores, &weights, perceptual)?;
        let g = tape.backward(refined.objective)?;
        (refined.report, trainable_grads(&gp, &g))
    };
    state.adam_g.step(&cfg.adam(), &mut state.weights, &grads)?;
    apply_bn_updates(&mut state.weights, &g_updates)?;
    report.d_loss = d_loss;
    Ok(report)
}

/// Indices of the batch used at (0-based) iteration `iter`: each epoch is a
/// fresh seeded permutation cut into `n / batch` full batches.
pub fn batch_indices(n: usize, batch: usize, seed: u64, iter: u64) -> Vec<usize> {
    let per_epoch = (n / batch).max(1) as u64;
    let (epoch, b) = (iter / per_epoch, (iter % per_epoch) as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 32) | epoch);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm[b * batch..(b + 1) * batch].to_vec()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    /// 1-based iteration number.
    pub iter: u64,
    pub report: LossReport,
}

pub const LOG_HEADER: &str = "iter,l_e,l_p,l_a,l_rp,d_loss";
pub const LOG_FILE: &str = "train_log.csv";

impl LogRow {
    /// CSV line without newline. Absent terms are empty fields; numbers use
    /// the shortest text that parses back to the same f32.
    pub fn to_csv(&self) -> String {
        let r = &self.report;
        let opt = |v: Option<f32>| v.map(|x| x.to_string()).unwrap_or_default();
        format!("{},{},{},{},{},{}", self.iter, r.l_e, opt(r.l_p), opt(r.l_a), r.l_rp, opt(r.d_loss))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for r in &self.rows {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        if rdr.headers()?.iter().ne(LOG_HEADER.split(',')) {
            return Err(Error::Data("training log header does not match".into()));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<Option<f32>> {
                let f = &rec[i];
                if f.is_empty() {
                    return Ok(None);
                }
                f.parse().map(Some).map_err(|_| Error::Data(format!("bad log value `{f}`")))
            };
            let req = |i: usize| num(i)?.ok_or_else(|| Error::Data(format!("missing log column {i}")));
            rows.push(LogRow {
                iter: rec[0].parse().map_err(|_| Error::Data(format!("bad iteration `{}`", &rec[0])))?,
                report: LossReport { l_e: req(1)?, l_p: num(2)?, l_a: num(3)?, l_rp: req(4)?, d_loss: num(5)? },
            });
        }
        Ok(Self { rows })
    }
}

pub fn checkpoint_path(out_dir: &Path, iter: u64) -> PathBuf {
    out_dir.join(format!("ckpt_{iter:07}.idcg"))
}

/// A training run in progress: configuration, networks, data and state.
pub struct Trainer {
    cfg: TrainConfig,
    nets: Networks,
    data: Vec<(Tensor, Tensor)>,
    state: TrainState,
}

fn prepare_data(cfg: &TrainConfig, pairs: &[ImagePair]) -> Result<Vec<(Tensor, Tensor)>> {
    if pairs.len() < cfg.batch_size {
        return Err(Error::Data(format!("{} pairs cannot fill a batch of {}", pairs.len(), cfg.batch_size)));
    }
    pairs
        .iter()
        .map(|p| {
            for img in [&p.rainy, &p.clean] {
                let (h, w) = image_dims(img)?;
                if (h, w) != (cfg.image_size, cfg.image_size) {
                    return Err(Error::Data(format!(
                        "{}: image is {h}x{w}, expected {s}x{s}",
                        p.name,
                        s = cfg.image_size
                    )));
                }
            }
            Ok((to_signed(&p.rainy), to_signed(&p.clean)))
        })
        .collect()
}

impl Trainer {
    /// Fresh weights from `cfg.seed`.
    pub fn new(cfg: TrainConfig, pairs: &[ImagePair], perceptual: PerceptualSource) -> Result<Self> {
        cfg.validate()?;
        let mut model = cfg.model_config();
        model.perceptual.source = perceptual;
        let nets = Networks::new(&model)?;
        let data = prepare_data(&cfg, pairs)?;
        let weights = init_weights(&model, cfg.seed)?;
        Ok(Self { cfg, nets, data, state: TrainState { weights, ..Default::default() } })
    }

    /// Restores weights, optimiser moments and the iteration counter from a
    /// store produced by [`Trainer::checkpoint`].
    pub fn resume(cfg: TrainConfig, pairs: &[ImagePair], ckpt: WeightStore<f32>) -> Result<Self> {
        cfg.validate()?;
        let model = cfg.model_config();
        let nets = Networks::new(&model)?;
        let data = prepare_data(&cfg, pairs)?;
        let state = state_from_checkpoint(ckpt, &model)?;
        let seed = state_seed(&state)?;
        if seed != cfg.seed {
            return Err(Error::Config(format!("checkpoint was trained with seed {seed}, run uses {}", cfg.seed)));
        }
        if state.iter > cfg.iterations {
            return Err(Error::Config(format!(
                "checkpoint is at iteration {}, beyond the requested {}",
                state.iter, cfg.iterations
            )));
        }
        Ok(Self { cfg, nets, data, state: state.without_meta() })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn networks(&self) -> &Networks {
        &self.nets
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn weights(&self) -> &WeightStore<f32> {
        &self.state.weights
    }

    /// Completed iterations.
    pub fn iteration(&self) -> u64 {
        self.state.iter
    }

    pub fn batch(&self, iter: u64) -> Result<Batch> {
        let idx = batch_indices(self.data.len(), self.cfg.batch_size, self.cfg.seed, iter);
        let rainy: Vec<&Tensor> = idx.iter().map(|&i| &self.data[i].0).collect();
        let clean: Vec<&Tensor> = idx.iter().map(|&i| &self.data[i].1).collect();
        Ok(Batch { rainy: stack_images(&rainy)?, clean: stack_images(&clean)? })
    }

    /// Runs the next iteration.
    pub fn step(&mut self) -> Result<LogRow> {
        let batch = self.batch(self.state.iter)?;
        let report = train_step(&self.nets, &mut self.state, &batch, &self.cfg)?;
        self.state.iter += 1;
        Ok(LogRow { iter: self.state.iter, report })
    }

    /// Weights plus optimiser state and run metadata, ready to save.
    pub fn checkpoint(&self) -> WeightStore<f32> {
        let mut out = self.state.weights.clone();
        for (group, st) in [("g", &self.state.adam_g), ("d", &self.state.adam_d)] {
            for (n, t) in st.m.iter() {
                out.insert(format!("adam.{group}.m.{n}"), t.clone());
            }
            for (n, t) in st.v.iter() {
                out.insert(format!("adam.{group}.v.{n}"), t.clone());
            }
            out.insert(format!("adam.{group}.t"), u64_to_tensor(st.t));
        }
        out.insert("meta.iter", u64_to_tensor(self.state.iter));
        out.insert("meta.seed", u64_to_tensor(self.cfg.seed));
        out
    }

    /// De-rains with the current weights (eval mode).
    pub fn derain(&self, image: &Tensor) -> Result<Tensor> {
        derain(&self.state.weights, image)
    }
}

impl TrainState {
    fn without_meta(mut self) -> Self {
        self.weights.remove("meta.seed");
        self
    }
}

fn state_seed(state: &TrainState) -> Result<u64> {
    tensor_to_u64(state.weights.get("meta.seed")?)
}

fn state_from_checkpoint(ckpt: WeightStore<f32>, model: &ModelConfig) -> Result<TrainState> {
    let mut state = TrainState::default();
    for (name, t) in ckpt.iter() {
        let t = t.clone();
        if let Some(rest) = name.strip_prefix("adam.") {
            let (group, rest) = rest.split_once('.').ok_or_else(|| Error::Checkpoint(format!("bad entry `{name}`")))?;
            let st = match group {
                "g" => &mut state.adam_g,
                "d" => &mut state.adam_d,
                _ => return Err(Error::Checkpoint(format!("bad optimiser group in `{name}`"))),
            };
            if rest == "t" {
                st.t = tensor_to_u64(&t)?;
            } else if let Some(p) = rest.strip_prefix("m.") {
                st.m.insert(p, t);
            } else if let Some(p) = rest.strip_prefix("v.") {
                st.v.insert(p, t);
            } else {
                return Err(Error::Checkpoint(format!("bad entry `{name}`")));
            }
        } else if name == "meta.iter" {
            state.iter = tensor_to_u64(&t)?;
        } else {
            // meta.seed stays in the store until the caller has checked it.
            state.weights.insert(name, t);
        }
    }
    if !state.weights.contains("meta.seed") {
        return Err(Error::Checkpoint("not a training checkpoint (missing meta.seed)".into()));
    }
    for (name, shape) in expected_entries(model)? {
        let t = state.weights.get(&name)?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "`{name}` has shape {:?} but the configuration needs {shape:?}",
                t.shape()
            )));
        }
    }
    Ok(state)
}

/// Runs `trainer` to its configured iteration count, appending log rows to
/// `out_dir/train_log.csv` and writing checkpoints every `checkpoint_every`
/// iterations and at the end.
pub fn train_run(trainer: &mut Trainer, out_dir: &Path) -> Result<TrainLog> {
    std::fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join(LOG_FILE);
    let fresh = trainer.iteration() == 0 || !log_path.exists();
    let mut log_file = OpenOptions::new().create(true).write(true).append(!fresh).truncate(fresh).open(&log_path)?;
    if fresh {
        writeln!(log_file, "{LOG_HEADER}")?;
    }
    let mut log = TrainLog::default();
    let total = trainer.config().iterations;
    while trainer.iteration() < total {
        let row = trainer.step()?;
        let it = row.iter;
        if it % trainer.config().log_every == 0 || it == total {
            writeln!(log_file, "{}", row.to_csv())?;
            log_file.flush()?;
            log.rows.push(row);
        }
        if it % trainer.config().checkpoint_every == 0 || it == total {
            checkpoint::save(&trainer.checkpoint(), checkpoint_path(out_dir, it))?;
        }
    }
    Ok(log)
}

fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Mirror-pads a `3 x H x W` image on the bottom and right.
pub fn reflect_pad(img: &Tensor, new_h: usize, new_w: usize) -> Result<Tensor> {
    let (h, w) = image_dims(img)?;
    if new_h < h || new_w < w {
        return Err(Error::geometry("reflect_pad", format!("{h}x{w} cannot pad to {new_h}x{new_w}")));
    }
    let d = img.data();
    Ok(Tensor::from_fn(&[3, new_h, new_w], |i| {
        let c = i / (new_h * new_w);
        let (y, x) = ((i / new_w) % new_h, i % new_w);
        d[c * h * w + reflect_index(y, h) * w + reflect_index(x, w)]
    }))
}

pub fn crop(img: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (ih, iw) = image_dims(img)?;
    if h > ih || w > iw {
        return Err(Error::geometry("crop", format!("{ih}x{iw} cannot crop to {h}x{w}")));
    }
    let d = img.data();
    Ok(Tensor::from_fn(&[3, h, w], |i| {
        let c = i / (h * w);
        let (y, x) = ((i / w) % h, i % w);
        d[c * ih * iw + y * iw + x]
    }))
}

/// Eval-mode generator on a `3 x H x W` image in [0, 1]. Sides that are not
/// multiples of 8 are mirror-padded up and the output cropped back.
pub fn derain(weights: &WeightStore<f32>, image: &Tensor) -> Result<Tensor> {
    let k = weights.get("g.conv1.kernel")?.shape()[0];
    let g = Generator::new(GeneratorConfig { k })?;
    let (h, w) = image_dims(image)?;
    let up = |n: usize| n.div_ceil(8).max(1) * 8;
    let padded = reflect_pad(image, up(h), up(w))?;
    let tape = Tape::new();
    let gp = Params::bind(&tape, weights, "g.", false);
    let x = tape.constant(stack_images(&[&to_signed(&padded)])?);
    let out = g.forward(x, &gp, Mode::Eval, &mut Vec::new())?;
    let out = unstack_image(&out.value(), 0)?;
    crop(&from_signed(&out), h, w)
}

/// Names of trainable generator parameters (no batch-norm buffers).
pub fn generator_parameter_names(weights: &WeightStore<f32>) -> Vec<String> {
    weights.with_prefix("g.").map(|(n, _)| n).filter(|n| !is_buffer(n)).map(str::to_string).collect()
}
