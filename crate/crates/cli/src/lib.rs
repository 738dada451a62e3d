//! The `derain` command line: dataset synthesis, training, inference,
//! evaluation and the gradient self-check behind one binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use derain_core::io::config::parse_range;
use derain_core::io::image::{fit_square, is_image_path};
use derain_core::io::{decode_image, encode_image, load_checkpoint, DatasetLayout, ImagePair, RunConfig};
use derain_core::metrics::{evaluate_corpus, Metric};
use derain_core::models::PerceptualSource;
use derain_core::rain::{build_dataset, RainRanges, StreakMode, SynthOptions};
use derain_core::train::{train_run, TrainConfig, Trainer, TRAIN_KEYS};
use derain_core::{gradcheck, parallel, Error};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Resolved training config written next to the checkpoints.
pub const RUN_CONFIG_FILE: &str = "config.txt";

#[derive(Parser, Debug)]
#[command(name = "derain", version, about = "Single-image de-raining with a conditional GAN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render rain over clean images into a paired dataset.
    Synth(SynthArgs),
    /// Train the generator/discriminator pair on a paired dataset.
    Train(TrainArgs),
    /// Run a trained generator over an image or a directory.
    Derain(DerainArgs),
    /// Score clean/rainy pairs with PSNR, SSIM, UQI and VIF.
    Evaluate(EvaluateArgs),
    /// Finite-difference check of every operator, loss and network.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    clean_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_name = "A,B", allow_hyphen_values = true)]
    intensity_range: Option<String>,
    #[arg(long, value_name = "A,B", allow_hyphen_values = true)]
    angle_range: Option<String>,
    #[arg(long, value_name = "A,B", allow_hyphen_values = true)]
    density_range: Option<String>,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value = "rain", value_name = "rain|snow")]
    mode: String,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_name = "gen|cgan|cgan-p|id-cgan")]
    ablation: Option<String>,
    /// `key = value` file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iters: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    lambda_a: Option<String>,
    #[arg(long)]
    lambda_p: Option<String>,
    #[arg(long)]
    size: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Checkpoint to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Checkpoint holding `v.*` weights for the perceptual network.
    #[arg(long)]
    perceptual_weights: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DerainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Dataset root with `clean/` and `rainy/` subdirectories.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "psnr,ssim,uqi,vif")]
    metrics: String,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Exit status for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

/// Runs the CLI on `argv` (program name first) and returns the exit status.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    parallel::configure_from_env();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Derain(a) => derain(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Gradcheck(a) => return run_gradcheck(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn synth(a: SynthArgs) -> Result<(), Error> {
    let mut ranges = RainRanges::default();
    for (flag, slot) in [
        (&a.intensity_range, &mut ranges.intensity),
        (&a.angle_range, &mut ranges.angle_deg),
        (&a.density_range, &mut ranges.density),
    ] {
        if let Some(s) = flag {
            *slot = parse_range(s)?;
        }
    }
    let mode: StreakMode = a.mode.parse()?;
    let opts = SynthOptions { ranges, count: a.count, seed: a.seed, size: a.size, mode };
    let manifest = build_dataset(&a.clean_dir, &a.out, &opts)?;
    println!("wrote {} pairs to {}", manifest.rows.len(), a.out.display());
    Ok(())
}

/// Default < config file < flags.
fn train_config(a: &TrainArgs) -> Result<TrainConfig, Error> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &a.config {
        cfg.apply_file(&RunConfig::load(path, TRAIN_KEYS)?)?;
    }
    let flags = [
        ("ablation", &a.ablation),
        ("iterations", &a.iters),
        ("batch_size", &a.batch),
        ("learning_rate", &a.lr),
        ("lambda_a", &a.lambda_a),
        ("lambda_p", &a.lambda_p),
        ("image_size", &a.size),
        ("seed", &a.seed),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads the dataset and center-fits every image to the training size.
fn load_training_pairs(root: &Path, size: usize) -> Result<Vec<ImagePair>, Error> {
    let pairs = DatasetLayout::new(root).load()?;
    pairs
        .into_iter()
        .map(|p| Ok(ImagePair { rainy: fit_square(&p.rainy, size)?, clean: fit_square(&p.clean, size)?, name: p.name }))
        .collect()
}

fn train(a: TrainArgs) -> Result<(), Error> {
    let cfg = train_config(&a)?;
    let pairs = load_training_pairs(&a.data, cfg.image_size)?;
    let mut trainer = match &a.resume {
        Some(ckpt) => Trainer::resume(cfg, &pairs, load_checkpoint(ckpt)?)?,
        None => {
            let source = a.perceptual_weights.clone().map_or(PerceptualSource::Seeded, PerceptualSource::Checkpoint);
            Trainer::new(cfg, &pairs, source)?
        }
    };
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join(RUN_CONFIG_FILE), trainer.config().to_config_text())?;
    let start = trainer.iteration();
    let log = train_run(&mut trainer, &a.out)?;
    if let Some(last) = log.rows.last() {
        println!("trained iterations {}..{}; final {}", start + 1, trainer.iteration(), last.to_csv());
    }
    Ok(())
}

fn derain(a: DerainArgs) -> Result<(), Error> {
    let weights = load_checkpoint(&a.checkpoint)?;
    if a.input.is_dir() {
        let inputs: Vec<PathBuf> = std::fs::read_dir(&a.input)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .filter(|p| p.is_file() && is_image_path(p))
            .collect();
        if inputs.is_empty() {
            return Err(Error::Data(format!("no PNG or PPM images in {}", a.input.display())));
        }
        std::fs::create_dir_all(&a.output)?;
        let mut inputs = inputs;
        inputs.sort();
        let results = parallel::map_slice(&inputs, |p| {
            let out = a.output.join(p.file_name().expect("listed files have names"));
            decode_image(p).and_then(|img| derain_core::train::derain(&weights, &img)).and_then(|y| encode_image(&y, out))
        });
        for r in results {
            r?;
        }
        println!("de-rained {} images into {}", inputs.len(), a.output.display());
    } else {
        let y = derain_core::train::derain(&weights, &decode_image(&a.input)?)?;
        if let Some(dir) = a.output.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        encode_image(&y, &a.output)?;
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<(), Error> {
    let metrics = Metric::parse_list(&a.metrics)?;
    let pairs = DatasetLayout::new(&a.pairs).pairs()?;
    let report = evaluate_corpus(&pairs, &metrics)?;
    for (file, why) in &report.failures {
        eprintln!("skipped {file}: {why}");
    }
    report.write_csv(&a.out)?;
    let csv = report.to_csv();
    println!("{}", csv.lines().last().unwrap_or_default());
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> i32 {
    match gradcheck::run_suite(a.seed) {
        Ok(report) => {
            print!("{}", report.render());
            if report.all_passed() {
                EXIT_OK
            } else {
                EXIT_NUMERICAL
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
