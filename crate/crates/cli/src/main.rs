//! `pridnet`: train, apply and evaluate the pyramid denoiser from the shell.
//!
//! Exit codes: 0 success, 1 failed gradient check, 2 usage or data error,
//! 3 numerical failure during training.

mod config;
mod pairs;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use pridnet::data::{extract_patch_pairs, fixture_image, synthesize_pair, PatchPair};
use pridnet::experiment::{write_ablation_csv, DeskExperiment};
use pridnet::gradcheck::GradCheckOptions;
use pridnet::gradsuite::{run_scope, Scope};
use pridnet::graph::AdjointFault;
use pridnet::metrics::{psnr, ssim};
use pridnet::model::PridNet;
use pridnet::png_io::{read_png, write_png, PngDepth};
use pridnet::train::{write_loss_csv, Trainer};
use pridnet::{Real, Tensor};

use config::CliConfig;

#[derive(Debug)]
pub enum CliError {
    Data(String),
    NonFinite(String),
    CheckFailed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Data(_) => 2,
            CliError::NonFinite(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Data(m) | CliError::CheckFailed(m) => f.write_str(m),
            CliError::NonFinite(m) => write!(f, "training diverged: {m}"),
        }
    }
}

impl From<pridnet::Error> for CliError {
    fn from(e: pridnet::Error) -> Self {
        match e {
            pridnet::Error::NonFinite(m) => CliError::NonFinite(m),
            e => CliError::Data(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "pridnet", version, about = "Pyramid real-image denoising network")]
struct Cli {
    /// Refuse to run unless arithmetic is 64-bit.
    #[arg(long, global = true)]
    f64: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on clean PNGs with synthetic noise; writes a checkpoint and loss CSV.
    Train(TrainArgs),
    /// Denoise one PNG.
    Denoise(DenoiseArgs),
    /// PSNR/SSIM over `<name>_noisy.png` / `<name>_clean.png` pairs.
    Eval(EvalArgs),
    /// Finite-difference gradient verification.
    Gradcheck(GradcheckArgs),
    /// Print a checkpoint's configuration and tensors.
    Inspect(InspectArgs),
    /// Write procedural clean fixtures and their noisy copies.
    Synth(SynthArgs),
    /// Print a canonical configuration file.
    Config(ConfigArgs),
    /// Write a freshly initialised checkpoint.
    Init(InitArgs),
    /// Desk-scale ablation: full model and one run per removed component.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of clean PNGs; files ending in `_noisy.png` are skipped.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value = "model.prc")]
    out: PathBuf,
    /// Loss CSV path; defaults to the checkpoint path with a `.csv` extension.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Seeds initialisation, shuffling and noise.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Scales the whole learning-rate schedule so it starts at this value.
    #[arg(long)]
    lr: Option<Real>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Patch stride; defaults to the patch size.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sixteen_bit: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Score the model's output instead of the noisy input.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// op, block or model.
    #[arg(long, default_value = "model")]
    scope: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scale every conv-weight adjoint by 1.01 to confirm the check bites.
    #[arg(long)]
    inject_fault: bool,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: Real,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    /// Noise level of the `_noisy.png` copies; 0 writes clean images only.
    #[arg(long, default_value_t = 0.1)]
    sigma: Real,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ConfigArgs {
    /// The small grayscale configuration instead of the full-size one.
    #[arg(long)]
    micro: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Residual model with a zero output layer: maps every image to itself.
    #[arg(long)]
    identity: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = if cli.f64 && std::mem::size_of::<Real>() != 8 {
        Err(CliError::Data("--f64 given but this binary was built with 32-bit arithmetic".into()))
    } else {
        run(cli.command)
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Train(a) => train(a),
        Command::Denoise(a) => denoise(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Inspect(a) => inspect(a),
        Command::Synth(a) => synth(a),
        Command::Config(a) => print_config(a),
        Command::Init(a) => init(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn load_png(path: &Path) -> CliResult<Tensor> {
    read_png(path).map_err(|e| io_err(path, e))
}

fn load_model(path: &Path) -> CliResult<PridNet> {
    PridNet::load_from_path(path).map_err(|e| io_err(path, e))
}

fn clean_images(dir: &Path, channels: usize) -> CliResult<Vec<(String, Tensor)>> {
    let mut files = pairs::png_files(dir)?;
    files.retain(|p| !pairs::stem(p).ends_with("_noisy"));
    if files.is_empty() {
        return Err(CliError::Data(format!("no PNG images in {}", dir.display())));
    }
    files
        .into_iter()
        .map(|p| {
            let img = load_png(&p)?;
            if img.shape().c != channels {
                return Err(io_err(&p, format!("has {} channels, the model expects {channels}", img.shape().c)));
            }
            Ok((pairs::stem(&p), img))
        })
        .collect()
}

fn train(a: TrainArgs) -> CliResult {
    let mut cfg = CliConfig::load_or_default(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.train.rng_seed = s;
        cfg.noise.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train = cfg.train.with_base_lr(lr);
    }
    if let Some(p) = a.patch {
        cfg.train.patch_size = p;
    }
    if let Some(b) = a.batch {
        cfg.train.batch_size = b;
    }
    cfg.train.validate()?;
    let p = cfg.train.patch_size;
    let stride = a.stride.unwrap_or(p);

    let images = clean_images(&a.dir, cfg.model.in_channels)?;
    let mut data: Vec<PatchPair> = Vec::new();
    for (i, (_, img)) in images.iter().enumerate() {
        let pair = synthesize_pair(img, &cfg.noise.with_seed(cfg.noise.seed.wrapping_add(i as u64)))?;
        data.extend(extract_patch_pairs(&pair, p, stride)?);
    }
    if data.is_empty() {
        return Err(CliError::Data(format!("no {p}x{p} patches fit in the images of {}", a.dir.display())));
    }

    let mut model = PridNet::new(cfg.model.clone(), cfg.train.rng_seed)?;
    println!(
        "training {} parameters on {} patches from {} images for {} epochs",
        model.param_count(),
        data.len(),
        images.len(),
        cfg.train.epochs
    );
    let mut trainer = Trainer::new(cfg.train.clone())?;
    let start = Instant::now();
    while !trainer.finished() {
        let r = trainer.run_epoch(&mut model, &data)?;
        if !a.quiet {
            println!("epoch {:>4}  lr {:.1e}  mean_l1 {:.6}", r.epoch, r.lr, r.mean_l1);
        }
    }
    model.save_to_path(&a.out).map_err(|e| io_err(&a.out, e))?;
    let csv = a.csv.unwrap_or_else(|| a.out.with_extension("csv"));
    let f = std::fs::File::create(&csv).map_err(|e| io_err(&csv, e))?;
    write_loss_csv(std::io::BufWriter::new(f), trainer.history()).map_err(|e| io_err(&csv, e))?;
    println!(
        "wrote {} and {} in {:.1}s",
        a.out.display(),
        csv.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn denoise(a: DenoiseArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let img = load_png(&a.input)?;
    let s = img.shape();
    if s.c != model.config.in_channels {
        return Err(io_err(
            &a.input,
            format!("has {} channels, the model expects {}", s.c, model.config.in_channels),
        ));
    }
    let start = Instant::now();
    let out = model.denoise(&img)?;
    let elapsed = start.elapsed();
    let depth = if a.sixteen_bit { PngDepth::Sixteen } else { PngDepth::Eight };
    write_png(&a.out, &out, depth).map_err(|e| io_err(&a.out, e))?;
    println!("denoised {}x{} in {:.3}s -> {}", s.w, s.h, elapsed.as_secs_f64(), a.out.display());
    Ok(())
}

fn fmt_db(v: Real) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

fn eval(a: EvalArgs) -> CliResult {
    let found = pairs::find_pairs(&a.dir)?;
    let model = a.model.as_deref().map(load_model).transpose()?;
    let mut rows = Vec::new();
    for pair in &found {
        let noisy = load_png(&pair.noisy)?;
        let clean = load_png(&pair.clean)?;
        let candidate = match &model {
            Some(m) => m.denoise(&noisy).map_err(|e| io_err(&pair.noisy, e))?,
            None => noisy,
        };
        let p = psnr(&candidate, &clean, 1.0).map_err(|e| io_err(&pair.noisy, e))?;
        let s = ssim(&candidate, &clean).map_err(|e| io_err(&pair.noisy, e))?;
        rows.push((pair.name.clone(), p, s));
    }
    let n = rows.len() as Real;
    let mean_p = rows.iter().map(|r| r.1).sum::<Real>() / n;
    let mean_s = rows.iter().map(|r| r.2).sum::<Real>() / n;

    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(4);
    println!("{:<width$}  {:>10}  {:>8}", "name", "PSNR", "SSIM");
    for (name, p, s) in &rows {
        println!("{name:<width$}  {:>10}  {s:>8.4}", fmt_db(*p));
    }
    println!("{:<width$}  {:>10}  {mean_s:>8.4}", "mean", fmt_db(mean_p));

    let mut csv = String::from("name,psnr,ssim\n");
    for (name, p, s) in &rows {
        csv.push_str(&format!("{name},{p},{s}\n"));
    }
    csv.push_str(&format!("mean,{mean_p},{mean_s}\n"));
    println!();
    print!("{csv}");
    if let Some(path) = a.csv {
        std::fs::write(&path, csv).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CliResult {
    if std::mem::size_of::<Real>() != 8 {
        return Err(CliError::Data("gradient checks need a 64-bit build".into()));
    }
    let scope: Scope = a.scope.parse()?;
    let opts = GradCheckOptions {
        tolerance: a.tolerance,
        fault: a.inject_fault.then_some(AdjointFault::ScaleConvWeight(1.01)),
        ..GradCheckOptions::default()
    };
    let reports = run_scope(scope, a.seed, &opts)?;
    let failed = reports.iter().filter(|r| !r.passed()).count();
    for r in &reports {
        println!("{r}");
    }
    if failed > 0 {
        return Err(CliError::CheckFailed(format!("{failed} of {} checks failed", reports.len())));
    }
    println!("all {} checks passed", reports.len());
    Ok(())
}

fn inspect(a: InspectArgs) -> CliResult {
    let model = load_model(&a.model)?;
    println!("{}", serde_json::to_string_pretty(&model.config).expect("config serializes"));
    println!("{} tensors, {} parameters", model.params.len(), model.param_count());
    for (name, t) in model.params.iter() {
        println!("  {name:<24} {}", t.shape());
    }
    Ok(())
}

fn synth(a: SynthArgs) -> CliResult {
    if !matches!(a.channels, 1 | 3) {
        return Err(CliError::Data(format!("--channels must be 1 or 3, got {}", a.channels)));
    }
    std::fs::create_dir_all(&a.dir).map_err(|e| io_err(&a.dir, e))?;
    let noise = CliConfig::default().noise;
    for i in 0..a.count {
        let seed = a.seed.wrapping_mul(1000).wrapping_add(i as u64);
        let clean = fixture_image(seed, a.channels, a.size, a.size);
        let name = format!("fixture_{i:02}");
        let path = a.dir.join(format!("{name}_clean.png"));
        write_png(&path, &clean, PngDepth::Sixteen).map_err(|e| io_err(&path, e))?;
        if a.sigma > 0.0 {
            let spec = pridnet::data::NoiseSpec { sigma: a.sigma, seed, ..noise.clone() };
            let pair = synthesize_pair(&clean, &spec)?;
            let path = a.dir.join(format!("{name}_noisy.png"));
            write_png(&path, &pair.noisy, PngDepth::Sixteen).map_err(|e| io_err(&path, e))?;
        }
    }
    println!("wrote {} fixtures to {}", a.count, a.dir.display());
    Ok(())
}

fn print_config(a: ConfigArgs) -> CliResult {
    let cfg = if a.micro { CliConfig::micro() } else { CliConfig::default() };
    let json = cfg.to_json();
    match a.out {
        Some(p) => std::fs::write(&p, json + "\n").map_err(|e| io_err(&p, e)),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn init(a: InitArgs) -> CliResult {
    let mut cfg = CliConfig::load_or_default(a.config.as_deref())?.model;
    if a.identity {
        cfg.predict_residual = true;
    }
    let mut model = PridNet::new(cfg, a.seed)?;
    if a.identity {
        for (name, t) in model.params.iter_mut() {
            if name.starts_with("out.") {
                *t = Tensor::zeros(t.shape());
            }
        }
    }
    model.save_to_path(&a.out).map_err(|e| io_err(&a.out, e))?;
    println!("wrote {} ({} parameters)", a.out.display(), model.param_count());
    Ok(())
}

fn ablate(a: AblateArgs) -> CliResult {
    let mut exp = DeskExperiment::standard(a.seed);
    if let Some(e) = a.epochs {
        exp.plan = pridnet::train::TrainPlan {
            rng_seed: exp.plan.rng_seed,
            ..pridnet::train::TrainPlan::desk(e)
        };
    }
    std::fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let start = Instant::now();
    let runs = exp.run_ablation()?;
    println!("{:<24} {:>10} {:>10} {:>8} {:>8}", "variant", "PSNR in", "PSNR out", "SSIM in", "SSIM out");
    for r in &runs {
        let s = r.scores;
        println!(
            "{:<24} {:>10.3} {:>10.3} {:>8.4} {:>8.4}",
            r.label, s.psnr_noisy, s.psnr_denoised, s.ssim_noisy, s.ssim_denoised
        );
        let path = a.out.join(format!("loss_{}.csv", r.label));
        std::fs::write(&path, r.loss_csv()).map_err(|e| io_err(&path, e))?;
    }
    let path = a.out.join("ablation.csv");
    let f = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    write_ablation_csv(f, &runs).map_err(|e| io_err(&path, e))?;
    println!("{} epochs per variant, {:.1}s total; tables in {}", exp.plan.epochs, start.elapsed().as_secs_f64(), a.out.display());
    Ok(())
}
