//! `mman`: data generation, training, evaluation and experiment sweeps.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use mman_core::data::{generate_synthetic, load_dataset, save_dataset, speaker_split, Complementarity, Conversation, Utterance};
use mman_core::experiment::{run_experiment, ExperimentConfig};
use mman_core::gradcheck::Stencil;
use mman_core::metrics::{emit_confusion_plot, evaluate, render_confusion};
use mman_core::models::{analytic_parameter_count, count_parameters};
use mman_core::training::{train_fusion_head, train_subnetwork};
use mman_core::{checkpoint, Architecture, EvalReport, Model, TrainConfig, TrainReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use config::ConfigArgs;

#[derive(Parser, Debug)]
#[command(name = "mman", version, about = "Tri-modal attention networks for utterance emotion recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset as JSONL.
    Generate(GenerateArgs),
    /// Split a dataset into speaker-disjoint train and test files.
    Split(SplitArgs),
    /// Train a single-stage model (speech, visual, text, ef, mma).
    Train(TrainArgs),
    /// Assemble trained sub-networks into lf or mman and train the fusion head.
    TrainFusion(TrainFusionArgs),
    /// Evaluate a checkpoint and write its report and confusion matrix.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Print parameter counts per architecture.
    CountParams(CountParamsArgs),
    /// Run a (variant, seed) grid and write the report bundle.
    Experiment(ExperimentArgs),
    /// Render the normalized confusion matrix of a saved eval report.
    Plot(PlotArgs),
}

#[derive(clap::Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output JSONL file.
    #[arg(short, long)]
    out: PathBuf,
    /// Generator seed (overrides data.synthetic.seed).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    conversations: Option<usize>,
    #[arg(long)]
    speakers: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Redundant,
    Complementary,
    Xor,
}

#[derive(clap::Args, Debug)]
struct SplitArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset to split.
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
    /// Fraction of speakers in the training side (overrides data.split_fraction).
    #[arg(long)]
    fraction: Option<f64>,
    /// Overrides data.split_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of classes in the file (defaults to model.num_classes).
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(clap::Args, Debug, Clone)]
struct TrainingFlags {
    /// Training data; defaults to the training side of the config's [data].
    #[arg(short, long)]
    data: Option<PathBuf>,
    /// Output directory for checkpoint.bin, train_log.jsonl and train_report.json.
    #[arg(short, long)]
    out: PathBuf,
    /// Overrides the config's epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Overrides the config's learning rate.
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    /// Seed for initialization and shuffling.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// speech, visual, text, ef or mma.
    #[arg(short, long)]
    arch: Architecture,
    #[command(flatten)]
    flags: TrainingFlags,
}

#[derive(clap::Args, Debug)]
struct TrainFusionArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// lf or mman.
    #[arg(short, long)]
    arch: Architecture,
    /// Trained sub-network checkpoints (repeat the flag).
    #[arg(long = "sub", required = true)]
    subs: Vec<PathBuf>,
    #[command(flatten)]
    flags: TrainingFlags,
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// checkpoint.bin from `train`, `train-fusion` or `experiment`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluation data; defaults to the test side of the config's [data].
    #[arg(short, long)]
    data: Option<PathBuf>,
    /// Directory for eval_report.json, confusion.txt and confusion.csv.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StencilArg {
    Central,
    FivePoint,
}

#[derive(clap::Args, Debug)]
struct GradcheckArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Architectures to check; all by default.
    #[arg(short, long, value_delimiter = ',')]
    arch: Vec<Architecture>,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, value_enum, default_value_t = StencilArg::Central)]
    stencil: StencilArg,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Use the built-in tiny dimensions instead of the config's [model].
    #[arg(long)]
    tiny: bool,
    /// Seed for parameters and random inputs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    conversations: usize,
    /// Utterances per conversation.
    #[arg(long, default_value_t = 3)]
    length: usize,
}

#[derive(clap::Args, Debug)]
struct CountParamsArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(short, long, value_delimiter = ',')]
    arch: Vec<Architecture>,
    /// List every tensor.
    #[arg(long)]
    by_tensor: bool,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args, Debug)]
struct ExperimentArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Bundle directory.
    #[arg(short, long)]
    out: PathBuf,
    /// Overrides experiment.seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Overrides experiment.variants.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<Architecture>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(clap::Args, Debug)]
struct PlotArgs {
    /// eval_report.json written by `eval` or `experiment`.
    #[arg(short, long)]
    report: PathBuf,
    /// Text grid path; the CSV goes next to it. Defaults to confusion.txt
    /// beside the report.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

/// Error chain on one line, dropping causes a parent message already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let c = cause.to_string();
        if msg.contains(&c) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&c);
    }
    msg
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::TrainFusion(a) => train_fusion(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::CountParams(a) => count_params(a),
        Command::Experiment(a) => experiment(a),
        Command::Plot(a) => plot(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let mut spec = cfg.data.synthetic.unwrap_or_default();
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(m) = a.mode {
        spec.mode = match m {
            ModeArg::Redundant => Complementarity::Redundant,
            ModeArg::Complementary => Complementarity::Complementary,
            ModeArg::Xor => Complementarity::Xor,
        };
    }
    if let Some(n) = a.conversations {
        spec.n_conversations = n;
    }
    if let Some(n) = a.speakers {
        spec.n_speakers = n;
    }
    if let Some(c) = a.classes {
        spec.num_classes = c;
    }
    let data = generate_synthetic(&spec)?;
    save_dataset(&a.out, &data)?;
    println!(
        "wrote {} conversations, {} utterances to {}",
        data.len(),
        mman_core::data::num_utterances(&data),
        a.out.display()
    );
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let classes = a.classes.unwrap_or(cfg.model.num_classes);
    let data = load_dataset(&a.input, classes)?;
    let (train, test) = speaker_split(
        &data,
        a.fraction.unwrap_or(cfg.data.split_fraction),
        a.seed.unwrap_or(cfg.data.split_seed),
    )?;
    save_dataset(&a.train_out, &train)?;
    save_dataset(&a.test_out, &test)?;
    println!("train: {} conversations, test: {} conversations", train.len(), test.len());
    Ok(())
}

fn training_data(cfg: &ExperimentConfig, data: &Option<PathBuf>, classes: usize, side: usize) -> Result<Vec<Conversation>> {
    match data {
        Some(p) => Ok(load_dataset(p, classes)?),
        None => {
            if cfg.data.synthetic.is_none() && cfg.data.path.is_none() {
                bail!("no data: pass --data or give the config a [data] section");
            }
            let (train, test) = cfg.load_data()?;
            Ok(if side == 0 { train } else { test })
        }
    }
}

fn train_config(base: &TrainConfig, flags: &TrainingFlags) -> TrainConfig {
    let mut t = base.clone();
    if let Some(e) = flags.epochs {
        t.epochs = e;
    }
    if let Some(lr) = flags.learning_rate {
        t.learning_rate = lr;
    }
    if let Some(s) = flags.seed {
        t.seed = s;
    }
    t
}

fn save_training(out: &Path, model: &Model, report: &TrainReport) -> Result<()> {
    create_dir(out)?;
    let mut log = Vec::new();
    report.write_jsonl(&mut log)?;
    write(&out.join("train_log.jsonl"), log)?;
    write(&out.join("train_report.json"), serde_json::to_string_pretty(report)?)?;
    checkpoint::save(model, out.join("checkpoint.bin"))?;
    let last = report.epochs.last().ok_or_else(|| anyhow!("no epochs recorded"))?;
    println!(
        "{}: {} epochs, final mean loss {:.6}, train accuracy {:.4}; wrote {}",
        report.model,
        last.epoch,
        last.mean_loss,
        last.train_acc,
        out.join("checkpoint.bin").display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.load()?;
    if a.arch.is_two_stage() {
        bail!("{} is trained with `train-fusion` from sub-network checkpoints", a.arch.display_name());
    }
    let tcfg = train_config(&cfg.training, &a.flags);
    let data = training_data(&cfg, &a.flags.data, cfg.model.num_classes, 0)?;
    let mut model = Model::new(a.arch, &cfg.model, tcfg.seed)?;
    let report = train_subnetwork(&mut model, &data, &tcfg)?;
    save_training(&a.flags.out, &model, &report)
}

fn train_fusion(a: TrainFusionArgs) -> Result<()> {
    let cfg = a.config.load()?;
    if !a.arch.is_two_stage() {
        bail!("{} has no fusion stage; use `train`", a.arch.display_name());
    }
    let subs = a
        .subs
        .iter()
        .map(|p| checkpoint::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let model_cfg = subs[0].config.clone();
    let tcfg = train_config(cfg.fusion_config(), &a.flags);
    let data = training_data(&cfg, &a.flags.data, model_cfg.num_classes, 0)?;
    let refs: Vec<&Model> = subs.iter().collect();
    let mut model = Model::assemble(a.arch, &model_cfg, tcfg.seed, &refs)?;
    let report = train_fusion_head(&mut model, &data, &tcfg)?;
    save_training(&a.flags.out, &model, &report)
}

fn print_report(report: &EvalReport) {
    print!("{}", render_confusion(report));
}

fn eval(a: EvalArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let model = checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let data = training_data(&cfg, &a.data, model.num_classes(), 1)?;
    let name = a
        .data
        .as_ref()
        .map_or_else(|| "config test split".to_string(), |p| p.display().to_string());
    let report = evaluate(&model, &data, &name)?;
    if let Some(out) = &a.out {
        create_dir(out)?;
        write(&out.join("eval_report.json"), serde_json::to_string_pretty(&report)?)?;
        emit_confusion_plot(&report, out.join("confusion.txt"))?;
    }
    print_report(&report);
    Ok(())
}

fn random_conversations(rng: &mut ChaCha8Rng, n: usize, m: usize, dims: [usize; 3], classes: usize) -> Vec<Conversation> {
    let mut vec = |k: usize| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let mut out = Vec::new();
    for c in 0..n {
        let utterances = (0..m)
            .map(|_| Utterance {
                s: vec(dims[0]),
                v: vec(dims[1]),
                t: vec(dims[2]),
                label: 0,
            })
            .collect();
        out.push(Conversation {
            id: format!("gc{c}"),
            speaker: format!("gc{c}"),
            split: None,
            utterances,
        });
    }
    for conv in &mut out {
        for u in &mut conv.utterances {
            u.label = rng.random_range(0..classes);
        }
    }
    out
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let model_cfg = if a.tiny { mman_core::ModelConfig::tiny() } else { cfg.model.clone() };
    let archs = if a.arch.is_empty() { Architecture::ALL.to_vec() } else { a.arch.clone() };
    let stencil = match a.stencil {
        StencilArg::Central => Stencil::Central,
        StencilArg::FivePoint => Stencil::FivePoint,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let data = random_conversations(&mut rng, a.conversations, a.length, model_cfg.input_dims(), model_cfg.num_classes);
    let mut failed = Vec::new();
    for arch in archs {
        let model = Model::new(arch, &model_cfg, a.seed)?;
        let gc = model.grad_check_with(&data, a.step, stencil)?;
        let (name, idx) = gc.worst.clone().unwrap_or_default();
        let (an, nu) = gc.worst_values.unwrap_or_default();
        let ok = gc.max_relative_error < a.tolerance;
        println!(
            "{:<10} {:>7} scalars  max rel err {:.3e}  max abs err {:.3e}  worst {name}[{idx}] analytic {an:.4e} numeric {nu:.4e}  {}",
            arch.key(),
            gc.checked,
            gc.max_relative_error,
            gc.max_abs_error,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(arch.key());
        }
    }
    if !failed.is_empty() {
        bail!("relative error above {} for {}", a.tolerance, failed.join(", "));
    }
    Ok(())
}

fn count_params(a: CountParamsArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let archs = if a.arch.is_empty() { Architecture::ALL.to_vec() } else { a.arch.clone() };
    let mut counts = Vec::new();
    for arch in archs {
        let model = Model::new(arch, &cfg.model, 0)?;
        let c = count_parameters(&model);
        if c.total != analytic_parameter_count(arch, &cfg.model) {
            bail!("{}: store holds {} scalars but the closed form gives {}", c.model, c.total, analytic_parameter_count(arch, &cfg.model));
        }
        counts.push(c);
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&counts)?);
        return Ok(());
    }
    println!("{:<14} {:>10}", "model", "parameters");
    for c in &counts {
        println!("{:<14} {:>10}", c.model, c.total);
        if a.by_tensor {
            for (name, n) in &c.by_tensor {
                println!("  {name:<36} {n:>8}");
            }
        }
    }
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if !a.seeds.is_empty() {
        cfg.experiment.seeds = a.seeds.clone();
    }
    if !a.variants.is_empty() {
        cfg.experiment.variants = a.variants.clone();
    }
    let summary = match a.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building thread pool")?
            .install(|| run_experiment(&cfg, &a.out))?,
        None => run_experiment(&cfg, &a.out)?,
    };
    print!("{}", summary.to_tsv());
    let failures: usize = summary.rows.iter().map(|r| r.failures).sum();
    if failures > 0 {
        eprintln!("{failures} cell(s) failed; see FAILED files under {}", a.out.display());
    }
    Ok(())
}

fn plot(a: PlotArgs) -> Result<()> {
    let text = fs::read_to_string(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    let report: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.report.display()))?;
    let out = a
        .out
        .unwrap_or_else(|| a.report.parent().unwrap_or(Path::new("")).join("confusion.txt"));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let (txt, csv) = emit_confusion_plot(&report, &out)?;
    print_report(&report);
    println!("wrote {} and {}", txt.display(), csv.display());
    Ok(())
}
