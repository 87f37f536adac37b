//! Subcommands of the `natias` binary. Each writes its resolved configuration
//! next to its outputs so a run can be repeated from that file alone.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use natias::attacks::{Method, OutcomeRecord};
use natias::attribution::{coupled_neuron_attribution, neuron_attribution, PathSpec};
use natias::costs::CostKind;
use natias::diffnet::checkpoint::{load_checkpoint, save_checkpoint};
use natias::diffnet::{build_model, train_images, Model};
use natias::eval::{self, Corpus, Zoo};
use natias::image::{load_pgm_dir, read_pgm_file, write_pgm_file, GrayImage};
use natias::rng::{derive_seed, Rng};
use natias::synth::synth_dataset;
use serde::{Deserialize, Serialize};

pub use config::RunConfig;

/// Marks an error as a validation failure (exit code 1).
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub const SEED_ENV: &str = "NATIAS_SEED";

#[derive(Debug, Parser)]
#[command(name = "natias", version, about = "Transferable adversarial steganography toolkit")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; falls back to the config file, then NATIAS_SEED, then 1.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-image work.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a cover dataset as PGM files plus a manifest.
    Gen(GenArgs),
    /// Train a detector on covers and their conventional stegos.
    Train(TrainArgs),
    /// Attack every cover in a directory against a trained detector.
    Attack(AttackArgs),
    /// Evaluate a detector on cover/stego directories, or re-aggregate outcomes.
    Eval(EvalArgs),
    /// Transferability matrix across non-target detectors.
    Transfer(ExperimentArgs),
    /// Retrain detectors on attack stegos.
    Retrain(ExperimentArgs),
    /// Attack success and transfer per target tap.
    Ablate(ExperimentArgs),
    /// Render a neuron-attribution heatmap for one image.
    Attribute(AttributeArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of covers (default from `[dataset]`).
    #[arg(long)]
    pub n: Option<usize>,
    /// Cover side length in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of cover PGMs.
    #[arg(long)]
    pub covers: PathBuf,
    /// Embedding payload in bits per pixel.
    #[arg(long)]
    pub payload: Option<f64>,
    /// Cost function for the conventional stegos: hill or suniward.
    #[arg(long)]
    pub cost: Option<CostKind>,
    /// Training epochs (default from `[train]`).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Target detector checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of cover PGMs.
    #[arg(long)]
    pub covers: PathBuf,
    /// adv-emb, natias-adv, sps-enh, natias-sps, usgs or natias-usgs.
    #[arg(long)]
    pub method: Method,
    /// Embedding payload in bits per pixel.
    #[arg(long)]
    pub payload: Option<f64>,
    /// Cost function: hill or suniward.
    #[arg(long)]
    pub cost: Option<CostKind>,
    /// Target layer for the NATIAS variants (default: `[attack] target_tap`, else the model's target tap).
    #[arg(long)]
    pub tap: Option<String>,
    /// Attack only the first this-many covers.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Output directory for stegos and `outcomes.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Outcomes JSON-lines file to re-aggregate.
    #[arg(long, conflicts_with_all = ["model", "covers", "stegos"])]
    pub outcomes: Option<PathBuf>,
    /// Detector checkpoint.
    #[arg(long, requires_all = ["covers", "stegos"])]
    pub model: Option<PathBuf>,
    /// Directory of cover PGMs.
    #[arg(long)]
    pub covers: Option<PathBuf>,
    /// Directory of stego PGMs.
    #[arg(long)]
    pub stegos: Option<PathBuf>,
    /// Also write the JSON summary here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    /// Detector checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Input PGM.
    #[arg(long)]
    pub image: PathBuf,
    /// Layer whose neurons are attributed (default: the model's target tap).
    #[arg(long)]
    pub tap: Option<String>,
    /// Path sample count.
    #[arg(long = "M", alias = "steps", default_value_t = 50)]
    pub steps: usize,
    /// Use the coupled (secant) estimator.
    #[arg(long)]
    pub coupled: bool,
    /// Heatmap PGM path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also dump the raw attribution values.
    #[arg(long)]
    pub raw: Option<PathBuf>,
}

/// Exit code: 1 for validation failures, 2 for runtime failures.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use natias::Error as E;
    if err.downcast_ref::<Invalid>().is_some() {
        return 1;
    }
    for cause in err.chain() {
        if cause.downcast_ref::<Invalid>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io(_) | E::NoConvergence(_) | E::InvalidCost { .. } => 2,
                _ => 1,
            };
        }
    }
    2
}

/// Seed precedence: flag, config file, environment, 1.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Invalid(format!("{SEED_ENV}=`{v}` is not an unsigned integer")).into()),
        Err(_) => Ok(1),
    }
}

pub fn run(cli: Cli, argv: &[String]) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.seed = Some(resolve_seed(cli.seed, cfg.seed)?);
    cfg.jobs = Some(cli.jobs.or(cfg.jobs).unwrap_or(1));
    let header = format!("# natias {}\n", argv.join(" "));
    match cli.command {
        Command::Gen(a) => cmd_gen(cfg, a, &header),
        Command::Train(a) => cmd_train(cfg, a, &header),
        Command::Attack(a) => cmd_attack(cfg, a, &header),
        Command::Eval(a) => cmd_eval(cfg, a),
        Command::Transfer(a) => cmd_experiment(cfg, a, &header, Experiment::Transfer),
        Command::Retrain(a) => cmd_experiment(cfg, a, &header, Experiment::Retrain),
        Command::Ablate(a) => cmd_experiment(cfg, a, &header, Experiment::Ablate),
        Command::Attribute(a) => cmd_attribute(cfg, a, &header),
    }
}

fn seed(cfg: &RunConfig) -> u64 {
    cfg.seed.expect("resolved")
}

fn jobs(cfg: &RunConfig) -> usize {
    cfg.jobs.expect("resolved")
}

fn emit_config(cfg: &RunConfig, header: &str, path: &Path) -> Result<()> {
    fs::write(path, format!("{header}{}", cfg.to_toml())).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn sibling_config(file: &Path) -> PathBuf {
    let mut name = file.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".toml");
    file.with_file_name(name)
}

fn load_images(dir: &Path) -> Result<Vec<(String, GrayImage)>> {
    if !dir.is_dir() {
        bail!(Invalid(format!("{} is not a directory", dir.display())));
    }
    let images = load_pgm_dir(dir)?;
    if images.is_empty() {
        bail!(Invalid(format!("no PGM files in {}", dir.display())));
    }
    Ok(images)
}

fn load_model(path: &Path) -> Result<Model> {
    if !path.is_file() {
        bail!(Invalid(format!("checkpoint {} not found", path.display())));
    }
    Ok(load_checkpoint(path)?)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub n: usize,
    pub size: usize,
    pub seed: u64,
    pub files: Vec<String>,
}

fn cmd_gen(mut cfg: RunConfig, a: GenArgs, header: &str) -> Result<()> {
    cfg.dataset.n = a.n.unwrap_or(cfg.dataset.n);
    cfg.dataset.size = a.size.unwrap_or(cfg.dataset.size);
    let images = synth_dataset(cfg.dataset.n, cfg.dataset.size, seed(&cfg)).map_err(|e| Invalid(e.to_string()))?;
    create_dir(&a.out)?;
    let width = cfg.dataset.n.to_string().len().max(5);
    let mut files = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let name = format!("{i:0width$}.pgm");
        write_pgm_file(&a.out.join(&name), img)?;
        files.push(name);
    }
    let manifest = Manifest { n: cfg.dataset.n, size: cfg.dataset.size, seed: seed(&cfg), files };
    fs::write(a.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    emit_config(&cfg, header, &a.out.join("resolved.toml"))
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    train_pairs: usize,
    val_pairs: usize,
    test: eval::EvalReport,
    best_epoch: Option<usize>,
    val_accuracy: Vec<f64>,
}

fn cmd_train(mut cfg: RunConfig, a: TrainArgs, header: &str) -> Result<()> {
    cfg.dataset.payload = a.payload.unwrap_or(cfg.dataset.payload);
    cfg.dataset.cost = a.cost.unwrap_or(cfg.dataset.cost);
    cfg.train.epochs = a.epochs.unwrap_or(cfg.train.epochs);
    let covers: Vec<GrayImage> = load_images(&a.covers)?.into_iter().map(|(_, img)| img).collect();
    cfg.dataset.n = covers.len();
    cfg.dataset.size = covers[0].width();
    cfg.model.input_size = cfg.dataset.size;
    cfg.model.validate()?;
    let mut exp = cfg.experiment();
    exp.data_seed = seed(&cfg);
    let corpus = Corpus::from_covers(covers, &exp)?;
    if corpus.train.is_empty() || corpus.val.is_empty() || corpus.test.is_empty() {
        bail!(Invalid("training needs enough covers for a 70/5/25 split".into()));
    }
    let mut model = build_model(&cfg.model, derive_seed(seed(&cfg), 1))?;
    let (t, v) = (corpus.train.clone(), corpus.val.clone());
    let hist = train_images(
        &mut model,
        &corpus.covers[t.clone()],
        &corpus.stegos[t.clone()],
        &corpus.covers[v.clone()],
        &corpus.stegos[v.clone()],
        &cfg.train,
        &mut Rng::new(derive_seed(seed(&cfg), 2)),
    )?;
    save_checkpoint(&model, &a.out)?;
    let test = eval::confusion_jobs(&model, &corpus.covers[corpus.test.clone()], &corpus.stegos[corpus.test.clone()], jobs(&cfg))?;
    let summary = TrainSummary { train_pairs: t.len(), val_pairs: v.len(), test, best_epoch: hist.best_epoch, val_accuracy: hist.val_accuracy };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    emit_config(&cfg, header, &sibling_config(&a.out))
}

fn cmd_attack(mut cfg: RunConfig, a: AttackArgs, header: &str) -> Result<()> {
    cfg.dataset.payload = a.payload.unwrap_or(cfg.dataset.payload);
    cfg.dataset.cost = a.cost.unwrap_or(cfg.dataset.cost);
    if a.tap.is_some() {
        cfg.attack.target_tap = a.tap.clone();
    }
    cfg.attack.validate()?;
    let model = load_model(&a.model)?;
    if let Some(tap) = &cfg.attack.target_tap {
        model.tap_shape(tap)?;
    }
    let mut covers = load_images(&a.covers)?;
    covers.truncate(a.limit.unwrap_or(usize::MAX));
    let images: Vec<GrayImage> = covers.iter().map(|(_, img)| img.clone()).collect();
    let outcomes = eval::attack_all(a.method, &images, &model, cfg.dataset.cost, cfg.dataset.payload, &cfg.attack, seed(&cfg), jobs(&cfg))?;
    let stego_dir = a.out.join("stegos");
    create_dir(&stego_dir)?;
    let mut records = Vec::with_capacity(outcomes.len());
    let mut lines = String::new();
    for ((name, cover), outcome) in covers.iter().zip(&outcomes) {
        write_pgm_file(&stego_dir.join(format!("{name}.pgm")), &outcome.stego)?;
        let record = OutcomeRecord::new(name, cover, outcome);
        lines.push_str(&record.to_json_line());
        lines.push('\n');
        records.push(record);
    }
    fs::write(a.out.join("outcomes.jsonl"), lines)?;
    println!("{}", serde_json::to_string_pretty(&summarize(&records)?)?);
    emit_config(&cfg, header, &a.out.join("resolved.toml"))
}

#[derive(Debug, Serialize, PartialEq)]
pub struct OutcomeSummary {
    pub n: usize,
    pub method: Vec<String>,
    pub asr: f64,
    pub mean_phi: f64,
    pub mean_beta_final: f64,
    pub mean_l1_change: f64,
}

pub fn read_outcomes_str(text: &str) -> Result<Vec<OutcomeRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Invalid(format!("outcome line {}: {e}", i + 1)).into()))
        .collect()
}

pub fn summarize(records: &[OutcomeRecord]) -> Result<OutcomeSummary> {
    let n = records.len();
    let asr = eval::success_rate(records.iter().map(|r| r.deceived)).map_err(|e| Invalid(e.to_string()))?;
    let mean = |f: &dyn Fn(&OutcomeRecord) -> f64| records.iter().map(f).sum::<f64>() / n as f64;
    let mut method: Vec<String> = records.iter().map(|r| r.method.clone()).collect();
    method.sort();
    method.dedup();
    Ok(OutcomeSummary {
        n,
        method,
        asr,
        mean_phi: mean(&|r| r.phi),
        mean_beta_final: mean(&|r| r.beta_final),
        mean_l1_change: mean(&|r| r.l1_change_count as f64),
    })
}

fn cmd_eval(cfg: RunConfig, a: EvalArgs) -> Result<()> {
    let json = if let Some(path) = &a.outcomes {
        let text = fs::read_to_string(path).with_context(|| Invalid(format!("cannot read {}", path.display())))?;
        serde_json::to_string_pretty(&summarize(&read_outcomes_str(&text)?)?)?
    } else if let (Some(m), Some(c), Some(s)) = (&a.model, &a.covers, &a.stegos) {
        let model = load_model(m)?;
        let covers: Vec<GrayImage> = load_images(c)?.into_iter().map(|(_, i)| i).collect();
        let stegos: Vec<GrayImage> = load_images(s)?.into_iter().map(|(_, i)| i).collect();
        serde_json::to_string_pretty(&eval::confusion_jobs(&model, &covers, &stegos, jobs(&cfg))?)?
    } else {
        bail!(Invalid("eval needs --outcomes or --model with --covers and --stegos".into()));
    };
    println!("{json}");
    if let Some(out) = &a.out {
        fs::write(out, format!("{json}\n"))?;
    }
    Ok(())
}

enum Experiment {
    Transfer,
    Retrain,
    Ablate,
}

#[derive(Serialize)]
struct ExperimentSummary<'a, T: Serialize> {
    seed: u64,
    data_seed: u64,
    config: &'a RunConfig,
    results: T,
}

fn cmd_experiment(cfg: RunConfig, a: ExperimentArgs, header: &str, kind: Experiment) -> Result<()> {
    cfg.validate()?;
    let exp = cfg.experiment();
    create_dir(&a.out)?;
    emit_config(&cfg, header, &a.out.join("resolved.toml"))?;
    let corpus = Corpus::synthesize(&exp)?;
    let zoo = Zoo::train(&exp, &corpus)?;
    let summary = |results: serde_json::Value| -> Result<String> {
        Ok(serde_json::to_string_pretty(&ExperimentSummary { seed: exp.seed, data_seed: exp.data_seed, config: &cfg, results })?)
    };
    let json = match kind {
        Experiment::Transfer => {
            let (matrix, _) = eval::transfer_with(&exp, &corpus, &zoo)?;
            fs::write(a.out.join("matrix.csv"), matrix.to_csv())?;
            summary(serde_json::json!({ "matrix": matrix, "average_deltas": matrix.average_deltas() }))?
        }
        Experiment::Retrain => {
            let reports = eval::retrain_experiment(&exp, &corpus, &zoo, cfg.experiment.retrain_limit)?;
            summary(serde_json::to_value(&reports)?)?
        }
        Experiment::Ablate => {
            let taps = if cfg.experiment.taps.is_empty() {
                zoo.target.tap_names().into_iter().filter(|t| *t != "input").map(String::from).collect()
            } else {
                cfg.experiment.taps.clone()
            };
            let rows = eval::layer_ablation(&exp, &corpus, &zoo, &taps)?;
            summary(serde_json::to_value(&rows)?)?
        }
    };
    fs::write(a.out.join("summary.json"), format!("{json}\n"))?;
    println!("{json}");
    Ok(())
}

fn cmd_attribute(cfg: RunConfig, a: AttributeArgs, header: &str) -> Result<()> {
    let model = load_model(&a.model)?;
    if !a.image.is_file() {
        bail!(Invalid(format!("image {} not found", a.image.display())));
    }
    let img = read_pgm_file(&a.image)?;
    let tap = a.tap.clone().unwrap_or_else(|| model.target_tap().to_string());
    let path = PathSpec::new(a.steps);
    let map = if a.coupled { coupled_neuron_attribution(&model, &img, &tap, &path)? } else { neuron_attribution(&model, &img, &tap, &path)? };
    write_pgm_file(&a.out, &map.heatmap())?;
    if let Some(raw) = &a.raw {
        map.write_raw(fs::File::create(raw).with_context(|| format!("creating {}", raw.display()))?)?;
    }
    emit_config(&cfg, header, &sibling_config(&a.out))
}
