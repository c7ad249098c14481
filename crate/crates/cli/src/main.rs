//! `quantest`: train QNN classifiers, run adversarial and noise campaigns,
//! retrain on generated examples, and measure shot-sampling cost.
//!
//! Exit codes: 0 success, 1 internal error, 2 user or configuration error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use quantest::data::Dataset;
use quantest::metrics::Combine;
use quantest::train::GradientMethod;
use quantest::{Arch, Optimizer, Strategy};

use config::{RunConfig, Split};

/// A mistake in the invocation, configuration or input files.
#[derive(Debug)]
pub struct UserError(pub String);

impl std::fmt::Display for UserError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

#[derive(Parser)]
#[command(name = "quantest", version, about = "Entanglement-guided adversarial testing for QNN classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a task and write its checkpoint.
    Train(TrainArgs),
    /// Run an entanglement-guided adversarial campaign.
    Attack(AttackArgs),
    /// Run the random coherent-noise baseline, optionally over several strengths.
    Noise(NoiseArgs),
    /// Retrain from the original initialization on train plus accepted examples.
    Retrain(RetrainArgs),
    /// Shot-sampling error and quality over a grid of shot counts.
    Sampling(SamplingArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory with the IDX files.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_dataset)]
    dataset: Option<Dataset>,
    /// Class ids, e.g. `3,6`.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<u8>>,
    #[arg(long)]
    image_side: Option<usize>,
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    test_limit: Option<usize>,
    /// Global seed for the split, campaign and shot streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_parser = parse_optimizer)]
    optimizer: Option<Optimizer>,
    #[arg(long, value_parser = parse_gradient)]
    gradient: Option<GradientMethod>,
    /// Minibatch shuffling seed.
    #[arg(long)]
    train_seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    arch: Option<Arch>,
    #[arg(long)]
    depth: Option<usize>,
    /// Parameter initialization seed.
    #[arg(long)]
    model_seed: Option<u64>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct GateFlags {
    #[arg(long)]
    min_fidelity: Option<f64>,
    #[arg(long)]
    max_trace_distance: Option<f64>,
    #[arg(long, value_parser = parse_combine)]
    combine: Option<Combine>,
    /// Accept any label flip regardless of similarity.
    #[arg(long)]
    no_gate: bool,
    /// Stop a seed once an iterate fails the similarity gate.
    #[arg(long)]
    early_abort: bool,
}

#[derive(Args)]
struct CampaignFlags {
    /// Trained model checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    split: Option<Split>,
    #[arg(long)]
    n_seeds: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Include amplitudes in the JSONL records.
    #[arg(long)]
    dump_states: bool,
    #[command(flatten)]
    gate: GateFlags,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    campaign: CampaignFlags,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    #[arg(long)]
    w: Option<f64>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    /// Same as `--w 0`.
    #[arg(long, conflicts_with = "w")]
    no_guidance: bool,
    #[arg(long)]
    balanced_qea: bool,
    /// Step along the componentwise gradient sign.
    #[arg(long)]
    gradient_sign: bool,
}

#[derive(Args)]
struct NoiseArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    campaign: CampaignFlags,
    /// Rotation-angle standard deviations; one summary row each.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    sigma: Vec<f64>,
}

#[derive(Args)]
struct RetrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// JSONL record files written with `--dump-states`.
    #[arg(long, num_args = 1..)]
    adversarial: Vec<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct SamplingArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// JSONL records whose unflipped final states are the seeds.
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// Ascending shot counts, e.g. `10,100,1000`.
    #[arg(long, value_delimiter = ',')]
    shots_grid: Option<Vec<u64>>,
    #[arg(long)]
    repeats: Option<usize>,
}

fn parse_with<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    parse_with(s)
}

fn parse_json_name<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|e| e.to_string())
}

fn parse_dataset(s: &str) -> Result<Dataset, String> {
    parse_json_name(s)
}

fn parse_combine(s: &str) -> Result<Combine, String> {
    parse_json_name(s)
}

fn parse_optimizer(s: &str) -> Result<Optimizer, String> {
    parse_json_name(s)
}

fn parse_gradient(s: &str) -> Result<GradientMethod, String> {
    parse_json_name(s)
}

impl CommonArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        set(&mut c.output_dir, self.out.clone());
        set(&mut c.data_dir, self.data_dir.clone());
        set(&mut c.task.dataset, self.dataset);
        set(&mut c.task.classes, self.classes.clone());
        set(&mut c.task.image_side, self.image_side);
        set(&mut c.task.train_limit, self.train_limit);
        set(&mut c.task.test_limit, self.test_limit);
        set(&mut c.seed, self.seed);
        if self.threads.is_some() {
            c.threads = self.threads;
        }
        Ok(c)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl TrainFlags {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.train.epochs, self.epochs);
        set(&mut c.train.batch_size, self.batch_size);
        set(&mut c.train.learning_rate, self.lr);
        set(&mut c.train.optimizer, self.optimizer);
        set(&mut c.train.gradient, self.gradient);
        set(&mut c.train.seed, self.train_seed);
    }
}

impl CampaignFlags {
    fn apply(&self, c: &mut RunConfig, max_iters: &mut usize, thresholds: &mut Option<quantest::SimilarityThresholds>, early_abort: &mut bool) {
        if self.checkpoint.is_some() {
            c.model.checkpoint = self.checkpoint.clone();
        }
        set(&mut c.campaign.split, self.split);
        if self.n_seeds.is_some() {
            c.campaign.n_seeds = self.n_seeds;
        }
        set(max_iters, self.max_iters);
        c.campaign.dump_states |= self.dump_states;
        let g = &self.gate;
        if g.no_gate {
            *thresholds = None;
        } else if g.min_fidelity.is_some() || g.max_trace_distance.is_some() || g.combine.is_some() {
            let t = thresholds.get_or_insert_with(Default::default);
            set(&mut t.min_fidelity, g.min_fidelity);
            set(&mut t.max_trace_distance, g.max_trace_distance);
            set(&mut t.combine, g.combine);
        }
        *early_abort |= g.early_abort;
    }
}

fn configure(command: &Command) -> anyhow::Result<RunConfig> {
    let c = match command {
        Command::Train(a) => {
            let mut c = a.common.load()?;
            set(&mut c.model.arch, a.arch);
            if a.depth.is_some() {
                c.model.depth = a.depth;
            }
            set(&mut c.model.seed, a.model_seed);
            a.train.apply(&mut c);
            c
        }
        Command::Attack(a) => {
            let mut c = a.common.load()?;
            let mut at = c.attack.clone();
            a.campaign.apply(&mut c, &mut at.max_iters, &mut at.thresholds, &mut at.early_abort);
            set(&mut at.strategy, a.strategy);
            set(&mut at.w, a.w);
            set(&mut at.k, a.k);
            set(&mut at.r, a.r);
            if a.no_guidance {
                at.w = 0.0;
            }
            at.balanced_qea |= a.balanced_qea;
            at.gradient_sign |= a.gradient_sign;
            c.attack = at;
            c
        }
        Command::Noise(a) => {
            let mut c = a.common.load()?;
            let mut nz = c.noise.clone();
            a.campaign.apply(&mut c, &mut nz.max_iters, &mut nz.thresholds, &mut nz.early_abort);
            c.noise = nz;
            if !a.sigma.is_empty() {
                c.campaign.sigmas = a.sigma.clone();
            }
            c
        }
        Command::Retrain(a) => {
            let mut c = a.common.load()?;
            if a.checkpoint.is_some() {
                c.model.checkpoint = a.checkpoint.clone();
            }
            if !a.adversarial.is_empty() {
                c.retrain.adversarial = a.adversarial.clone();
            }
            a.train.apply(&mut c);
            c
        }
        Command::Sampling(a) => {
            let mut c = a.common.load()?;
            if a.checkpoint.is_some() {
                c.model.checkpoint = a.checkpoint.clone();
            }
            if a.seeds.is_some() {
                c.sampling.seeds = a.seeds.clone();
            }
            set(&mut c.sampling.shots_grid, a.shots_grid.clone());
            set(&mut c.sampling.repeats, a.repeats);
            c
        }
    };
    c.validate()?;
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    std::fs::create_dir_all(&c.output_dir).map_err(|e| UserError(format!("{}: {e}", c.output_dir.display())))?;
    Ok(c)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = configure(&cli.command)?;
    output::write_json(&cfg.output_dir.join(output::CONFIG), &cfg)?;
    match cli.command {
        Command::Train(_) => commands::train(&cfg),
        Command::Attack(_) => commands::attack(&cfg),
        Command::Noise(_) => commands::noise(&cfg),
        Command::Retrain(_) => commands::retrain(&cfg),
        Command::Sampling(_) => commands::sampling(&cfg),
    }
}

/// 2 for anything the user can fix, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    use quantest::Error as E;
    for cause in err.chain() {
        if cause.is::<UserError>() || cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io { .. }
                | E::Json(_)
                | E::Format { .. }
                | E::InvalidArgument(_)
                | E::InvalidLabel { .. }
                | E::DimensionMismatch { .. }
                | E::Empty(_)
                | E::ZeroImage
                | E::TooManyQubits { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}

/// The error chain joined by `: `, skipping causes already spelled out.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if msg.contains(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
