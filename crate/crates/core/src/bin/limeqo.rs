use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use limeqo::io;
use limeqo::simulator::{self, Simulation};
use limeqo::{
    synth, AlsConfig, Error, PolicyKind, Result, ShiftEvent, ShiftKind, SimConfig, SynthConfig,
};

/// Offline query-hint exploration over a workload latency matrix.
#[derive(Parser)]
#[command(name = "limeqo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted low-rank ground-truth matrix.
    Synth(SynthArgs),
    /// Replay one exploration policy against a ground-truth matrix.
    Simulate(SimulateArgs),
    /// Complete a partially observed state with one ALS fit.
    Complete(CompleteArgs),
    /// Write the singular values of a fully observed matrix.
    Spectrum(SpectrumArgs),
    /// Average final workload latency of several policies over seeds.
    Compare(CompareArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    rank: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Median latency in seconds.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    etl_rows: usize,
    #[arg(long, env = "LIMEQO_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AlsArgs {
    #[arg(long, default_value_t = 5)]
    rank: usize,
    #[arg(long, default_value_t = 0.2)]
    lambda: f64,
    #[arg(long, default_value_t = 50)]
    iters: usize,
}

impl AlsArgs {
    fn config(&self, seed: u64) -> AlsConfig {
        AlsConfig {
            rank: self.rank,
            lambda: self.lambda,
            iterations: self.iters,
            seed,
        }
    }
}

#[derive(Args)]
struct ExploreArgs {
    /// Column index (from 0) of the default hint.
    #[arg(long, default_value_t = 0)]
    default_hint: usize,
    /// Candidates executed per batch.
    #[arg(long, default_value_t = 10)]
    batch: usize,
    /// LimeQO timeout inflation over the predicted latency.
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Batches between ALS refits.
    #[arg(long, default_value_t = 1)]
    refit_every: usize,
    /// Count default-hint runs as exploration time.
    #[arg(long)]
    charge_default: bool,
    /// Optimizer cost estimates, required by the cost policy.
    #[arg(long)]
    cost_matrix: Option<PathBuf>,
    #[command(flatten)]
    als: AlsArgs,
}

impl ExploreArgs {
    fn config(&self, kind: PolicyKind, budget: f64) -> SimConfig {
        let mut cfg = SimConfig::new(kind, budget);
        cfg.policy.batch = self.batch;
        cfg.policy.alpha = self.alpha;
        cfg.als = self.als.config(0);
        cfg.refit_every = self.refit_every;
        cfg.charge_default = self.charge_default;
        cfg
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ShiftArg {
    /// Append the rows of the shift file as new queries.
    Workload,
    /// Replace the ground truth with the shift file.
    Data,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value = "limeqo")]
    policy: PolicyKind,
    /// Exploration budget in seconds.
    #[arg(long)]
    budget: f64,
    #[arg(long, env = "LIMEQO_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    trace: PathBuf,
    /// Exploration seconds after which the shift is applied.
    #[arg(long, requires_all = ["shift_kind", "shift_file"])]
    shift_at: Option<f64>,
    #[arg(long, value_enum, requires = "shift_at")]
    shift_kind: Option<ShiftArg>,
    #[arg(long, requires = "shift_at")]
    shift_file: Option<PathBuf>,
    /// Also write the final observed state here.
    #[arg(long)]
    state_out: Option<PathBuf>,
    #[command(flatten)]
    explore: ExploreArgs,
}

#[derive(Args)]
struct CompleteArgs {
    #[arg(long)]
    state: PathBuf,
    #[arg(long, env = "LIMEQO_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    als: AlsArgs,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    truth: PathBuf,
    /// Comma-separated budgets in seconds.
    #[arg(long, value_delimiter = ',', required = true)]
    budgets: Vec<f64>,
    /// Read budgets as multiples of the default workload latency.
    #[arg(long)]
    relative: bool,
    #[arg(long, value_delimiter = ',', default_value = "random,greedy,limeqo")]
    policies: Vec<PolicyKind>,
    /// Number of seeds, counted up from --seed.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, env = "LIMEQO_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    explore: ExploreArgs,
}

fn synth_cmd(a: &SynthArgs) -> Result<PathBuf> {
    let truth = synth::generate(&SynthConfig {
        n_queries: a.n,
        n_hints: a.k,
        rank: a.rank,
        noise: a.noise,
        scale: a.scale,
        etl_rows: a.etl_rows,
        seed: a.seed,
    })?;
    io::write_truth(&truth, &a.out)?;
    Ok(a.out.clone())
}

fn simulate_cmd(a: &SimulateArgs) -> Result<PathBuf> {
    let truth = io::read_truth(&a.truth)?;
    let cfg = a.explore.config(a.policy, a.budget);
    let mut shifts = Vec::new();
    if let (Some(at), Some(kind), Some(file)) = (a.shift_at, a.shift_kind, &a.shift_file) {
        let other = io::read_truth(file)?;
        let kind = match kind {
            ShiftArg::Workload => ShiftKind::Workload(other),
            ShiftArg::Data => ShiftKind::Data(other),
        };
        shifts.push(ShiftEvent { at, kind });
    }
    let mut sim = Simulation::new(truth, a.explore.default_hint, cfg, a.seed)?;
    if let Some(path) = &a.explore.cost_matrix {
        sim = sim.with_costs(io::read_costs(path)?);
    }
    let trace = sim.run(&shifts)?;
    io::write_trace(&trace, &a.trace)?;
    if let Some(path) = &a.state_out {
        io::write_state(sim.state(), path)?;
    }
    Ok(a.trace.clone())
}

fn complete_cmd(a: &CompleteArgs) -> Result<PathBuf> {
    let state = io::read_state(&a.state)?;
    let fit = limeqo::als_complete(&state, &a.als.config(a.seed))?;
    io::write_values(&fit.estimate, Some(state.default_hint()), &a.out)?;
    Ok(a.out.clone())
}

fn spectrum_cmd(a: &SpectrumArgs) -> Result<PathBuf> {
    let truth = io::read_truth(&a.matrix)?;
    io::write_spectrum(&limeqo::singular_spectrum(truth.values()), &a.out)?;
    Ok(a.out.clone())
}

fn compare_cmd(a: &CompareArgs) -> Result<PathBuf> {
    let truth = io::read_truth(&a.truth)?;
    let d = a.explore.default_hint;
    if d >= truth.n_hints() {
        return Err(Error::DegenerateConfig(format!(
            "default hint {d} out of range for {} hints",
            truth.n_hints()
        )));
    }
    let unit = if a.relative {
        truth.column_latency(d)
    } else {
        1.0
    };
    let budgets: Vec<f64> = a.budgets.iter().map(|b| b * unit).collect();
    let configs: Vec<SimConfig> = a
        .policies
        .iter()
        .map(|&k| a.explore.config(k, 0.0))
        .collect();
    let seeds: Vec<u64> = (0..a.seeds).map(|s| a.seed.wrapping_add(s)).collect();
    let costs = a
        .explore
        .cost_matrix
        .as_ref()
        .map(io::read_costs)
        .transpose()?;
    let rows = simulator::compare_policies(&truth, d, &configs, &budgets, &seeds, costs.as_ref())?;
    io::write_report(&rows, &a.out)?;
    Ok(a.out.clone())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => synth_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Complete(a) => complete_cmd(a),
        Command::Spectrum(a) => spectrum_cmd(a),
        Command::Compare(a) => compare_cmd(a),
    };
    match result {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
