use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use hwfuzz::bus::{register_map_by_name, register_map_markdown};
use hwfuzz::coverage::ScopeFilter;
use hwfuzz::dut::LockConfig;
use hwfuzz::experiments::{run_experiment, Device, ExperimentConfig, Target, DEFAULT_FUZZ_EXECS, DEFAULT_LOCK_SEED};
use hwfuzz::fuzzer::{crv_campaign, fuzz_campaign, Budget, CampaignResult, CrvConfig, FuzzerConfig};
use hwfuzz::grammar::{compile_seed_text, Encoding};
use hwfuzz::harness::{ForkPoint, Harness, Status};

#[derive(Parser)]
#[command(name = "hwfuzz", version, about = "Coverage-guided fuzzing of cycle-accurate hardware models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one fuzzing campaign and write its queue and crashes.
    Fuzz(FuzzArgs),
    /// Run the constrained-random baseline against a lock.
    Crv(CrvArgs),
    /// Execute one test file and print the outcome.
    Replay(ReplayArgs),
    /// Run an experiment described by a TOML file.
    Experiment(ExperimentArgs),
    /// Compile a textual seed (`write 0x4 0x1`, `read 0x8`, `wait`) to bytes.
    SeedCompile(SeedCompileArgs),
    /// Print a device's register map as a markdown table.
    Regmap {
        /// `timer` or `lock`
        device: String,
    },
}

#[derive(Args, Clone)]
struct TargetArgs {
    /// lock, lock_periph or timer
    #[arg(long, default_value = "lock")]
    device: Device,
    /// Lock state bits N (2^N states)
    #[arg(long, short = 'n', default_value_t = 2)]
    state_bits: u32,
    /// Lock code width M in bits
    #[arg(long, short = 'm', default_value_t = 4)]
    code_width: u32,
    /// Seed of the lock's secret codes
    #[arg(long, default_value_t = DEFAULT_LOCK_SEED)]
    lock_seed: u64,
    /// constant_fixed, constant_variable, mapped_fixed or mapped_variable
    #[arg(long, default_value = "constant_variable", value_parser = parse_encoding)]
    encoding: Encoding,
    /// at_start or after_reset
    #[arg(long, default_value = "after_reset", value_parser = parse_fork_point)]
    fork_point: ForkPoint,
    /// dut_only or all
    #[arg(long, default_value = "dut_only", value_parser = parse_scope)]
    scope: ScopeFilter,
    /// Do not report reaching the unlocked state as a crash
    #[arg(long)]
    no_unlock_assertion: bool,
}

impl TargetArgs {
    fn target(&self) -> Result<Target> {
        let lock = LockConfig::new(self.state_bits, self.code_width, self.lock_seed)?;
        Ok(Target {
            encoding: self.encoding,
            ..Target::new(self.device, lock)
                .with_fork_point(self.fork_point)
                .with_scope(self.scope)
                .with_unlock_assertion(!self.no_unlock_assertion)
        })
    }
}

#[derive(Args, Clone, Default)]
struct BudgetArgs {
    #[arg(long)]
    max_execs: Option<u64>,
    #[arg(long)]
    max_sim_cycles: Option<u64>,
    #[arg(long)]
    max_wall_ms: Option<u64>,
}

impl BudgetArgs {
    fn budget(&self) -> Budget {
        Budget { max_execs: self.max_execs, max_sim_cycles: self.max_sim_cycles, max_wall_ms: self.max_wall_ms }
    }
}

#[derive(Args)]
struct FuzzArgs {
    #[command(flatten)]
    target: TargetArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Fuzzer rng seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed test files; a single empty input when none are given
    #[arg(long = "input", short = 'i')]
    inputs: Vec<PathBuf>,
    /// Keep fuzzing after the first crash
    #[arg(long)]
    keep_going: bool,
    #[arg(long, default_value_t = hwfuzz::fuzzer::DEFAULT_SAMPLE_EVERY)]
    sample_every: u64,
    /// Output directory for queue/, crashes/ and trajectory.csv
    #[arg(long, short = 'o', default_value = "fuzz-out")]
    output: PathBuf,
}

#[derive(Args)]
struct CrvArgs {
    #[arg(long, short = 'n', default_value_t = 2)]
    state_bits: u32,
    #[arg(long, short = 'm', default_value_t = 4)]
    code_width: u32,
    #[arg(long, default_value_t = DEFAULT_LOCK_SEED)]
    lock_seed: u64,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for crashes/ and trajectory.csv
    #[arg(long, short = 'o', default_value = "crv-out")]
    output: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    testfile: PathBuf,
    #[command(flatten)]
    target: TargetArgs,
}

#[derive(Args)]
struct ExperimentArgs {
    config: PathBuf,
    /// Overrides `output_dir`
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
    /// Overrides `trials`
    #[arg(long)]
    trials: Option<u32>,
    /// Overrides `base_seed`
    #[arg(long)]
    base_seed: Option<u64>,
    /// Overrides the `[fuzzer]` budget
    #[command(flatten)]
    budget: BudgetArgs,
}

#[derive(Args)]
struct SeedCompileArgs {
    text: PathBuf,
    #[arg(long, short = 'o')]
    output: PathBuf,
    #[arg(long, default_value = "constant_variable", value_parser = parse_encoding)]
    encoding: Encoding,
}

fn parse_encoding(s: &str) -> Result<Encoding, String> {
    Encoding::from_label(s).ok_or_else(|| format!("unknown encoding `{s}`"))
}

fn parse_fork_point(s: &str) -> Result<ForkPoint, String> {
    [ForkPoint::AtStart, ForkPoint::AfterReset]
        .into_iter()
        .find(|f| f.label() == s)
        .ok_or_else(|| format!("unknown fork point `{s}` (expected at_start or after_reset)"))
}

fn parse_scope(s: &str) -> Result<ScopeFilter, String> {
    [ScopeFilter::DutOnly, ScopeFilter::All]
        .into_iter()
        .find(|f| f.label() == s)
        .ok_or_else(|| format!("unknown scope `{s}` (expected dut_only or all)"))
}

fn write_trajectory(dir: &Path, r: &CampaignResult) -> Result<()> {
    let mut csv = String::from("execs,sim_cycles,wall_ms,edges_covered,fsm_fraction\n");
    for s in &r.trajectory {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            s.execs,
            s.sim_cycles,
            s.wall_us as f64 / 1000.0,
            s.edges_covered,
            s.fsm_fraction
        ));
    }
    let p = dir.join("trajectory.csv");
    fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))
}

fn print_summary(r: &CampaignResult) {
    println!("execs: {}", r.execs);
    println!("sim_cycles: {}", r.sim_cycles);
    println!("wall_ms: {:.1}", r.wall_us as f64 / 1000.0);
    println!("edges_covered: {}", r.edges_covered());
    if let Some(f) = r.fsm_fraction() {
        println!("fsm_fraction: {f:.3}");
    }
    println!("queue: {}", r.queue.len());
    println!("crashes: {}", r.crashes.len());
    if let Some(c) = r.first_crash() {
        println!("first_crash: assertion={} cycle={} exec={} sim_cycles={}", c.assertion, c.cycle, c.exec, c.sim_cycles);
    }
}

fn cmd_fuzz(a: FuzzArgs) -> Result<()> {
    let target = a.target.target()?;
    let mut budget = a.budget.budget();
    if !budget.is_bounded() {
        budget = Budget::execs(DEFAULT_FUZZ_EXECS);
    }
    let seeds = if a.inputs.is_empty() {
        vec![Vec::new()]
    } else {
        a.inputs
            .iter()
            .map(|p| fs::read(p).with_context(|| format!("reading {}", p.display())))
            .collect::<Result<_>>()?
    };
    let config = FuzzerConfig {
        stop_on_first_crash: !a.keep_going,
        sample_every: a.sample_every,
        ..FuzzerConfig::new(a.seed, budget)
    };
    let mut harness = target.build();
    eprintln!("fuzzing {}", harness.describe());
    let r = fuzz_campaign(&mut harness, &seeds, &config)?;
    r.write_artifacts(&a.output)?;
    write_trajectory(&a.output, &r)?;
    print_summary(&r);
    Ok(())
}

fn cmd_crv(a: CrvArgs) -> Result<()> {
    let lock = LockConfig::new(a.state_bits, a.code_width, a.lock_seed)?;
    let mut budget = a.budget.budget();
    if !budget.is_bounded() {
        budget = Budget::sim_cycles(hwfuzz::experiments::DEFAULT_CRV_CYCLES);
    }
    let r = crv_campaign(&lock, &CrvConfig::new(a.seed, budget))?;
    r.write_artifacts(&a.output)?;
    write_trajectory(&a.output, &r)?;
    print_summary(&r);
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    let bytes = fs::read(&a.testfile).with_context(|| format!("reading {}", a.testfile.display()))?;
    let mut harness = a.target.target()?.build();
    let out = harness.run(&bytes);
    println!("target: {}", harness.describe());
    match out.status {
        Status::Ok => println!("status: ok"),
        Status::Crash { assertion, cycle } => println!("status: crash assertion={assertion} cycle={cycle}"),
    }
    println!("executed_cycles: {}", out.executed_cycles);
    println!("decoded_instructions: {}", out.decoded_instruction_count);
    println!("edges_covered: {}", out.coverage.edges_covered());
    if let Some(f) = &out.fsm_visited {
        println!("fsm_states_visited: {}/{}", f.visited_count(), f.num_states());
    }
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> Result<()> {
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut cfg: ExperimentConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", a.config.display()))?;
    if let Some(o) = a.output {
        cfg.output_dir = o;
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(s) = a.base_seed {
        cfg.base_seed = s;
    }
    let b = a.budget;
    if b.max_execs.is_some() || b.max_sim_cycles.is_some() || b.max_wall_ms.is_some() {
        cfg.fuzzer.max_execs = b.max_execs;
        cfg.fuzzer.max_sim_cycles = b.max_sim_cycles;
        cfg.fuzzer.max_wall_ms = b.max_wall_ms;
    }
    cfg.validate()?;
    let report = run_experiment(&cfg)?;
    println!("{} trials written to {}", report.trials.len(), cfg.output_dir.display());
    for p in &report.tests {
        println!(
            "{:>3}/{:<3} {} {} vs {}: median {} vs {}, p = {:.4}{}",
            p.state_bits.map(|n| n.to_string()).unwrap_or("-".into()),
            p.code_width.map(|m| m.to_string()).unwrap_or("-".into()),
            p.metric.label(),
            p.condition_a,
            p.condition_b,
            p.median_a,
            p.median_b,
            p.test.p_value,
            if p.test.significant { " *" } else { "" }
        );
    }
    Ok(())
}

fn cmd_seed_compile(a: SeedCompileArgs) -> Result<()> {
    let text = fs::read_to_string(&a.text).with_context(|| format!("reading {}", a.text.display()))?;
    let bytes = compile_seed_text(&text, a.encoding).with_context(|| format!("compiling {}", a.text.display()))?;
    fs::write(&a.output, &bytes).with_context(|| format!("writing {}", a.output.display()))?;
    println!("{} bytes written to {}", bytes.len(), a.output.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Fuzz(a) => cmd_fuzz(a),
        Command::Crv(a) => cmd_crv(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::SeedCompile(a) => cmd_seed_compile(a),
        Command::Regmap { device } => {
            let map = register_map_by_name(&device).ok_or_else(|| anyhow!("unknown device `{device}` (timer or lock)"))?;
            print!("{}", register_map_markdown(map));
            Ok(())
        }
    }
}
