//! Campaign orchestration and reporting.
//!
//! An experiment is described by an [`ExperimentConfig`] (usually read from
//! a TOML file), expanded into independent trials, run on a thread pool and
//! written out as CSV files plus a markdown summary:
//!
//! | file | contents |
//! |------|----------|
//! | `config.toml` | the full configuration, defaults filled in |
//! | `trials.csv` | one row per trial (see [`TRIALS_CSV_HEADER`]) |
//! | `trajectories.csv` | sampled coverage of every trial |
//! | `heatmap_<condition>.csv` | per-cell mean of the primary metric |
//! | `heatmap_ratio.csv` | CRV over fuzzer cycles (`fuzz_vs_crv` only) |
//! | `stats.csv` | Mann-Whitney U tests between paired conditions |
//! | `trace_<condition>[_n<N>_m<M>].csv` | consolidated coverage trace |
//! | `reachable.csv` | coverage relative to the reference explorer |
//! | `summary.md` | all of the above as tables |
//!
//! Trial `t` of every cell and condition uses fuzzer seed `base_seed + t`,
//! so reruns reproduce every exec and cycle count exactly.

mod reference;
mod report;
mod target;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use reference::{reachable_edges, DEFAULT_PROGRAMS};
pub use report::{report_coverage_trace, trace_to_csv, HeatmapCell, HeatmapTable, TraceRow, TRACE_CSV_HEADER};
pub use target::{Device, Target};

use crate::coverage::ScopeFilter;
use crate::dut::LockConfig;
use crate::error::{ConfigError, Error, Result};
use crate::fuzzer::{
    crv_campaign, fuzz_campaign, Budget, CampaignResult, CrvConfig, FuzzerConfig, DEFAULT_HAVOC_STACK_MAX,
    DEFAULT_MAX_LEN, DEFAULT_SAMPLE_EVERY,
};
use crate::grammar::{Encoding, FrameFormat, OpcodeFormat};
use crate::harness::ForkPoint;
use crate::stats::{mann_whitney_u, median, UTestResult};

pub const DEFAULT_FUZZ_EXECS: u64 = 100_000;
pub const DEFAULT_CRV_CYCLES: u64 = 10_000_000;
pub const DEFAULT_LOCK_SEED: u64 = 0xC0FFEE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Fuzzer against constrained-random verification on a lock grid.
    FuzzVsCrv,
    /// DUT-only against full instrumentation.
    InstrumentationScope,
    /// Cold start against snapshot restore.
    ForkPoint,
    /// Every opcode/frame format combination on a bus device.
    GrammarAblation,
    /// Coverage reached from a single empty seed.
    EmptySeedCoverage,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::FuzzVsCrv,
        ExperimentKind::InstrumentationScope,
        ExperimentKind::ForkPoint,
        ExperimentKind::GrammarAblation,
        ExperimentKind::EmptySeedCoverage,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::FuzzVsCrv => "fuzz_vs_crv",
            ExperimentKind::InstrumentationScope => "instrumentation_scope",
            ExperimentKind::ForkPoint => "fork_point",
            ExperimentKind::GrammarAblation => "grammar_ablation",
            ExperimentKind::EmptySeedCoverage => "empty_seed_coverage",
        }
    }

    fn default_device(self) -> Device {
        match self {
            ExperimentKind::GrammarAblation => Device::LockPeriph,
            ExperimentKind::EmptySeedCoverage => Device::Timer,
            _ => Device::Lock,
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown experiment kind `{s}`")))
    }
}

/// `[fuzzer]` section. With no bound given the budget is
/// [`DEFAULT_FUZZ_EXECS`] execs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuzzerSection {
    pub max_execs: Option<u64>,
    pub max_sim_cycles: Option<u64>,
    pub max_wall_ms: Option<u64>,
    pub max_len: Option<usize>,
    pub havoc_stack_max: Option<u32>,
    pub sample_every: Option<u64>,
}

impl FuzzerSection {
    pub fn budget(&self) -> Budget {
        let b = Budget { max_execs: self.max_execs, max_sim_cycles: self.max_sim_cycles, max_wall_ms: self.max_wall_ms };
        if b.is_bounded() {
            b
        } else {
            Budget::execs(DEFAULT_FUZZ_EXECS)
        }
    }

    pub fn config(&self, rng_seed: u64) -> FuzzerConfig {
        FuzzerConfig {
            rng_seed,
            max_len: self.max_len.unwrap_or(DEFAULT_MAX_LEN),
            havoc_stack_max: self.havoc_stack_max.unwrap_or(DEFAULT_HAVOC_STACK_MAX),
            budget: self.budget(),
            stop_on_first_crash: true,
            sample_every: self.sample_every.unwrap_or(DEFAULT_SAMPLE_EVERY),
        }
    }
}

/// `[crv]` section. With no bound given the budget is
/// [`DEFAULT_CRV_CYCLES`] simulated cycles per trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrvSection {
    pub max_execs: Option<u64>,
    pub max_sim_cycles: Option<u64>,
    pub max_wall_ms: Option<u64>,
}

impl CrvSection {
    pub fn budget(&self) -> Budget {
        let b = Budget { max_execs: self.max_execs, max_sim_cycles: self.max_sim_cycles, max_wall_ms: self.max_wall_ms };
        if b.is_bounded() {
            b
        } else {
            Budget::sim_cycles(DEFAULT_CRV_CYCLES)
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_trials() -> u32 {
    10
}
fn default_state_bits() -> Vec<u32> {
    vec![1, 2]
}
fn default_code_widths() -> Vec<u32> {
    vec![1, 2]
}
fn default_lock_seed() -> u64 {
    DEFAULT_LOCK_SEED
}
fn default_opcode_formats() -> Vec<OpcodeFormat> {
    vec![OpcodeFormat::Constant]
}
fn default_frame_formats() -> Vec<FrameFormat> {
    vec![FrameFormat::Variable]
}
fn default_reference_programs() -> usize {
    DEFAULT_PROGRAMS
}

/// Experiment description; the TOML schema is in `docs/experiment-config.md`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default)]
    pub base_seed: u64,
    /// Device under test; each kind has a default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<Device>,
    #[serde(default = "default_state_bits")]
    pub state_bits: Vec<u32>,
    #[serde(default = "default_code_widths")]
    pub code_widths: Vec<u32>,
    /// Seed of the locks' secret codes.
    #[serde(default = "default_lock_seed")]
    pub lock_seed: u64,
    #[serde(default = "default_opcode_formats")]
    pub opcode_formats: Vec<OpcodeFormat>,
    #[serde(default = "default_frame_formats")]
    pub frame_formats: Vec<FrameFormat>,
    #[serde(default)]
    pub fork_point: ForkPoint,
    #[serde(default)]
    pub scope: ScopeFilter,
    /// Programs run by the reachable-edge explorer (`empty_seed_coverage`).
    #[serde(default = "default_reference_programs")]
    pub reference_programs: usize,
    /// Also write every trial's queue and crashes under `artifacts/`.
    #[serde(default)]
    pub save_artifacts: bool,
    #[serde(default)]
    pub fuzzer: FuzzerSection,
    #[serde(default)]
    pub crv: CrvSection,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, output_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            kind,
            output_dir: output_dir.into(),
            trials: default_trials(),
            base_seed: 0,
            device: None,
            state_bits: default_state_bits(),
            code_widths: default_code_widths(),
            lock_seed: default_lock_seed(),
            opcode_formats: default_opcode_formats(),
            frame_formats: default_frame_formats(),
            fork_point: ForkPoint::default(),
            scope: ScopeFilter::default(),
            reference_programs: default_reference_programs(),
            save_artifacts: false,
            fuzzer: FuzzerSection::default(),
            crv: CrvSection::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn device(&self) -> Device {
        self.device.unwrap_or(self.kind.default_device())
    }

    pub fn encodings(&self) -> Vec<Encoding> {
        self.opcode_formats
            .iter()
            .flat_map(|&o| self.frame_formats.iter().map(move |&f| Encoding::new(o, f)))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.trials == 0 {
            return Err(ConfigError::OutOfRange { field: "trials", value: 0, expected: ">= 1" });
        }
        let device = self.device();
        match self.kind {
            ExperimentKind::FuzzVsCrv | ExperimentKind::InstrumentationScope | ExperimentKind::ForkPoint
                if device != Device::Lock =>
            {
                return Err(ConfigError::Invalid(format!("{} runs on the lock, not {device}", self.kind.label())));
            }
            ExperimentKind::GrammarAblation if !device.is_bus() => {
                return Err(ConfigError::Invalid("grammar_ablation needs a bus device (lock_periph or timer)".into()));
            }
            _ => {}
        }
        if device.has_lock() {
            if self.state_bits.is_empty() || self.code_widths.is_empty() {
                return Err(ConfigError::Invalid("state_bits and code_widths must be non-empty".into()));
            }
            for &n in &self.state_bits {
                for &m in &self.code_widths {
                    LockConfig::new(n, m, self.lock_seed)?;
                }
            }
        }
        if device.is_bus() && (self.opcode_formats.is_empty() || self.frame_formats.is_empty()) {
            return Err(ConfigError::Invalid("opcode_formats and frame_formats must be non-empty".into()));
        }
        self.fuzzer.config(0).validate()?;
        Ok(())
    }

    fn cells(&self) -> Vec<(Option<u32>, Option<u32>)> {
        if self.device().has_lock() {
            self.state_bits.iter().flat_map(|&n| self.code_widths.iter().map(move |&m| (Some(n), Some(m)))).collect()
        } else {
            vec![(None, None)]
        }
    }

    fn lock_config(&self, cell: (Option<u32>, Option<u32>)) -> LockConfig {
        LockConfig::new(cell.0.unwrap_or(1), cell.1.unwrap_or(1), self.lock_seed).expect("validated")
    }

    /// Named conditions for one cell.
    fn conditions(&self, cell: (Option<u32>, Option<u32>)) -> Vec<(String, Arm)> {
        let lock = self.lock_config(cell);
        let base = Target::new(self.device(), lock).with_fork_point(self.fork_point).with_scope(self.scope);
        match self.kind {
            ExperimentKind::FuzzVsCrv => {
                vec![("fuzz".into(), Arm::Fuzz(base)), ("crv".into(), Arm::Crv(lock))]
            }
            ExperimentKind::InstrumentationScope => [ScopeFilter::DutOnly, ScopeFilter::All]
                .into_iter()
                .map(|s| (s.label().to_string(), Arm::Fuzz(base.with_scope(s))))
                .collect(),
            ExperimentKind::ForkPoint => [ForkPoint::AtStart, ForkPoint::AfterReset]
                .into_iter()
                .map(|f| (f.label().to_string(), Arm::Fuzz(base.with_fork_point(f))))
                .collect(),
            ExperimentKind::GrammarAblation => self
                .encodings()
                .into_iter()
                .map(|e| (e.label().to_string(), Arm::Fuzz(Target { encoding: e, ..base })))
                .collect(),
            ExperimentKind::EmptySeedCoverage => {
                let quiet = base.with_unlock_assertion(false);
                if self.device().is_bus() {
                    self.encodings()
                        .into_iter()
                        .map(|e| (e.label().to_string(), Arm::Fuzz(Target { encoding: e, ..quiet })))
                        .collect()
                } else {
                    vec![("generic".into(), Arm::Fuzz(quiet))]
                }
            }
        }
    }

    /// Metrics compared between conditions; the first is the heatmap metric.
    pub fn metrics(&self) -> Vec<Metric> {
        match self.kind {
            ExperimentKind::FuzzVsCrv | ExperimentKind::InstrumentationScope => vec![Metric::SimCyclesToUnlock],
            ExperimentKind::ForkPoint => vec![Metric::SimCyclesToUnlock, Metric::WallMsToUnlock],
            ExperimentKind::GrammarAblation if self.device() == Device::Timer => vec![Metric::EdgesCovered],
            ExperimentKind::GrammarAblation => vec![Metric::ExecsToFullFsm],
            ExperimentKind::EmptySeedCoverage => vec![Metric::EdgesCovered],
        }
    }

    fn pairs(&self) -> Vec<(String, String)> {
        match self.kind {
            ExperimentKind::FuzzVsCrv => vec![("fuzz".into(), "crv".into())],
            ExperimentKind::InstrumentationScope => vec![("dut_only".into(), "all".into())],
            ExperimentKind::ForkPoint => vec![("at_start".into(), "after_reset".into())],
            ExperimentKind::GrammarAblation => self
                .opcode_formats
                .iter()
                .filter(|_| self.frame_formats.len() > 1)
                .map(|&o| {
                    (
                        Encoding::new(o, FrameFormat::Fixed).label().to_string(),
                        Encoding::new(o, FrameFormat::Variable).label().to_string(),
                    )
                })
                .collect(),
            ExperimentKind::EmptySeedCoverage => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Arm {
    Fuzz(Target),
    Crv(LockConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Fuzz,
    Crv,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Fuzz => "fuzz",
            Method::Crv => "crv",
        }
    }
}

/// Per-trial quantities that experiments compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    SimCyclesToUnlock,
    ExecsToUnlock,
    WallMsToUnlock,
    ExecsToFullFsm,
    EdgesCovered,
}

impl Metric {
    pub fn label(self) -> &'static str {
        match self {
            Metric::SimCyclesToUnlock => "sim_cycles_to_unlock",
            Metric::ExecsToUnlock => "execs_to_unlock",
            Metric::WallMsToUnlock => "wall_ms_to_unlock",
            Metric::ExecsToFullFsm => "execs_to_full_fsm",
            Metric::EdgesCovered => "edges_covered",
        }
    }

    /// The metric's value and whether it is censored, i.e. the budget ran
    /// out first and the value is only a lower bound.
    pub fn value(self, r: &CampaignResult) -> (f64, bool) {
        let or_budget = |v: Option<u64>, spent: u64| match v {
            Some(v) => (v as f64, false),
            None => (spent as f64, true),
        };
        match self {
            Metric::SimCyclesToUnlock => or_budget(r.sim_cycles_to_first_crash(), r.sim_cycles),
            Metric::ExecsToUnlock => or_budget(r.execs_to_first_crash(), r.execs),
            Metric::WallMsToUnlock => match r.first_crash_wall_us {
                Some(us) => (us as f64 / 1000.0, false),
                None => (r.wall_us as f64 / 1000.0, true),
            },
            Metric::ExecsToFullFsm => or_budget(r.fsm_reached(1.0).map(|p| p.execs), r.execs),
            Metric::EdgesCovered => (r.edges_covered() as f64, false),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub method: Method,
    pub condition: String,
    pub state_bits: Option<u32>,
    pub code_width: Option<u32>,
    /// Index within its cell and condition.
    pub trial: u32,
    pub rng_seed: u64,
    pub result: CampaignResult,
}

/// U test between two conditions of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedTest {
    pub state_bits: Option<u32>,
    pub code_width: Option<u32>,
    pub metric: Metric,
    pub condition_a: String,
    pub condition_b: String,
    pub median_a: f64,
    pub median_b: f64,
    pub censored_a: usize,
    pub censored_b: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub test: UTestResult,
}

/// Coverage of one cell and condition relative to the reference explorer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachableSummary {
    pub condition: String,
    pub state_bits: Option<u32>,
    pub code_width: Option<u32>,
    /// Edges found by the explorer alone.
    pub reference_edges: usize,
    /// Edges found by the explorer or any trial.
    pub reachable_edges: usize,
    /// Per-trial `covered / reachable`.
    pub fractions: Vec<f64>,
    pub full_fsm_trials: usize,
    pub trials: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialRecord>,
    pub heatmaps: Vec<(String, HeatmapTable)>,
    pub tests: Vec<PairedTest>,
    pub traces: Vec<(String, Vec<TraceRow>)>,
    pub reachable: Vec<ReachableSummary>,
}

impl ExperimentReport {
    pub fn heatmap(&self, name: &str) -> Option<&HeatmapTable> {
        self.heatmaps.iter().find(|(n, _)| n == name).map(|(_, h)| h)
    }

    pub fn trials_for<'a>(
        &'a self,
        condition: &'a str,
        cell: (Option<u32>, Option<u32>),
    ) -> impl Iterator<Item = &'a TrialRecord> + 'a {
        self.trials
            .iter()
            .filter(move |t| t.condition == condition && (t.state_bits, t.code_width) == cell)
    }
}

struct Job {
    trial_id: usize,
    condition: String,
    cell: (Option<u32>, Option<u32>),
    trial: u32,
    rng_seed: u64,
    arm: Arm,
}

fn expand_jobs(cfg: &ExperimentConfig) -> Vec<Job> {
    let mut jobs = Vec::new();
    for cell in cfg.cells() {
        for (condition, arm) in cfg.conditions(cell) {
            for trial in 0..cfg.trials {
                jobs.push(Job {
                    trial_id: jobs.len(),
                    condition: condition.clone(),
                    cell,
                    trial,
                    rng_seed: cfg.base_seed.wrapping_add(u64::from(trial)),
                    arm,
                });
            }
        }
    }
    jobs
}

fn run_job(cfg: &ExperimentConfig, job: &Job) -> Result<TrialRecord> {
    let (method, result) = match job.arm {
        Arm::Fuzz(target) => {
            let mut fc = cfg.fuzzer.config(job.rng_seed);
            fc.stop_on_first_crash = cfg.kind != ExperimentKind::EmptySeedCoverage;
            let mut harness = target.build();
            (Method::Fuzz, fuzz_campaign(&mut harness, &[Vec::new()], &fc)?)
        }
        Arm::Crv(lock) => {
            let cc = CrvConfig {
                rng_seed: job.rng_seed,
                budget: cfg.crv.budget(),
                sample_every: cfg.fuzzer.sample_every.unwrap_or(DEFAULT_SAMPLE_EVERY),
            };
            (Method::Crv, crv_campaign(&lock, &cc)?)
        }
    };
    Ok(TrialRecord {
        trial_id: job.trial_id,
        method,
        condition: job.condition.clone(),
        state_bits: job.cell.0,
        code_width: job.cell.1,
        trial: job.trial,
        rng_seed: job.rng_seed,
        result,
    })
}

/// Runs every trial of `config` (in parallel) without writing anything.
pub fn run_trials(config: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    let jobs = expand_jobs(config);
    jobs.par_iter().map(|j| run_job(config, j)).collect()
}

fn opt(v: Option<impl ToString>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const TRIALS_CSV_HEADER: &str = "trial_id,method,condition,state_bits,code_width,trial,rng_seed,execs,sim_cycles,\
wall_ms,crashed,execs_to_first_crash,sim_cycles_to_first_crash,wall_ms_to_first_crash,queue_size,unique_crashes,\
edges_covered,fsm_fraction,execs_to_full_fsm,sim_cycles_to_full_fsm";

pub fn trials_to_csv(trials: &[TrialRecord]) -> String {
    let mut out = format!("{TRIALS_CSV_HEADER}\n");
    for t in trials {
        let r = &t.result;
        let full = r.fsm_reached(1.0);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            t.trial_id,
            t.method.label(),
            t.condition,
            opt(t.state_bits),
            opt(t.code_width),
            t.trial,
            t.rng_seed,
            r.execs,
            r.sim_cycles,
            r.wall_us as f64 / 1000.0,
            r.first_crash().is_some(),
            opt(r.execs_to_first_crash()),
            opt(r.sim_cycles_to_first_crash()),
            opt(r.first_crash_wall_us.map(|us| us as f64 / 1000.0)),
            r.queue.len(),
            r.crashes.len(),
            r.edges_covered(),
            opt(r.fsm_fraction()),
            opt(full.map(|p| p.execs)),
            opt(full.map(|p| p.sim_cycles)),
        );
    }
    out
}

pub const TRAJECTORIES_CSV_HEADER: &str = "trial_id,execs,sim_cycles,wall_ms,edges_covered,fsm_fraction";

pub fn trajectories_to_csv(trials: &[TrialRecord]) -> String {
    let mut out = format!("{TRAJECTORIES_CSV_HEADER}\n");
    for t in trials {
        for s in &t.result.trajectory {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                t.trial_id,
                s.execs,
                s.sim_cycles,
                s.wall_us as f64 / 1000.0,
                s.edges_covered,
                s.fsm_fraction
            );
        }
    }
    out
}

pub const STATS_CSV_HEADER: &str =
    "state_bits,code_width,metric,condition_a,condition_b,n_a,n_b,median_a,median_b,censored_a,censored_b,u_statistic,p_value,significant";

fn stats_to_csv(tests: &[PairedTest]) -> String {
    let mut out = format!("{STATS_CSV_HEADER}\n");
    for p in tests {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            opt(p.state_bits),
            opt(p.code_width),
            p.metric.label(),
            p.condition_a,
            p.condition_b,
            p.n_a,
            p.n_b,
            p.median_a,
            p.median_b,
            p.censored_a,
            p.censored_b,
            p.test.u_statistic,
            p.test.p_value,
            p.test.significant
        );
    }
    out
}

fn cell_suffix(cell: (Option<u32>, Option<u32>), multi: bool) -> String {
    match cell {
        (Some(n), Some(m)) if multi => format!("_n{n}_m{m}"),
        _ => String::new(),
    }
}

fn analyse(config: ExperimentConfig, trials: Vec<TrialRecord>) -> Result<ExperimentReport> {
    let cells = config.cells();
    let multi = cells.len() > 1;
    let metrics = config.metrics();
    let conditions: Vec<String> = config.conditions(cells[0]).into_iter().map(|(c, _)| c).collect();
    let values = |cond: &str, cell, metric: Metric| -> Vec<(f64, bool)> {
        trials
            .iter()
            .filter(|t| t.condition == cond && (t.state_bits, t.code_width) == cell)
            .map(|t| metric.value(&t.result))
            .collect()
    };

    let mut heatmaps = Vec::new();
    if config.device().has_lock() {
        for cond in &conditions {
            let h = HeatmapTable::from_samples(metrics[0].label(), &config.state_bits, &config.code_widths, |n, m| {
                values(cond, (Some(n), Some(m)), metrics[0])
            });
            heatmaps.push((cond.clone(), h));
        }
        if config.kind == ExperimentKind::FuzzVsCrv {
            let mut ratio = HeatmapTable::ratio(&heatmaps[1].1, &heatmaps[0].1);
            ratio.metric = format!("{} (crv / fuzz)", metrics[0].label());
            heatmaps.push(("ratio".into(), ratio));
        }
    }

    let mut tests = Vec::new();
    for &cell in &cells {
        for (a, b) in config.pairs() {
            for &metric in &metrics {
                let va = values(&a, cell, metric);
                let vb = values(&b, cell, metric);
                let xa: Vec<f64> = va.iter().map(|v| v.0).collect();
                let xb: Vec<f64> = vb.iter().map(|v| v.0).collect();
                tests.push(PairedTest {
                    state_bits: cell.0,
                    code_width: cell.1,
                    metric,
                    condition_a: a.clone(),
                    condition_b: b.clone(),
                    median_a: median(&xa).unwrap_or(f64::NAN),
                    median_b: median(&xb).unwrap_or(f64::NAN),
                    censored_a: va.iter().filter(|v| v.1).count(),
                    censored_b: vb.iter().filter(|v| v.1).count(),
                    n_a: xa.len(),
                    n_b: xb.len(),
                    test: mann_whitney_u(&xa, &xb)?,
                });
            }
        }
    }

    let mut traces = Vec::new();
    let mut reachable = Vec::new();
    if matches!(config.kind, ExperimentKind::GrammarAblation | ExperimentKind::EmptySeedCoverage) {
        for &cell in &cells {
            for (cond, arm) in config.conditions(cell) {
                let runs: Vec<&TrialRecord> =
                    trials.iter().filter(|t| t.condition == cond && (t.state_bits, t.code_width) == cell).collect();
                let results: Vec<&CampaignResult> = runs.iter().map(|t| &t.result).collect();
                traces.push((format!("{cond}{}", cell_suffix(cell, multi)), report_coverage_trace(&results)));
                if let (ExperimentKind::EmptySeedCoverage, Arm::Fuzz(target)) = (config.kind, arm) {
                    let reference = reachable_edges(&target, config.reference_programs, config.base_seed);
                    let mut union: std::collections::BTreeSet<usize> = reference.iter().copied().collect();
                    for r in &results {
                        union.extend(r.covered_edges.iter().copied());
                    }
                    reachable.push(ReachableSummary {
                        condition: cond.clone(),
                        state_bits: cell.0,
                        code_width: cell.1,
                        reference_edges: reference.len(),
                        reachable_edges: union.len(),
                        fractions: results.iter().map(|r| r.edges_covered() as f64 / union.len() as f64).collect(),
                        full_fsm_trials: results.iter().filter(|r| r.fsm_fraction() == Some(1.0)).count(),
                        trials: results.len(),
                    });
                }
            }
        }
    }

    Ok(ExperimentReport { config, trials, heatmaps, tests, traces, reachable })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, contents).map_err(|e| Error::io(&p, e))
}

fn summary_markdown(r: &ExperimentReport) -> String {
    let c = &r.config;
    let mut out = format!("# {}\n\n", c.kind.label());
    let _ = writeln!(out, "device: {}, trials per cell and condition: {}, base seed: {}\n", c.device(), c.trials, c.base_seed);
    for (name, h) in &r.heatmaps {
        let _ = writeln!(out, "## {name}: mean {}\n\n{}", h.metric, h.to_markdown());
    }
    if r.heatmaps.iter().any(|(_, h)| h.cells.iter().any(|c| c.censored > 0)) {
        out.push_str("`*`: some trials hit the budget; the mean is a lower bound.\n\n");
    }
    if !r.tests.is_empty() {
        out.push_str("## Mann-Whitney U tests (two-sided, alpha = 0.05)\n\n");
        out.push_str("| cell | metric | a | b | median a | median b | U | p | significant |\n");
        out.push_str("|---|---|---|---|---|---|---|---|---|\n");
        for p in &r.tests {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {:.1} | {:.1} | {} | {:.4} | {} |",
                cell_suffix((p.state_bits, p.code_width), true).trim_start_matches('_'),
                p.metric.label(),
                p.condition_a,
                p.condition_b,
                p.median_a,
                p.median_b,
                p.test.u_statistic,
                p.test.p_value,
                p.test.significant
            );
        }
        out.push('\n');
    }
    if !r.reachable.is_empty() {
        out.push_str("## Coverage of reachable edges\n\n| condition | cell | reachable | mean fraction | min fraction | full FSM |\n|---|---|---|---|---|---|\n");
        for s in &r.reachable {
            let min = s.fractions.iter().copied().fold(f64::INFINITY, f64::min);
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.3} | {:.3} | {}/{} |",
                s.condition,
                cell_suffix((s.state_bits, s.code_width), true).trim_start_matches('_'),
                s.reachable_edges,
                crate::stats::mean(&s.fractions).unwrap_or(0.0),
                min,
                s.full_fsm_trials,
                s.trials
            );
        }
    }
    out
}

fn write_report(r: &ExperimentReport) -> Result<()> {
    let dir = &r.config.output_dir;
    write_file(dir, "config.toml", &r.config.to_toml())?;
    write_file(dir, "trials.csv", &trials_to_csv(&r.trials))?;
    write_file(dir, "trajectories.csv", &trajectories_to_csv(&r.trials))?;
    for (name, h) in &r.heatmaps {
        write_file(dir, &format!("heatmap_{name}.csv"), &h.to_csv())?;
    }
    if !r.tests.is_empty() {
        write_file(dir, "stats.csv", &stats_to_csv(&r.tests))?;
    }
    for (name, rows) in &r.traces {
        write_file(dir, &format!("trace_{name}.csv"), &trace_to_csv(rows))?;
    }
    if !r.reachable.is_empty() {
        let mut csv = String::from("condition,state_bits,code_width,trial,reference_edges,reachable_edges,fraction\n");
        for s in &r.reachable {
            for (i, f) in s.fractions.iter().enumerate() {
                let _ = writeln!(
                    csv,
                    "{},{},{},{i},{},{},{f}",
                    s.condition,
                    opt(s.state_bits),
                    opt(s.code_width),
                    s.reference_edges,
                    s.reachable_edges
                );
            }
        }
        write_file(dir, "reachable.csv", &csv)?;
    }
    if r.config.save_artifacts {
        for t in &r.trials {
            t.result.write_artifacts(&dir.join("artifacts").join(format!("trial{:05}", t.trial_id)))?;
        }
    }
    write_file(dir, "summary.md", &summary_markdown(r))
}

/// Runs the experiment and writes its artifacts to `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let trials = run_trials(config)?;
    let report = analyse(config.clone(), trials)?;
    write_report(&report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_gets_defaults() {
        let cfg = ExperimentConfig::from_toml_str("kind = \"fuzz_vs_crv\"\n").unwrap();
        assert_eq!(cfg.trials, 10);
        assert_eq!(cfg.state_bits, vec![1, 2]);
        assert_eq!(cfg.device(), Device::Lock);
        assert_eq!(cfg.fuzzer.budget(), Budget::execs(DEFAULT_FUZZ_EXECS));
        assert_eq!(cfg.crv.budget(), Budget::sim_cycles(DEFAULT_CRV_CYCLES));
    }

    #[test]
    fn full_toml_round_trips() {
        let text = r#"
kind = "grammar_ablation"
output_dir = "out/ga"
trials = 3
base_seed = 7
device = "lock_periph"
state_bits = [2]
code_widths = [4]
opcode_formats = ["constant", "mapped"]
frame_formats = ["fixed", "variable"]
fork_point = "at_start"
scope = "all"

[fuzzer]
max_execs = 5000
sample_every = 100
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.encodings().len(), 4);
        assert_eq!(cfg.fork_point, ForkPoint::AtStart);
        assert_eq!(cfg.scope, ScopeFilter::All);
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(cfg.pairs().len(), 2);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            "kind = \"fuzz_vs_crv\"\ntrials = 0\n",
            "kind = \"fuzz_vs_crv\"\nstate_bits = []\n",
            "kind = \"fuzz_vs_crv\"\nstate_bits = [17]\n",
            "kind = \"fuzz_vs_crv\"\ndevice = \"timer\"\n",
            "kind = \"grammar_ablation\"\ndevice = \"lock\"\n",
            "kind = \"grammar_ablation\"\nframe_formats = []\n",
            "kind = \"nope\"\n",
            "kind = \"fuzz_vs_crv\"\nunknown_key = 1\n",
            "kind = \"fuzz_vs_crv\"\n[fuzzer]\nmax_len = 0\n",
        ];
        for text in bad {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn jobs_cover_grid_conditions_and_trials() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::InstrumentationScope, "unused");
        cfg.trials = 3;
        cfg.base_seed = 100;
        let jobs = expand_jobs(&cfg);
        assert_eq!(jobs.len(), 4 * 2 * 3);
        assert!(jobs.iter().enumerate().all(|(i, j)| j.trial_id == i));
        assert_eq!(jobs[5].rng_seed, 102);
        assert_eq!(jobs[3].condition, "all");
    }

    #[test]
    fn censored_metrics_fall_back_to_spend() {
        let lock = LockConfig::new(3, 8, 1).unwrap();
        let r = crv_campaign(&lock, &CrvConfig::new(0, Budget::execs(10))).unwrap();
        assert_eq!(Metric::SimCyclesToUnlock.value(&r), (r.sim_cycles as f64, true));
        assert_eq!(Metric::ExecsToUnlock.value(&r), (10.0, true));
    }
}
