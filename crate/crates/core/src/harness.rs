//! Experiment configuration, runs, sweeps, comparisons and invariant checks.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{baseline_init, integrate_baseline};
use crate::disturbance::{Disturbance, DisturbanceSpec};
use crate::error::{Error, Result};
use crate::flow::{self, FlowParams, RecordOptions};
use crate::game::{self, GameSpec, SaddleReference};
use crate::graph::{CrossEdgeSet, NetworkTopology, SubnetworkGraph};
use crate::hybrid::{self, BoundarySelection, TimerParams};
use crate::metrics::{self, ReferenceOptions, RateFit};
use crate::record::{timers_synchronized, TrajectoryRecord};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Benchmark game under the accelerated flow.
    #[default]
    Example1,
    /// Benchmark game under the restarted hybrid system.
    Example2,
    /// Scalar quadratic game with a closed-form equilibrium.
    Quadratic,
}

impl Experiment {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "example1" => Ok(Self::Example1),
            "example2" => Ok(Self::Example2),
            "quadratic" => Ok(Self::Quadratic),
            other => Err(Error::InvalidConfig(format!(
                "unknown experiment `{other}` (expected example1, example2 or quadratic)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Example1 => "example1",
            Self::Example2 => "example2",
            Self::Quadratic => "quadratic",
        }
    }

    /// Identifier of the underlying game; both examples share one game.
    pub fn game_id(self) -> &'static str {
        match self {
            Self::Example1 | Self::Example2 => "example1",
            Self::Quadratic => "quadratic",
        }
    }

    pub fn default_algorithm(self) -> Algorithm {
        match self {
            Self::Example2 => Algorithm::HybridRestart,
            _ => Algorithm::AcceleratedFlow,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    AcceleratedFlow,
    HybridRestart,
    BaselinePrimalDual,
}

impl Algorithm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "accelerated_flow" => Ok(Self::AcceleratedFlow),
            "hybrid_restart" => Ok(Self::HybridRestart),
            "baseline_primal_dual" => Ok(Self::BaselinePrimalDual),
            other => Err(Error::InvalidConfig(format!(
                "unknown algorithm `{other}` (expected accelerated_flow, hybrid_restart or baseline_primal_dual)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::AcceleratedFlow => "accelerated_flow",
            Self::HybridRestart => "hybrid_restart",
            Self::BaselinePrimalDual => "baseline_primal_dual",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    #[default]
    Ring,
    Path,
    Complete,
}

impl GraphKind {
    fn build(self, n: usize) -> Result<SubnetworkGraph> {
        match self {
            GraphKind::Ring => SubnetworkGraph::ring(n),
            GraphKind::Path => SubnetworkGraph::path(n),
            GraphKind::Complete => SubnetworkGraph::complete(n),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub first: GraphKind,
    pub second: GraphKind,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimerInit {
    /// Drawn uniformly from `[T0, T)` with the run seed.
    #[default]
    Random,
    /// All timers start at `T0`.
    Synchronized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimerConfig {
    pub t0: f64,
    pub t_max: f64,
    pub eta: f64,
    /// Common reset offset; `0.9·(T - T0)/(n1 + n2)` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    pub boundary: BoundarySelection,
    pub initial: TimerInit,
}

impl Default for TimerConfig {
    fn default() -> Self {
        Self {
            t0: 1.0,
            t_max: 5.0,
            eta: 1.0,
            offset: None,
            boundary: BoundarySelection::Lower,
            initial: TimerInit::Random,
        }
    }
}

impl TimerConfig {
    pub fn params(&self, n1: usize, n2: usize) -> Result<TimerParams> {
        let mut p = TimerParams::new(self.t0, self.t_max, self.eta, n1, n2)?;
        if let Some(r) = self.offset {
            p.offsets1 = vec![r; n1];
            p.offsets2 = vec![r; n2];
        }
        p.boundary = self.boundary;
        p.validate(n1, n2)?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticConfig {
    pub centers_x: Vec<f64>,
    pub centers_y: Vec<f64>,
    pub coupling: f64,
}

impl Default for QuadraticConfig {
    fn default() -> Self {
        Self {
            centers_x: vec![1.0, 2.0, 3.0],
            centers_y: vec![-1.0, 0.0, 1.0, 4.0],
            coupling: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub tol: f64,
    pub dt: f64,
    pub max_time: f64,
    /// Directory of `reference_<game>_<seed>.json` fixtures.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixture_dir: Option<PathBuf>,
    /// Require a fixture instead of solving.
    pub offline: bool,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        let o = ReferenceOptions::default();
        Self {
            tol: o.tol,
            dt: o.dt,
            max_time: o.max_time,
            fixture_dir: None,
            offline: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub sample_every: u64,
    pub full_state: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            out_dir: None,
            sample_every: 10,
            full_state: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub algorithm: Algorithm,
    /// Seeds the random boxes and the random initial timers.
    pub seed: u64,
    pub t_end: f64,
    /// Terminal gap below which a run counts as converged.
    pub convergence_tol: f64,
    pub flow: FlowParams,
    pub timers: TimerConfig,
    pub disturbance: DisturbanceSpec,
    pub topology: TopologyConfig,
    pub quadratic: QuadraticConfig,
    pub reference: ReferenceConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Experiment::Example1)
    }
}

impl ExperimentConfig {
    pub fn preset(experiment: Experiment) -> Self {
        Self {
            experiment,
            algorithm: experiment.default_algorithm(),
            seed: 42,
            t_end: match experiment {
                Experiment::Quadratic => 50.0,
                _ => 200.0,
            },
            convergence_tol: 1e-2,
            flow: FlowParams::default(),
            timers: TimerConfig::default(),
            disturbance: DisturbanceSpec::none(),
            topology: TopologyConfig::default(),
            quadratic: QuadraticConfig::default(),
            reference: ReferenceConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.flow.validate()?;
        self.disturbance.validate()?;
        let start = self.start_time();
        if !(self.t_end > start) {
            return Err(Error::InvalidConfig(format!(
                "t_end = {} must exceed the start time {start}",
                self.t_end
            )));
        }
        // TOML integers are signed 64-bit
        for (name, seed) in [("seed", self.seed), ("disturbance.seed", self.disturbance.seed)] {
            if seed > i64::MAX as u64 {
                return Err(Error::InvalidConfig(format!(
                    "{name} = {seed} exceeds {} and cannot be stored in a config file",
                    i64::MAX
                )));
            }
        }
        if self.output.sample_every == 0 {
            return Err(Error::InvalidConfig("sample_every must be positive".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidConfig("convergence_tol must be positive".into()));
        }
        if self.algorithm == Algorithm::HybridRestart {
            let (n1, n2) = self.sizes();
            self.timers.params(n1, n2)?;
        }
        Ok(())
    }

    fn sizes(&self) -> (usize, usize) {
        match self.experiment {
            Experiment::Quadratic => (self.quadratic.centers_x.len(), self.quadratic.centers_y.len()),
            _ => (4, 4),
        }
    }

    /// Flow time at which the selected algorithm starts.
    pub fn start_time(&self) -> f64 {
        match self.algorithm {
            Algorithm::HybridRestart => 0.0,
            _ => self.flow.t0,
        }
    }

    pub fn reference_options(&self) -> ReferenceOptions {
        ReferenceOptions {
            tol: self.reference.tol,
            dt: self.reference.dt,
            max_time: self.reference.max_time,
        }
    }

    fn record_options(&self) -> RecordOptions {
        RecordOptions {
            sample_every: self.output.sample_every,
            full_state: self.output.full_state,
            monitor_every_step: false,
        }
    }

    /// Whether `other` describes the same game (and hence the same reference).
    pub fn same_game(&self, other: &Self) -> bool {
        self.experiment.game_id() == other.experiment.game_id()
            && self.seed == other.seed
            && self.topology == other.topology
            && (self.experiment != Experiment::Quadratic || self.quadratic == other.quadratic)
    }
}

/// Flags that override a loaded or preset config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub experiment: Option<Experiment>,
    pub algorithm: Option<Algorithm>,
    pub disturbance: Option<f64>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(e) = self.experiment {
            cfg.experiment = e;
        }
        if let Some(a) = self.algorithm {
            cfg.algorithm = a;
        }
        if let Some(eps) = self.disturbance {
            cfg.disturbance.epsilon = eps;
            if eps > 0.0 && cfg.disturbance.kind == crate::disturbance::DisturbanceKind::None {
                cfg.disturbance.kind = crate::disturbance::DisturbanceKind::Constant;
            }
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.output.out_dir = Some(d.clone());
        }
    }
}

/// Config from an optional TOML file (else the experiment preset) with flag
/// overrides applied on top.
pub fn resolve_config(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let exp = overrides.experiment.unwrap_or_default();
            ExperimentConfig::preset(exp)
        }
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

pub fn build_game(cfg: &ExperimentConfig) -> Result<GameSpec> {
    match cfg.experiment {
        Experiment::Example1 | Experiment::Example2 => {
            let topology = NetworkTopology::new(
                cfg.topology.first.build(4)?,
                cfg.topology.second.build(4)?,
                CrossEdgeSet::diagonal(4),
            )?;
            game::build_example1_on(topology, cfg.seed)
        }
        Experiment::Quadratic => {
            let q = &cfg.quadratic;
            let n1 = q.centers_x.len();
            let n2 = q.centers_y.len();
            let base = game::build_quadratic_game(&q.centers_x, &q.centers_y, q.coupling)?;
            if cfg.topology == TopologyConfig::default() {
                return Ok(base);
            }
            let topology = NetworkTopology::new(
                cfg.topology.first.build(n1)?,
                cfg.topology.second.build(n2)?,
                CrossEdgeSet::diagonal(n1.min(n2)),
            )?;
            GameSpec::new(
                topology,
                1,
                1,
                base.f().to_vec(),
                base.g().to_vec(),
                base.coupling().to_vec(),
                base.x_mirror().blocks().to_vec(),
                base.y_mirror().blocks().to_vec(),
            )
        }
    }
}

pub fn fixture_name(cfg: &ExperimentConfig) -> String {
    format!("reference_{}_{}.json", cfg.experiment.game_id(), cfg.seed)
}

pub fn read_reference(path: &Path) -> Result<SaddleReference> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn write_reference(path: &Path, reference: &SaddleReference) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(reference)? + "\n")?;
    Ok(())
}

/// Loads the fixture for this game when available, otherwise solves. In
/// offline mode a missing fixture is an error.
pub fn load_or_solve_reference(cfg: &ExperimentConfig, spec: &GameSpec) -> Result<SaddleReference> {
    if let Some(dir) = &cfg.reference.fixture_dir {
        let path = dir.join(fixture_name(cfg));
        if path.exists() {
            let reference = read_reference(&path)?;
            if reference.x.len() != spec.dim_x() || reference.y.len() != spec.dim_y() {
                return Err(Error::MismatchedGames(format!(
                    "fixture {} does not fit the configured game",
                    path.display()
                )));
            }
            return Ok(reference);
        }
        if cfg.reference.offline {
            return Err(Error::MissingFixture(path.display().to_string()));
        }
    } else if cfg.reference.offline {
        return Err(Error::MissingFixture(fixture_name(cfg)));
    }
    metrics::solve_saddle_reference(spec, &cfg.reference_options())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub experiment: String,
    pub algorithm: String,
    pub seed: u64,
    pub epsilon: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub terminal_gap: Option<f64>,
    pub terminal_payoff: Option<f64>,
    pub diverged: bool,
    pub converged: bool,
    /// Gap never increases between samples over the second half of the run.
    pub gap_monotone_last_half: bool,
    pub jump_count: usize,
    pub observed_consensus_time: Option<f64>,
    pub consensus_time_bound: Option<f64>,
    pub rate: Option<RateFit>,
    /// Lyapunov value at the initial condition.
    pub v0: Option<f64>,
    /// `S(x0, λ0, y0, μ0)`.
    pub m0: f64,
    pub max_dist_x: f64,
    pub max_dist_y: f64,
    pub steps: u64,
    pub samples: usize,
    pub reference_kkt: f64,
    pub reference_interior: bool,
    pub final_x: Vec<f64>,
    pub final_y: Vec<f64>,
    pub wall_time_s: f64,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub record: TrajectoryRecord,
    pub reference: SaddleReference,
}

/// Runs `cfg` with a given reference.
pub fn run_with_reference(
    cfg: &ExperimentConfig,
    spec: &GameSpec,
    reference: &SaddleReference,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let mut disturbance = Disturbance::new(&cfg.disturbance, spec.dim_x(), spec.dim_y());
    let opts = cfg.record_options();
    let mut consensus_bound = None;
    let mut timer_bounds = None;
    let record = match cfg.algorithm {
        Algorithm::AcceleratedFlow => {
            let state = flow::default_init(spec, cfg.flow.t0)?;
            flow::integrate(spec, &cfg.flow, &state, cfg.t_end, &mut disturbance, Some(reference), &opts)?
        }
        Algorithm::BaselinePrimalDual => {
            let z0 = baseline_init(spec);
            integrate_baseline(
                spec,
                &cfg.flow,
                &z0,
                cfg.flow.t0,
                cfg.t_end,
                &mut disturbance,
                Some(reference),
                &opts,
            )?
        }
        Algorithm::HybridRestart => {
            let params = cfg.timers.params(spec.n1(), spec.n2())?;
            let (tau1, tau2) = match cfg.timers.initial {
                TimerInit::Random => hybrid::random_timers(&params, spec.n1(), spec.n2(), cfg.seed),
                TimerInit::Synchronized => (vec![params.t0; spec.n1()], vec![params.t0; spec.n2()]),
            };
            let z0 = flow::default_init(spec, params.t0)?.z;
            let hs = hybrid::hybrid_init(spec, &params, z0, tau1, tau2)?;
            consensus_bound = Some(hybrid::timer_consensus_time(&params, spec.n1() + spec.n2()));
            timer_bounds = Some((params.t0, params.t_max));
            hybrid::hybrid_execute(
                spec,
                &cfg.flow,
                &params,
                &hs,
                cfg.t_end,
                &mut disturbance,
                Some(reference),
                &opts,
            )?
        }
    };
    let summary = summarize(cfg, spec, reference, &record, consensus_bound, timer_bounds, started);
    Ok(RunOutcome {
        summary,
        record,
        reference: reference.clone(),
    })
}

fn summarize(
    cfg: &ExperimentConfig,
    spec: &GameSpec,
    reference: &SaddleReference,
    record: &TrajectoryRecord,
    consensus_bound: Option<f64>,
    timer_bounds: Option<(f64, f64)>,
    started: Instant,
) -> RunSummary {
    let t_start = cfg.start_time();
    let terminal_gap = record.terminal_gap();
    let gaps: Vec<(f64, f64)> = record.gap_series();
    let mid = 0.5 * (t_start + cfg.t_end);
    let gap_monotone_last_half = gaps
        .iter()
        .filter(|g| g.0 >= mid)
        .collect::<Vec<_>>()
        .windows(2)
        .all(|w| w[1].1 <= w[0].1);
    let converged = !record.diverged
        && terminal_gap.is_some_and(|g| g.is_finite() && g.abs() <= cfg.convergence_tol);
    let rate_window = (10.0f64.max(t_start), 100.0f64.min(cfg.t_end));
    let rate = if cfg.algorithm == Algorithm::HybridRestart {
        None
    } else {
        metrics::fit_rate(record, rate_window).ok()
    };
    let observed_consensus_time =
        timer_bounds.and_then(|(lo, hi)| record.observed_consensus_time(lo, hi, metrics::CONSENSUS_TOL));
    let z0 = flow::default_init(spec, cfg.flow.t0).map(|s| s.z).ok();
    let m0 = z0
        .as_ref()
        .map(|z| spec.saddle_value_unchecked(&z.x, &z.lambda, &z.y, &z.mu))
        .unwrap_or(f64::NAN);
    let final_state = record.final_state.as_ref();
    RunSummary {
        experiment: cfg.experiment.name().into(),
        algorithm: cfg.algorithm.name().into(),
        seed: cfg.seed,
        epsilon: cfg.disturbance.epsilon,
        t_start,
        t_end: cfg.t_end,
        terminal_gap,
        terminal_payoff: record.last().map(|s| s.payoff),
        diverged: record.diverged,
        converged,
        gap_monotone_last_half,
        jump_count: record.jump_count(),
        observed_consensus_time,
        consensus_time_bound: consensus_bound,
        rate,
        v0: record.samples.first().and_then(|s| s.lyapunov),
        m0,
        max_dist_x: record.samples.iter().map(|s| s.dist_x).fold(0.0, f64::max),
        max_dist_y: record.samples.iter().map(|s| s.dist_y).fold(0.0, f64::max),
        steps: record.steps,
        samples: record.samples.len(),
        reference_kkt: reference.kkt_residual,
        reference_interior: spec.interiority_margin(reference) > 1e-6,
        final_x: final_state.map(|z| z.x.iter().copied().collect()).unwrap_or_default(),
        final_y: final_state.map(|z| z.y.iter().copied().collect()).unwrap_or_default(),
        wall_time_s: started.elapsed().as_secs_f64(),
        config: cfg.clone(),
    }
}

/// Builds the game, obtains the reference and runs the configured algorithm.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let spec = build_game(cfg)?;
    let reference = load_or_solve_reference(cfg, &spec)?;
    run_with_reference(cfg, &spec, &reference)
}

/// Writes `trajectory.csv`, `summary.json` and `reference.json` to `dir`.
pub fn write_outputs(outcome: &RunOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    outcome.record.write_csv(&dir.join("trajectory.csv"))?;
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&outcome.summary)? + "\n",
    )?;
    write_reference(&dir.join("reference.json"), &outcome.reference)?;
    Ok(())
}

/// Parameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    R,
    Epsilon,
    #[serde(rename = "T")]
    TMax,
    #[serde(rename = "T0")]
    T0,
    Eta,
    Dt,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "r" => Ok(Self::R),
            "epsilon" | "eps" => Ok(Self::Epsilon),
            "T" => Ok(Self::TMax),
            "T0" => Ok(Self::T0),
            "eta" => Ok(Self::Eta),
            "dt" => Ok(Self::Dt),
            other => Err(Error::InvalidConfig(format!(
                "cannot sweep `{other}` (expected r, epsilon, T, T0, eta or dt)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::R => "r",
            Self::Epsilon => "epsilon",
            Self::TMax => "T",
            Self::T0 => "T0",
            Self::Eta => "eta",
            Self::Dt => "dt",
        }
    }

    pub fn apply(self, cfg: &mut ExperimentConfig, value: f64) {
        match self {
            Self::R => cfg.flow.r = value,
            Self::Epsilon => {
                cfg.disturbance.epsilon = value;
                if value > 0.0 && cfg.disturbance.kind == crate::disturbance::DisturbanceKind::None {
                    cfg.disturbance.kind = crate::disturbance::DisturbanceKind::Constant;
                }
            }
            Self::TMax => cfg.timers.t_max = value,
            Self::T0 => cfg.timers.t0 = value,
            Self::Eta => cfg.timers.eta = value,
            Self::Dt => cfg.flow.dt = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub summary: RunSummary,
}

/// Independent runs over `values`, in parallel. Every derived config is
/// validated before any run starts. With an output directory, each run
/// writes into `<dir>/<param>_<index>/` and a `sweep.csv` table is added.
pub fn sweep(
    cfg: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    out_dir: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            param.apply(&mut c, v);
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;
    let spec = build_game(cfg)?;
    let reference = load_or_solve_reference(cfg, &spec)?;
    let outcomes: Vec<RunOutcome> = configs
        .par_iter()
        .map(|c| run_with_reference(c, &spec, &reference))
        .collect::<Result<_>>()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        for (i, o) in outcomes.iter().enumerate() {
            write_outputs(o, &dir.join(format!("{}_{i}", param.name())))?;
        }
    }
    let rows: Vec<SweepRow> = values
        .iter()
        .zip(outcomes)
        .map(|(&v, o)| SweepRow {
            parameter: param.name().into(),
            value: v,
            summary: o.summary,
        })
        .collect();
    if let Some(dir) = out_dir {
        write_sweep_csv(&rows, &dir.join("sweep.csv"))?;
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "parameter",
        "value",
        "algorithm",
        "terminal_gap",
        "diverged",
        "converged",
        "jump_count",
        "rate_slope",
        "wall_time_s",
    ])?;
    for r in rows {
        let s = &r.summary;
        w.write_record([
            r.parameter.clone(),
            format!("{:?}", r.value),
            s.algorithm.clone(),
            s.terminal_gap.map(|g| format!("{g:?}")).unwrap_or_default(),
            s.diverged.to_string(),
            s.converged.to_string(),
            s.jump_count.to_string(),
            s.rate.map(|f| format!("{:?}", f.slope)).unwrap_or_default(),
            format!("{:.3}", s.wall_time_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Gap curves of several runs on one elapsed-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub elapsed: Vec<f64>,
    /// `gaps[k][i]` is run `k` at `elapsed[i]`.
    pub gaps: Vec<Vec<f64>>,
    pub summaries: Vec<RunSummary>,
}

/// Runs each config on the shared game and tabulates their gaps against
/// elapsed time `t - t_start`, on `points` evenly spaced instants.
pub fn compare(configs: &[ExperimentConfig], points: usize) -> Result<Comparison> {
    let first = configs
        .first()
        .ok_or_else(|| Error::InvalidConfig("nothing to compare".into()))?;
    for c in &configs[1..] {
        if !first.same_game(c) {
            return Err(Error::MismatchedGames(format!(
                "{} (seed {}) vs {} (seed {})",
                first.experiment.game_id(),
                first.seed,
                c.experiment.game_id(),
                c.seed
            )));
        }
    }
    let spec = build_game(first)?;
    let reference = load_or_solve_reference(first, &spec)?;
    let outcomes: Vec<RunOutcome> = configs
        .par_iter()
        .map(|c| run_with_reference(c, &spec, &reference))
        .collect::<Result<_>>()?;
    let span = configs
        .iter()
        .map(|c| c.t_end - c.start_time())
        .fold(f64::INFINITY, f64::min);
    let points = points.max(2);
    let elapsed: Vec<f64> = (0..points)
        .map(|i| span * i as f64 / (points - 1) as f64)
        .collect();
    let gaps = outcomes
        .iter()
        .zip(configs)
        .map(|(o, c)| {
            let series = last_per_time(&o.record.gap_series());
            elapsed
                .iter()
                .map(|&e| interpolate(&series, c.start_time() + e))
                .collect()
        })
        .collect();
    let mut labels: Vec<String> = Vec::new();
    for c in configs {
        let base = format!("{}_eps{}", c.algorithm.name(), c.disturbance.epsilon);
        let mut label = base.clone();
        let mut k = 2;
        while labels.contains(&label) {
            label = format!("{base}_{k}");
            k += 1;
        }
        labels.push(label);
    }
    Ok(Comparison {
        labels,
        elapsed,
        gaps,
        summaries: outcomes.into_iter().map(|o| o.summary).collect(),
    })
}

impl Comparison {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["elapsed".to_string()];
        header.extend(self.labels.iter().map(|l| format!("gap_{l}")));
        w.write_record(&header)?;
        for (i, e) in self.elapsed.iter().enumerate() {
            let mut row = vec![format!("{e:?}")];
            row.extend(self.gaps.iter().map(|g| format!("{:?}", g[i])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Keeps the last sample at each time (post-jump values for hybrid runs).
fn last_per_time(series: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(series.len());
    for &p in series {
        match out.last_mut() {
            Some(last) if last.0 == p.0 => *last = p,
            _ => out.push(p),
        }
    }
    out
}

fn interpolate(series: &[(f64, f64)], t: f64) -> f64 {
    if series.is_empty() {
        return f64::NAN;
    }
    let k = series.partition_point(|p| p.0 < t);
    if k == 0 {
        return series[0].1;
    }
    if k == series.len() {
        return series[k - 1].1;
    }
    let (a, b) = (series[k - 1], series[k]);
    if b.0 == a.0 {
        return b.1;
    }
    a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub summary: RunSummary,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs `cfg` and checks the invariants that apply to it.
pub fn validate(cfg: &ExperimentConfig) -> Result<ValidationReport> {
    let spec = build_game(cfg)?;
    let reference = load_or_solve_reference(cfg, &spec)?;
    let mut run_cfg = cfg.clone();
    run_cfg.output.full_state = false;
    let outcome = run_with_reference(&run_cfg, &spec, &reference)?;
    let rec = &outcome.record;
    let undisturbed = !cfg.disturbance.is_active();
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(Check {
            name: name.into(),
            passed,
            detail,
        })
    };

    let kkt = metrics::kkt_residual(&spec, &reference.x, &reference.lambda, &reference.y, &reference.mu);
    push("reference_kkt", kkt < 1e-6, format!("residual {kkt:.3e}"));
    push(
        "finite",
        !rec.diverged,
        match rec.divergence {
            Some((t, j)) => format!("diverged at t = {t}, j = {j}"),
            None => "no divergence".into(),
        },
    );
    if undisturbed {
        let worst = rec
            .samples
            .iter()
            .map(|s| s.dist_x.max(s.dist_y))
            .fold(0.0, f64::max);
        push(
            "forward_invariance",
            worst <= 1e-9,
            format!("max distance to X x Y {worst:.3e}"),
        );
    }
    match cfg.algorithm {
        Algorithm::AcceleratedFlow if undisturbed => {
            let worst = rec
                .samples
                .windows(2)
                .filter_map(|w| {
                    let (a, b) = (w[0].lyapunov?, w[1].lyapunov?);
                    Some((b - a) / a.abs().max(1.0))
                })
                .fold(f64::NEG_INFINITY, f64::max);
            push(
                "lyapunov_nonincreasing",
                worst <= 1e-8,
                format!("worst relative increase between samples {worst:.3e}"),
            );
            let v0 = rec.samples.first().and_then(|s| s.lyapunov).unwrap_or(f64::NAN);
            let worst_env = rec
                .samples
                .iter()
                .filter_map(|s| s.gap.map(|g| g * s.t * s.t / (cfg.flow.r * v0)))
                .fold(f64::NEG_INFINITY, f64::max);
            push(
                "rate_envelope",
                worst_env <= 1.0 + 1e-3,
                format!("max gap*t^2/(r*V(t0)) = {worst_env:.4}"),
            );
        }
        Algorithm::HybridRestart => {
            let params = cfg.timers.params(spec.n1(), spec.n2())?;
            let t_star = hybrid::timer_consensus_time(&params, spec.n1() + spec.n2());
            let late_ok = rec
                .samples
                .iter()
                .filter(|s| s.t + s.j as f64 >= t_star)
                .all(|s| timers_synchronized(&s.timers, params.t0, params.t_max, metrics::CONSENSUS_TOL));
            push("timer_consensus", late_ok, format!("T* = {t_star}"));
            let window = (params.t_max - params.t0) / params.eta;
            let worst = max_jumps_in_window(rec, window);
            let bound = spec.n1() + spec.n2();
            push(
                "jump_rate",
                worst <= bound,
                format!("at most {worst} jumps in a window of {window}, bound {bound}"),
            );
            let bad = rec
                .restarts
                .iter()
                .filter(|r| r.lyapunov_after > r.lyapunov_before)
                .count();
            push(
                "lyapunov_jumps",
                bad == 0,
                format!("{bad} of {} restarts increase the Lyapunov value", rec.restarts.len()),
            );
            if undisturbed {
                let c = metrics::epoch_constants(rec);
                let c0 = c.first().copied().unwrap_or(0.0);
                let worst = c.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
                push(
                    "epoch_constants",
                    c.len() < 2 || worst <= 1e-6 * c0,
                    format!("{} epochs, worst increase {worst:.3e}, c0 {c0:.3e}", c.len()),
                );
            }
        }
        _ => {}
    }
    Ok(ValidationReport {
        checks,
        summary: outcome.summary,
    })
}

/// Largest number of jumps whose flow times fall in a half-open window
/// `[a, a + length)`. The right end is pulled in by `WINDOW_TOL` so that
/// events exactly one period apart, up to rounding in the accumulated
/// time, land in different windows.
pub const WINDOW_TOL: f64 = 1e-9;

pub fn max_jumps_in_window(record: &TrajectoryRecord, length: f64) -> usize {
    let times: Vec<f64> = record.events.iter().map(|e| e.t).collect();
    let mut worst = 0;
    let mut hi = 0;
    for lo in 0..times.len() {
        if hi < lo {
            hi = lo;
        }
        while hi < times.len() && times[hi] < times[lo] + length - WINDOW_TOL {
            hi += 1;
        }
        worst = worst.max(hi - lo);
    }
    worst
}

/// Primal part `(x, y)` of a run's final state.
pub fn final_primal(outcome: &RunOutcome) -> Option<(DVector<f64>, DVector<f64>)> {
    outcome
        .record
        .final_state
        .as_ref()
        .map(|z| (z.x.clone(), z.y.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for e in [Experiment::Example1, Experiment::Example2, Experiment::Quadratic] {
            ExperimentConfig::preset(e).validate().unwrap();
        }
        assert_eq!(
            ExperimentConfig::preset(Experiment::Example2).algorithm,
            Algorithm::HybridRestart
        );
    }

    #[test]
    fn toml_round_trip_of_presets() {
        let mut cfg = ExperimentConfig::preset(Experiment::Example2);
        cfg.timers.offset = Some(0.3);
        cfg.output.out_dir = Some("out".into());
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_and_bad_values_are_rejected() {
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("[flow]\nr = 1.5").is_err());
        assert!(ExperimentConfig::from_toml("t_end = 0.5").is_err());
        assert!(ExperimentConfig::from_toml("[disturbance]\nepsilon = -1.0").is_err());
        let partial = ExperimentConfig::from_toml("seed = 7\n[flow]\ndt = 0.002").unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.flow.dt, 0.002);
        assert_eq!(partial.flow.r, 2.0);
    }

    #[test]
    fn overrides_apply_on_top() {
        let o = Overrides {
            experiment: Some(Experiment::Example2),
            disturbance: Some(1e-3),
            seed: Some(3),
            ..Default::default()
        };
        let cfg = resolve_config(None, &o).unwrap();
        assert_eq!(cfg.algorithm, Algorithm::HybridRestart);
        assert_eq!(cfg.disturbance.epsilon, 1e-3);
        assert_eq!(cfg.disturbance.kind, crate::disturbance::DisturbanceKind::Constant);
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn offline_mode_requires_fixture() {
        let mut cfg = ExperimentConfig::preset(Experiment::Quadratic);
        cfg.reference.offline = true;
        let dir = tempfile::tempdir().unwrap();
        cfg.reference.fixture_dir = Some(dir.path().to_path_buf());
        assert!(matches!(run(&cfg), Err(Error::MissingFixture(_))));
    }

    #[test]
    fn interpolation_and_windows() {
        let s = vec![(0.0, 0.0), (1.0, 2.0), (1.0, 4.0), (2.0, 6.0)];
        let l = last_per_time(&s);
        assert_eq!(l, vec![(0.0, 0.0), (1.0, 4.0), (2.0, 6.0)]);
        assert_eq!(interpolate(&l, 0.5), 2.0);
        assert_eq!(interpolate(&l, 5.0), 6.0);
    }

    #[test]
    fn sweep_params_parse() {
        for p in ["r", "epsilon", "T", "T0", "eta", "dt"] {
            assert_eq!(SweepParam::parse(p).unwrap().name(), p);
        }
        assert!(SweepParam::parse("seed").is_err());
    }

    #[test]
    fn quadratic_run_converges_and_validates() {
        let mut cfg = ExperimentConfig::preset(Experiment::Quadratic);
        cfg.t_end = 30.0;
        for alg in [Algorithm::AcceleratedFlow, Algorithm::HybridRestart, Algorithm::BaselinePrimalDual] {
            cfg.algorithm = alg;
            let report = validate(&cfg).unwrap();
            assert!(report.passed(), "{alg:?}: {:?}", report.checks);
            assert!(report.summary.converged, "{alg:?}");
        }
    }
}
