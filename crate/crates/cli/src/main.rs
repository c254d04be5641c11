use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use nashflow::harness::{
    self, resolve_config, Algorithm, Experiment, ExperimentConfig, Overrides, SweepParam,
};

#[derive(Parser, Debug)]
#[command(name = "nashflow", version, about = "Distributed Nash equilibrium seeking simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment and write trajectory.csv, summary.json and reference.json.
    Run(Common),
    /// Repeat a run over several values of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of r, epsilon, T, T0, eta, dt.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Run several algorithms (or configs) on one game and tabulate their gaps.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Extra config files; each is compared with the base config.
        #[arg(long = "with")]
        with: Vec<PathBuf>,
        /// Algorithms to compare on the base config (comma-separated).
        #[arg(long, value_delimiter = ',')]
        algorithms: Vec<String>,
        /// Rows of the comparison table.
        #[arg(long, default_value_t = 201)]
        points: usize,
    },
    /// Solve for the saddle reference and write reference.json.
    SolveReference(Common),
    /// Run a config and check its invariants; exits nonzero on failure.
    Validate(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// example1, example2 or quadratic.
    #[arg(long)]
    experiment: Option<String>,
    /// TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Magnitude of a constant disturbance.
    #[arg(long)]
    disturbance: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// accelerated_flow, hybrid_restart or baseline_primal_dual.
    #[arg(long)]
    algorithm: Option<String>,
    /// Final flow time.
    #[arg(long)]
    t_end: Option<f64>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let overrides = Overrides {
            experiment: self.experiment.as_deref().map(Experiment::parse).transpose()?,
            algorithm: self.algorithm.as_deref().map(Algorithm::parse).transpose()?,
            disturbance: self.disturbance,
            seed: self.seed,
            out_dir: self.out_dir.clone(),
        };
        let mut cfg = resolve_config(self.config.as_deref(), &overrides)?;
        if let Some(t) = self.t_end {
            cfg.t_end = t;
            cfg.validate()?;
        }
        Ok(cfg)
    }
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.experiment.name()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "-".into())
}

fn run(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    let dir = out_dir(&cfg);
    info!("running {} / {}", cfg.experiment.name(), cfg.algorithm.name());
    let outcome = harness::run(&cfg)?;
    harness::write_outputs(&outcome, &dir)
        .with_context(|| format!("writing outputs to {}", dir.display()))?;
    let s = &outcome.summary;
    println!("experiment      {}", s.experiment);
    println!("algorithm       {}", s.algorithm);
    println!("epsilon         {}", s.epsilon);
    println!("terminal gap    {}", fmt_opt(s.terminal_gap));
    println!("converged       {}", s.converged);
    println!("diverged        {}", s.diverged);
    if s.algorithm == Algorithm::HybridRestart.name() {
        println!("jumps           {}", s.jump_count);
        println!("consensus time  {} (bound {})", fmt_opt(s.observed_consensus_time), fmt_opt(s.consensus_time_bound));
    }
    if let Some(r) = &s.rate {
        println!("rate slope      {:.3} on [{}, {}]", r.slope, r.window.0, r.window.1);
    }
    println!("wall time       {:.2} s", s.wall_time_s);
    println!("outputs         {}", dir.display());
    Ok(())
}

fn sweep(common: &Common, param: &str, values: &[f64]) -> Result<()> {
    let cfg = common.config()?;
    let param = SweepParam::parse(param)?;
    let dir = out_dir(&cfg);
    let rows = harness::sweep(&cfg, param, values, Some(&dir))?;
    println!("{:>12} {:>14} {:>9} {:>9} {:>8}", param.name(), "terminal_gap", "converged", "diverged", "jumps");
    for r in &rows {
        let s = &r.summary;
        println!(
            "{:>12} {:>14} {:>9} {:>9} {:>8}",
            r.value,
            fmt_opt(s.terminal_gap),
            s.converged,
            s.diverged,
            s.jump_count
        );
    }
    println!("table           {}", dir.join("sweep.csv").display());
    Ok(())
}

fn compare(common: &Common, with: &[PathBuf], algorithms: &[String], points: usize) -> Result<()> {
    let base = common.config()?;
    let mut configs = Vec::new();
    if algorithms.is_empty() {
        configs.push(base.clone());
    }
    for a in algorithms {
        let mut c = base.clone();
        c.algorithm = Algorithm::parse(a)?;
        c.validate()?;
        configs.push(c);
    }
    for p in with {
        configs.push(ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?);
    }
    if configs.len() < 2 {
        bail!("compare needs at least two runs (use --algorithms or --with)");
    }
    let table = harness::compare(&configs, points)?;
    let dir = out_dir(&base);
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("comparison.csv");
    table.write_csv(&path)?;
    for (label, s) in table.labels.iter().zip(&table.summaries) {
        println!("{label:<40} terminal gap {}", fmt_opt(s.terminal_gap));
    }
    println!("table           {}", path.display());
    Ok(())
}

fn solve_reference(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    let spec = harness::build_game(&cfg)?;
    let reference = harness::load_or_solve_reference(&cfg, &spec)?;
    let dir = out_dir(&cfg);
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("reference.json");
    harness::write_reference(&path, &reference)?;
    println!("kkt residual    {:.3e}", reference.kkt_residual);
    println!("interior        {}", spec.check_interiority(&reference));
    println!("reference       {}", path.display());
    Ok(())
}

fn validate(common: &Common) -> Result<bool> {
    let cfg = common.config()?;
    let report = harness::validate(&cfg)?;
    for c in &report.checks {
        println!("{} {:<24} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(dir) = &cfg.output.out_dir {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("validation.json"), &report)?;
    }
    Ok(report.passed())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => run(c).map(|_| true),
        Command::Sweep { common, param, values } => sweep(common, param, values).map(|_| true),
        Command::Compare {
            common,
            with,
            algorithms,
            points,
        } => compare(common, with, algorithms, *points).map(|_| true),
        Command::SolveReference(c) => solve_reference(c).map(|_| true),
        Command::Validate(c) => validate(c),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
