use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use wdecay::equivalence::{
    anisotropic_quadratic, benign_quadratic, check_prop1, check_prop2, check_prop3,
    oracle_logistic, prop1_momentum_gap, prop2_grid, TrajectoryPair, EQUIVALENCE_TOL,
    PROP2_SEPARATION,
};
use wdecay::harness::config::ConfigMap;
use wdecay::harness::emit::{self, fmt_f64, Format};
use wdecay::harness::{run, sweep};
use wdecay::schedule::{advance, eta, ScheduleState};
use wdecay::{FixedPreconditioner, ParamVector, Problem, Result};

#[derive(Parser)]
#[command(name = "wdecay", version, about = "Weight decay experiments and equivalence checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write the per-epoch record.
    Run {
        #[command(flatten)]
        common: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train every (lr, decay) cell of a grid.
    Sweep {
        #[command(flatten)]
        common: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Print the k best cells after the sweep.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Run an equivalence oracle.
    Check {
        #[command(subcommand)]
        which: Check,
    },
    /// Print the schedule multiplier at the start of every epoch.
    ScheduleTable {
        #[command(flatten)]
        common: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// INI-style key = value file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set schedule.t0=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    decay: Option<f64>,
    /// Interpret `decay` as the budget-normalized value.
    #[arg(long)]
    normalized: bool,
    /// fixed, stepdrop or cosine.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct OutArgs {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<OutFormat>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleProblem {
    Quadratic,
    Logistic,
}

#[derive(Subcommand)]
enum Check {
    /// Plain SGD: decoupled decay vs L2 with coefficient decay / lr.
    Prop1 {
        #[arg(long, value_enum, default_value_t = OracleProblem::Quadratic)]
        problem: OracleProblem,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 0.01)]
        lambda: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also report the (unclaimed) gap with this momentum.
        #[arg(long)]
        momentum: Option<f64>,
    },
    /// Adam: search for an L2 coefficient matching AdamW on diag(1, 100).
    Prop2 {
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0.05)]
        lambda: f64,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 25)]
        grid: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fixed preconditioner: decoupled decay vs the scale-adjusted penalty.
    Prop3 {
        /// Comma-separated positive scales; one coordinate each.
        #[arg(long, default_value = "1,4,9", value_delimiter = ',')]
        scales: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 0.05)]
        lambda: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

impl ConfigArgs {
    fn resolve(&self, require_seed: bool) -> Result<ConfigMap> {
        let mut map = match &self.config {
            Some(path) => ConfigMap::from_file(path)?,
            None => ConfigMap::new(),
        };
        for assignment in &self.overrides {
            map.apply_override(assignment)?;
        }
        let flags: [(&str, Option<String>); 8] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("problem", self.problem.clone()),
            ("optimizer", self.optimizer.clone()),
            ("lr", self.lr.map(|v| v.to_string())),
            ("decay", self.decay.map(|v| v.to_string())),
            ("schedule.kind", self.schedule.clone()),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                map.set(key, &v)?;
            }
        }
        if self.normalized {
            map.set("normalized", "true")?;
        }
        if require_seed && self.seed.is_none() {
            return Err(wdecay::Error::Config("--seed is required".into()));
        }
        Ok(map)
    }
}

impl OutArgs {
    fn format(&self) -> Format {
        match (self.format, &self.out) {
            (Some(OutFormat::Csv), _) => Format::Csv,
            (Some(OutFormat::Jsonl), _) => Format::Jsonl,
            (None, Some(path)) => Format::from_path(path),
            (None, None) => Format::Csv,
        }
    }

    fn write(&self, text: &str, to_file: impl FnOnce(&Path, Format) -> Result<()>) -> Result<()> {
        match &self.out {
            Some(path) => to_file(path, self.format()),
            None => to_stdout(text),
        }
    }
}

/// Writes to stdout; a reader that hung up early is not an error.
fn to_stdout(text: &str) -> Result<()> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => {
            Err(wdecay::Error::Config(format!("stdout: {e}")))
        }
        _ => Ok(()),
    }
}

fn render_pair(name: &str, pair: &TrajectoryPair, tol: f64) -> String {
    let mut out = format!(
        "{} {name} max_gap={} steps={}\nstep,gap\n",
        pair.verdict(tol).label(),
        fmt_f64(pair.max_gap),
        pair.steps()
    );
    for (t, (a, b)) in pair.a.iter().zip(&pair.b).enumerate() {
        let gap = a.max_abs_diff(b).unwrap_or(f64::NAN);
        let _ = writeln!(out, "{},{}", t + 1, fmt_f64(gap));
    }
    out
}

fn check(which: Check) -> Result<bool> {
    match which {
        Check::Prop1 {
            problem,
            lr,
            lambda,
            steps,
            seed,
            momentum,
        } => {
            let p = match problem {
                OracleProblem::Quadratic => benign_quadratic(),
                OracleProblem::Logistic => oracle_logistic(seed)?,
            };
            let pair = check_prop1(&p, lr, lambda, steps, seed)?;
            if let Some(beta) = momentum {
                let m = prop1_momentum_gap(&p, lr, lambda, beta, steps, seed)?;
                eprintln!("momentum {beta}: max_gap={} (reported only)", fmt_f64(m.max_gap));
            }
            to_stdout(&render_pair("prop1", &pair, EQUIVALENCE_TOL))?;
            Ok(pair.verdict(EQUIVALENCE_TOL) != wdecay::equivalence::Verdict::Fail)
        }
        Check::Prop2 {
            lr,
            lambda,
            steps,
            grid,
            seed,
        } => {
            let p = anisotropic_quadratic();
            let out = check_prop2(&p, lr, lambda, steps, &prop2_grid(lr, lambda, grid), seed)?;
            let verdict = out.verdict(PROP2_SEPARATION);
            let mut text = format!(
                "{} prop2 min_gap={} best_l2={} threshold={}\nl2_coefficient,gap\n",
                verdict.label(),
                fmt_f64(out.min_gap),
                fmt_f64(out.best_l2),
                fmt_f64(PROP2_SEPARATION)
            );
            for (c, g) in &out.evaluations {
                let _ = writeln!(text, "{},{}", fmt_f64(*c), fmt_f64(*g));
            }
            to_stdout(&text)?;
            Ok(verdict == wdecay::equivalence::Verdict::Pass)
        }
        Check::Prop3 {
            scales,
            lr,
            lambda,
            steps,
            seed,
        } => {
            let n = scales.len();
            let s = FixedPreconditioner::new(ParamVector::new(scales)?)?;
            let curvature: Vec<f64> = (1..=n).map(|i| i as f64).collect();
            let p = Problem::quadratic(ParamVector::new(curvature)?, ParamVector::filled(n, 1.0))?;
            let pair = check_prop3(&s, lr, lambda, steps, &p, seed)?;
            to_stdout(&render_pair("prop3", &pair, EQUIVALENCE_TOL))?;
            Ok(pair.verdict(EQUIVALENCE_TOL) != wdecay::equivalence::Verdict::Fail)
        }
    }
}

fn schedule_table(common: &ConfigArgs) -> Result<()> {
    let config = common.resolve(false)?.run_config()?;
    let policy = &config.schedule;
    let mut state = ScheduleState::new(policy);
    let mut text = String::from("epoch,eta,restart_index\n");
    for epoch in 0..=config.epochs {
        let _ = writeln!(text, "{epoch},{},{}", fmt_f64(eta(policy, &state, epoch as f64)), state.restart);
        state = advance(state, policy, 1.0).0;
    }
    to_stdout(&text)
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { common, out } => {
            let config = common.resolve(true)?.run_config()?;
            let record = run(&config)?;
            if record.diverged {
                eprintln!("{}: diverged", config.variant_name());
            }
            let text = emit::render_run(&record, out.format());
            out.write(&text, |path, format| emit::emit_run(&record, path, format))?;
            Ok(true)
        }
        Command::Sweep { common, out, top } => {
            let spec = common.resolve(true)?.sweep_spec()?;
            let result = sweep(&spec)?;
            let cells = result.summaries();
            let text = emit::render_sweep(&cells, out.format());
            out.write(&text, |path, format| emit::emit_sweep(&cells, path, format))?;
            let report = result.separability();
            eprintln!("{} separability: drift per repetition {:?}, median {}", spec.base.variant_name(), report.drift, report.median_drift);
            for (rank, c) in result.top_cells(top).iter().enumerate() {
                eprintln!("top {:>2}: alpha={} lambda={} best_eval_error={}", rank + 1, c.lr, c.decay, c.best_eval_error);
            }
            Ok(true)
        }
        Command::Check { which } => check(which),
        Command::ScheduleTable { common } => schedule_table(&common).map(|_| true),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
