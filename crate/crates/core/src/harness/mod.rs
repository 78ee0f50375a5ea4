//! Deterministic training runs, (lr, decay) grid sweeps, and their CSV /
//! JSON-lines artifacts.

pub mod config;
pub mod emit;
pub mod sweep;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::optim::{adam_step, sgd_step, AdamHyper, DecayMode, OptimizerState, SgdHyper};
use crate::problems::{BatchPlan, Dataset, Problem, SparseLogisticTask};
use crate::rng::{mix_seed, Rng};
use crate::schedule::{
    advance, effective_lambda, eta, NormalizedDecay, SchedulePolicy, ScheduleState,
};
use crate::vector::ParamVector;

pub use sweep::{sweep, SeparabilityReport, SweepResult, SweepSpec};

/// The four optimizer variants. `sgd`/`adam` regularize through an L2 term in
/// the gradient; `sgdw`/`adamw` decay the weights directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd,
    Sgdw,
    Adam,
    Adamw,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Sgd,
        OptimizerKind::Sgdw,
        OptimizerKind::Adam,
        OptimizerKind::Adamw,
    ];

    pub fn is_adam(self) -> bool {
        matches!(self, OptimizerKind::Adam | OptimizerKind::Adamw)
    }

    pub fn is_decoupled(self) -> bool {
        matches!(self, OptimizerKind::Sgdw | OptimizerKind::Adamw)
    }

    pub fn decay_mode(self, coef: f64) -> DecayMode {
        if self.is_decoupled() {
            DecayMode::Decoupled(coef)
        } else {
            DecayMode::L2(coef)
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Sgdw => "sgdw",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Adamw => "adamw",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "sgdw" => Ok(OptimizerKind::Sgdw),
            "adam" => Ok(OptimizerKind::Adam),
            "adamw" => Ok(OptimizerKind::Adamw),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// What to train on.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    /// Deterministic quadratic. Evaluation uses the same curvature but the
    /// minimizer `eval_opt`, so that shrinkage toward zero can help.
    Quadratic {
        curvature: Vec<f64>,
        opt: Vec<f64>,
        eval_opt: Vec<f64>,
        init: Vec<f64>,
    },
    /// Sparse noisy logistic regression drawn from the run seed.
    SparseLogistic(SparseLogisticTask),
    /// tanh MLP on the sparse logistic data.
    Mlp {
        task: SparseLogisticTask,
        hidden: Vec<usize>,
        init_scale: f64,
    },
    /// Logistic regression on CSV files (last column is the 0/1 target).
    CsvLogistic { train: String, eval: String },
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec::SparseLogistic(SparseLogisticTask::default())
    }
}

/// Training and evaluation objectives plus the starting point.
#[derive(Debug, Clone)]
pub struct Instance {
    pub train: Problem,
    pub eval: Problem,
    pub init: ParamVector,
}

impl ProblemSpec {
    /// Materializes the problem. Synthetic data depends on `data_seed` only.
    pub fn instantiate(&self, data_seed: u64) -> Result<Instance> {
        match self {
            ProblemSpec::Quadratic {
                curvature,
                opt,
                eval_opt,
                init,
            } => {
                let curvature = ParamVector::new(curvature.clone())?;
                let train = Problem::quadratic(curvature.clone(), ParamVector::new(opt.clone())?)?;
                let eval = Problem::quadratic(curvature, ParamVector::new(eval_opt.clone())?)?;
                let init = ParamVector::new(init.clone())?;
                if init.len() != train.dim() {
                    return Err(Error::Dimension {
                        expected: train.dim(),
                        actual: init.len(),
                    });
                }
                Ok(Instance { train, eval, init })
            }
            ProblemSpec::SparseLogistic(task) => {
                let (train, eval) = task.generate(data_seed)?;
                let train = Problem::logistic(train);
                let init = ParamVector::zeros(train.dim());
                Ok(Instance {
                    eval: train.with_data(eval)?,
                    train,
                    init,
                })
            }
            ProblemSpec::Mlp {
                task,
                hidden,
                init_scale,
            } => {
                let (train, eval) = task.generate(data_seed)?;
                let mut layers = vec![task.dim];
                layers.extend(hidden);
                layers.push(1);
                let train = Problem::mlp(train, layers.clone())?;
                let mut rng = Rng::derive(data_seed, 0x1A17);
                let init: Vec<f64> = mlp_init(&layers, *init_scale, &mut rng);
                Ok(Instance {
                    eval: train.with_data(eval)?,
                    train,
                    init: ParamVector::new(init)?,
                })
            }
            ProblemSpec::CsvLogistic { train, eval } => {
                let train = Problem::logistic(Dataset::from_csv(train)?);
                let eval = train.with_data(Dataset::from_csv(eval)?)?;
                let init = ParamVector::zeros(train.dim());
                Ok(Instance { train, eval, init })
            }
        }
    }
}

/// Scaled-normal weights (`init_scale / sqrt(fan_in)`), zero biases.
fn mlp_init(layers: &[usize], init_scale: f64, rng: &mut Rng) -> Vec<f64> {
    let mut out = Vec::new();
    for w in layers.windows(2) {
        let std = init_scale / (w[0] as f64).sqrt();
        out.extend((0..w[0] * w[1]).map(|_| std * rng.normal()));
        out.extend(std::iter::repeat_n(0.0, w[1]));
    }
    out
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub optimizer: OptimizerKind,
    /// Base learning rate.
    pub lr: f64,
    /// Momentum factor (SGD) or first-moment decay (Adam).
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient (sgd/adam), decay rate (sgdw/adamw), or normalized
    /// decay when `normalized` is set.
    pub decay: f64,
    pub normalized: bool,
    pub schedule: SchedulePolicy,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_every: usize,
    /// Skip regularization of bias parameters.
    pub exempt_bias: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSpec::default(),
            optimizer: OptimizerKind::Adamw,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 0.0,
            normalized: false,
            schedule: SchedulePolicy::Fixed,
            epochs: 100,
            batch_size: 20,
            seed: 0,
            eval_every: 1,
            exempt_bias: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        self.schedule.validate()?;
        let mode = self.optimizer.decay_mode(self.decay);
        if self.optimizer.is_adam() {
            AdamHyper {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                decay: mode,
            }
            .validate()
        } else {
            SgdHyper::new(self.lr, self.beta1, mode).map(|_| ())
        }
    }

    /// Label in the SGDW/AdamW/SGDWR/AdamWR naming.
    pub fn variant_name(&self) -> String {
        let base = match self.optimizer {
            OptimizerKind::Sgd => "SGD",
            OptimizerKind::Sgdw => "SGDW",
            OptimizerKind::Adam => "Adam",
            OptimizerKind::Adamw => "AdamW",
        };
        let restarts = matches!(self.schedule, SchedulePolicy::CosineRestarts { .. })
            && self.optimizer.is_decoupled();
        if restarts {
            format!("{base}R")
        } else {
            base.to_string()
        }
    }
}

/// One evaluation point of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub epoch: f64,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_error: f64,
    /// Multiplier that the next step will use.
    pub eta: f64,
    /// Decay coefficient in effect (after normalization).
    pub lambda_eff: f64,
    pub restart_index: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<EvalRow>,
    pub diverged: bool,
    pub final_params: Option<ParamVector>,
}

impl RunRecord {
    /// Lowest eval error and the epoch it was first reached. Diverged runs
    /// report the sentinel error 1.0.
    pub fn best_eval_error(&self) -> (f64, f64) {
        if self.diverged {
            return (1.0, self.rows.last().map_or(0.0, |r| r.epoch));
        }
        self.rows
            .iter()
            .fold((f64::INFINITY, 0.0), |best, r| {
                if r.eval_error < best.0 { (r.eval_error, r.epoch) } else { best }
            })
    }

    pub fn final_eval_error(&self) -> f64 {
        if self.diverged {
            return 1.0;
        }
        self.rows.last().map_or(1.0, |r| r.eval_error)
    }

    pub fn final_eval_loss(&self) -> f64 {
        if self.diverged {
            return f64::INFINITY;
        }
        self.rows.last().map_or(f64::INFINITY, |r| r.eval_loss)
    }
}

enum Stepper {
    Sgd(SgdHyper),
    Adam(AdamHyper),
}

impl Stepper {
    fn new(config: &RunConfig, coef: f64) -> Self {
        let decay = config.optimizer.decay_mode(coef);
        if config.optimizer.is_adam() {
            Stepper::Adam(AdamHyper {
                lr: config.lr,
                beta1: config.beta1,
                beta2: config.beta2,
                eps: config.eps,
                decay,
            })
        } else {
            Stepper::Sgd(SgdHyper {
                lr: config.lr,
                momentum: config.beta1,
                decay,
            })
        }
    }

    fn set_coefficient(&mut self, coef: f64, kind: OptimizerKind) {
        let decay = kind.decay_mode(coef);
        match self {
            Stepper::Sgd(h) => h.decay = decay,
            Stepper::Adam(h) => h.decay = decay,
        }
    }

    fn step(
        &self,
        theta: &ParamVector,
        grad: &ParamVector,
        state: &mut OptimizerState,
        eta: f64,
    ) -> Result<ParamVector> {
        match self {
            Stepper::Sgd(h) => sgd_step(theta, grad, state, h, eta),
            Stepper::Adam(h) => adam_step(theta, grad, state, h, eta),
        }
    }
}

/// Decay coefficient for the given period length (only matters when
/// normalization is on).
fn resolve_lambda(config: &RunConfig, n: usize, period_epochs: f64) -> Result<f64> {
    if !config.normalized {
        return Ok(config.decay);
    }
    let nd = NormalizedDecay::new(config.decay, config.batch_size.min(n), n, period_epochs)?;
    Ok(effective_lambda(&nd))
}

/// Epochs the normalization should use for the current period: the cosine
/// period length when restarting, otherwise the whole run.
fn period_epochs(config: &RunConfig, state: &ScheduleState) -> f64 {
    if state.t_i.is_finite() {
        state.t_i
    } else {
        config.epochs as f64
    }
}

/// Trains according to `config` on an already materialized instance.
pub fn run_instance(config: &RunConfig, inst: &Instance) -> Result<RunRecord> {
    config.validate()?;
    let train = &inst.train;
    let n = train.num_examples();
    let plan = BatchPlan::new(n, config.batch_size, mix_seed(config.seed, 0xBA7C))?;
    let steps_per_epoch = plan.steps_per_epoch();
    let step_epochs = 1.0 / steps_per_epoch as f64;

    let mut sched = ScheduleState::new(&config.schedule);
    let mut lambda = resolve_lambda(config, n, period_epochs(config, &sched))?;
    let mut stepper = Stepper::new(config, lambda);
    let mut state = if config.optimizer.is_adam() {
        OptimizerState::adam(train.dim())
    } else {
        OptimizerState::sgd(train.dim())
    };
    if config.exempt_bias {
        let mask = train.bias_mask().into_iter().map(|b| !b).collect();
        state = state.with_decay_mask(mask)?;
    }

    let train_all = train.full_batch();
    let eval_all = inst.eval.full_batch();
    let mut theta = inst.init.clone();
    let mut rows = Vec::with_capacity(config.epochs / config.eval_every);
    let mut diverged = false;

    'epochs: for epoch in 0..config.epochs {
        for (k, batch) in plan.epoch_batches(epoch as u64).iter().enumerate() {
            let step_index = (epoch * steps_per_epoch + k) as f64;
            let multiplier = eta(&config.schedule, &sched, step_index * step_epochs);
            let next = train
                .grad(&theta, batch)
                .and_then(|g| stepper.step(&theta, &g, &mut state, multiplier));
            match next {
                Ok(t) => theta = t,
                Err(Error::NonFinite { .. }) => {
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            let (next_sched, restarted) = advance(sched, &config.schedule, step_epochs);
            sched = next_sched;
            if restarted && config.normalized {
                lambda = resolve_lambda(config, n, period_epochs(config, &sched))?;
                stepper.set_coefficient(lambda, config.optimizer);
            }
        }
        let done = epoch + 1;
        if done % config.eval_every == 0 || done == config.epochs {
            let losses = train.loss(&theta, &train_all).and_then(|tl| {
                let el = inst.eval.loss(&theta, &eval_all)?;
                let ee = inst.eval.error_rate(&theta, &eval_all)?;
                Ok((tl, el, ee))
            });
            let (train_loss, eval_loss, eval_error) = match losses {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            rows.push(EvalRow {
                epoch: done as f64,
                train_loss,
                eval_loss,
                eval_error,
                eta: eta(&config.schedule, &sched, done as f64),
                lambda_eff: lambda,
                restart_index: sched.restart,
            });
        }
    }
    Ok(RunRecord {
        rows,
        diverged,
        final_params: (!diverged).then_some(theta),
    })
}

/// Materializes the problem from the run seed and trains.
pub fn run(config: &RunConfig) -> Result<RunRecord> {
    let inst = config.problem.instantiate(config.seed)?;
    run_instance(config, &inst)
}
