//! Flat `key = value` configuration files.
//!
//! ```text
//! # comments start with '#' or ';'
//! optimizer = adamw
//! lr = 0.001
//! [schedule]          # keys below are read as schedule.<key>
//! kind = cosine
//! t0 = 10
//! ```
//!
//! Every [`RunConfig`] and [`SweepSpec`] field has a key; see [`KEYS`].
//! Values set later (including command-line overrides) win.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::sweep::{base2_grid, SweepSpec};
use super::{ProblemSpec, RunConfig};
use crate::error::{Error, Result};
use crate::problems::SparseLogisticTask;
use crate::schedule::SchedulePolicy;

pub const KEYS: &[&str] = &[
    "problem",
    "problem.dim",
    "problem.informative",
    "problem.train",
    "problem.eval",
    "problem.signal",
    "mlp.hidden",
    "mlp.init_scale",
    "quadratic.curvature",
    "quadratic.opt",
    "quadratic.eval_opt",
    "quadratic.init",
    "csv.train",
    "csv.eval",
    "optimizer",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "decay",
    "normalized",
    "schedule",
    "schedule.kind",
    "schedule.drops",
    "schedule.factor",
    "schedule.t0",
    "schedule.t_mult",
    "schedule.eta_min",
    "schedule.eta_max",
    "epochs",
    "batch_size",
    "seed",
    "eval_every",
    "exempt_bias",
    "sweep.lrs",
    "sweep.lr_start",
    "sweep.lr_count",
    "sweep.decays",
    "sweep.decay_start",
    "sweep.decay_count",
    "sweep.repetitions",
];

/// Parsed key/value pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_named(text, Path::new("<config>"))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_named(&text, path)
    }

    fn parse_named(text: &str, path: &Path) -> Result<Self> {
        let mut map = Self::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.into(),
                line: idx + 1,
                msg,
            };
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section header '{line}'")))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            let key = key.trim();
            let key = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            map.set(&key, value.trim()).map_err(|e| err(e.to_string()))?;
        }
        Ok(map)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn merge(&mut self, other: &ConfigMap) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("{key} = '{v}': {e}")))
            })
            .transpose()
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Config(format!("{key}: '{x}': {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    fn boolean(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "on" | "1" => Ok(true),
                "false" | "no" | "off" | "0" => Ok(false),
                _ => Err(Error::Config(format!("{key} = '{v}' is not a boolean"))),
            })
            .transpose()
    }

    pub fn seed(&self) -> Result<Option<u64>> {
        self.parsed("seed")
    }

    /// Builds a run configuration, starting from the defaults.
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut c = RunConfig {
            problem: self.problem()?,
            ..RunConfig::default()
        };
        set(&mut c.optimizer, self.parsed("optimizer")?);
        set(&mut c.lr, self.parsed("lr")?);
        set(&mut c.beta1, self.parsed("beta1")?);
        set(&mut c.beta2, self.parsed("beta2")?);
        set(&mut c.eps, self.parsed("eps")?);
        set(&mut c.decay, self.parsed("decay")?);
        set(&mut c.normalized, self.boolean("normalized")?);
        set(&mut c.epochs, self.parsed("epochs")?);
        c.schedule = self.schedule(c.epochs)?;
        set(&mut c.batch_size, self.parsed("batch_size")?);
        set(&mut c.seed, self.parsed("seed")?);
        set(&mut c.eval_every, self.parsed("eval_every")?);
        set(&mut c.exempt_bias, self.boolean("exempt_bias")?);
        c.validate()?;
        Ok(c)
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        let base = self.run_config()?;
        let grid = |list: &str, start: &str, count: &str, default_start: f64| -> Result<Vec<f64>> {
            if let Some(v) = self.list(list)? {
                return Ok(v);
            }
            let s = self.parsed(start)?.unwrap_or(default_start);
            let n = self.parsed(count)?.unwrap_or(6);
            Ok(base2_grid(s, n))
        };
        let spec = SweepSpec {
            lrs: grid("sweep.lrs", "sweep.lr_start", "sweep.lr_count", base.lr / 8.0)?,
            decays: grid("sweep.decays", "sweep.decay_start", "sweep.decay_count", 1.0 / 1024.0)?,
            repetitions: self.parsed("sweep.repetitions")?.unwrap_or(1),
            base,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn problem(&self) -> Result<ProblemSpec> {
        let kind = self.get("problem").unwrap_or("logistic");
        let mut task = SparseLogisticTask::default();
        set(&mut task.dim, self.parsed("problem.dim")?);
        set(&mut task.informative, self.parsed("problem.informative")?);
        set(&mut task.train, self.parsed("problem.train")?);
        set(&mut task.eval, self.parsed("problem.eval")?);
        set(&mut task.signal, self.parsed("problem.signal")?);
        match kind {
            "logistic" => Ok(ProblemSpec::SparseLogistic(task)),
            "mlp" => {
                let hidden = self
                    .list("mlp.hidden")?
                    .unwrap_or_else(|| vec![8.0])
                    .into_iter()
                    .map(|h| h as usize)
                    .collect();
                Ok(ProblemSpec::Mlp {
                    task,
                    hidden,
                    init_scale: self.parsed("mlp.init_scale")?.unwrap_or(1.0),
                })
            }
            "quadratic" => {
                let curvature = self
                    .list("quadratic.curvature")?
                    .ok_or_else(|| Error::Config("quadratic.curvature is required".into()))?;
                let n = curvature.len();
                let opt = self.list("quadratic.opt")?.unwrap_or_else(|| vec![1.0; n]);
                let eval_opt = self
                    .list("quadratic.eval_opt")?
                    .unwrap_or_else(|| opt.iter().map(|o| 0.5 * o).collect());
                let init = self.list("quadratic.init")?.unwrap_or_else(|| vec![0.0; n]);
                Ok(ProblemSpec::Quadratic {
                    curvature,
                    opt,
                    eval_opt,
                    init,
                })
            }
            "csv" => Ok(ProblemSpec::CsvLogistic {
                train: self
                    .get("csv.train")
                    .ok_or_else(|| Error::Config("csv.train is required".into()))?
                    .to_string(),
                eval: self
                    .get("csv.eval")
                    .ok_or_else(|| Error::Config("csv.eval is required".into()))?
                    .to_string(),
            }),
            other => Err(Error::Config(format!("unknown problem '{other}'"))),
        }
    }

    fn schedule(&self, epochs: usize) -> Result<SchedulePolicy> {
        let kind = self
            .get("schedule.kind")
            .or_else(|| self.get("schedule"))
            .unwrap_or("fixed");
        let policy = match kind {
            "fixed" => SchedulePolicy::Fixed,
            "stepdrop" | "step-drop" | "step_drop" => SchedulePolicy::StepDrop {
                drop_epochs: self
                    .list("schedule.drops")?
                    .unwrap_or_else(|| vec![30.0, 60.0, 80.0]),
                factor: self.parsed("schedule.factor")?.unwrap_or(0.1),
            },
            "cosine" => SchedulePolicy::CosineRestarts {
                t0: self.parsed("schedule.t0")?.unwrap_or(epochs as f64),
                t_mult: self.parsed("schedule.t_mult")?.unwrap_or(1.0),
                eta_min: self.parsed("schedule.eta_min")?.unwrap_or(0.0),
                eta_max: self.parsed("schedule.eta_max")?.unwrap_or(1.0),
            },
            other => return Err(Error::Config(format!("unknown schedule '{other}'"))),
        };
        policy.validate()?;
        Ok(policy)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find(['#', ';']) {
        Some(i) => &line[..i],
        None => line,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::OptimizerKind;

    #[test]
    fn sections_prefix_keys() {
        let text = "optimizer = sgdw # trailing comment\nlr=0.05\n\n[schedule]\nkind = cosine\nt0 = 10\nt_mult = 2\n";
        let map = ConfigMap::parse(text).unwrap();
        let c = map.run_config().unwrap();
        assert_eq!(c.optimizer, OptimizerKind::Sgdw);
        assert_eq!(c.lr, 0.05);
        assert_eq!(c.schedule, SchedulePolicy::cosine(10.0, 2.0));
    }

    #[test]
    fn cosine_period_defaults_to_epochs() {
        let map = ConfigMap::parse("schedule = cosine\nepochs = 40").unwrap();
        assert_eq!(map.run_config().unwrap().schedule, SchedulePolicy::cosine(40.0, 1.0));
    }

    #[test]
    fn overrides_win() {
        let mut map = ConfigMap::parse("seed = 1\ndecay = 0.1").unwrap();
        map.apply_override("decay=0.25").unwrap();
        let c = map.run_config().unwrap();
        assert_eq!((c.seed, c.decay), (1, 0.25));
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let err = ConfigMap::parse("lr = 1\nlearning_rate = 2").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn bad_values() {
        let map = ConfigMap::parse("optimizer = rmsprop").unwrap();
        assert!(map.run_config().is_err());
        let map = ConfigMap::parse("normalized = maybe").unwrap();
        assert!(map.run_config().is_err());
        assert!(ConfigMap::parse("[schedule\nt0 = 1").is_err());
    }

    #[test]
    fn sweep_grids() {
        let map = ConfigMap::parse(
            "[sweep]\nlrs = 0.1, 0.2\ndecay_start = 0.001\ndecay_count = 3\nrepetitions = 2",
        )
        .unwrap();
        let s = map.sweep_spec().unwrap();
        assert_eq!(s.lrs, vec![0.1, 0.2]);
        assert_eq!(s.decays, vec![0.001, 0.002, 0.004]);
        assert_eq!(s.repetitions, 2);
    }

    #[test]
    fn quadratic_problem() {
        let map = ConfigMap::parse("problem = quadratic\nquadratic.curvature = 1, 100").unwrap();
        match map.run_config().unwrap().problem {
            ProblemSpec::Quadratic { opt, eval_opt, .. } => {
                assert_eq!(opt, vec![1.0, 1.0]);
                assert_eq!(eval_opt, vec![0.5, 0.5]);
            }
            p => panic!("unexpected {p:?}"),
        }
    }
}
