//! Grid sweeps over (learning rate, decay) and the separability summary.

use rayon::prelude::*;

use super::{run_instance, RunConfig};
use crate::error::{Error, Result};
use crate::rng::mix_seed;

/// `start * 2^k` for `k = 0..count`.
pub fn base2_grid(start: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| start * 2f64.powi(k as i32)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub lrs: Vec<f64>,
    /// Raw or normalized decay values, per `base.normalized`.
    pub decays: Vec<f64>,
    pub repetitions: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lrs.is_empty() || self.decays.is_empty() {
            return Err(Error::Config("sweep grids must be nonempty".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be >= 1".into()));
        }
        self.base.validate()
    }

    /// Seed of repetition `rep`. Every cell of a repetition shares it, so the
    /// whole grid sees the same data and batch order.
    pub fn repetition_seed(&self, rep: usize) -> u64 {
        mix_seed(self.base.seed, rep as u64)
    }

    pub fn cell_config(&self, lr_index: usize, decay_index: usize, rep: usize) -> RunConfig {
        RunConfig {
            lr: self.lrs[lr_index],
            decay: self.decays[decay_index],
            seed: self.repetition_seed(rep),
            ..self.base.clone()
        }
    }
}

/// Outcome of one (cell, repetition) run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellRun {
    pub lr_index: usize,
    pub decay_index: usize,
    pub rep: usize,
    pub final_eval_error: f64,
    pub best_eval_error: f64,
    pub final_eval_loss: f64,
    pub diverged: bool,
}

/// One row of the sweep CSV: a grid cell averaged over repetitions. A cell
/// with any diverged repetition carries the divergence sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSummary {
    pub lr: f64,
    pub decay: f64,
    pub final_eval_error: f64,
    pub best_eval_error: f64,
    pub final_eval_loss: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub lrs: Vec<f64>,
    pub decays: Vec<f64>,
    pub repetitions: usize,
    /// Ordered by repetition, then learning rate, then decay.
    pub runs: Vec<CellRun>,
}

/// Where the best decay sits in each learning-rate column.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparabilityReport {
    /// `argmin[rep][lr_index]`: index of the decay with the lowest final
    /// eval loss, `None` if the whole column diverged.
    pub argmin: Vec<Vec<Option<usize>>>,
    /// Per repetition: max minus min of the argmin indices across columns.
    pub drift: Vec<usize>,
    pub median_drift: f64,
}

impl SweepResult {
    fn run_at(&self, rep: usize, lr_index: usize, decay_index: usize) -> &CellRun {
        let per_rep = self.lrs.len() * self.decays.len();
        &self.runs[rep * per_rep + lr_index * self.decays.len() + decay_index]
    }

    pub fn summaries(&self) -> Vec<CellSummary> {
        let mut out = Vec::with_capacity(self.lrs.len() * self.decays.len());
        for (i, &lr) in self.lrs.iter().enumerate() {
            for (j, &decay) in self.decays.iter().enumerate() {
                let runs: Vec<&CellRun> =
                    (0..self.repetitions).map(|r| self.run_at(r, i, j)).collect();
                let diverged = runs.iter().any(|r| r.diverged);
                let mean = |f: fn(&CellRun) -> f64| {
                    runs.iter().map(|r| f(r)).sum::<f64>() / runs.len() as f64
                };
                out.push(if diverged {
                    CellSummary {
                        lr,
                        decay,
                        final_eval_error: 1.0,
                        best_eval_error: 1.0,
                        final_eval_loss: f64::INFINITY,
                        diverged,
                    }
                } else {
                    CellSummary {
                        lr,
                        decay,
                        final_eval_error: mean(|r| r.final_eval_error),
                        best_eval_error: mean(|r| r.best_eval_error),
                        final_eval_loss: mean(|r| r.final_eval_loss),
                        diverged,
                    }
                });
            }
        }
        out
    }

    /// Argmin of final eval loss over the decay axis for every learning-rate
    /// column, per repetition, and the spread of those argmins.
    pub fn separability(&self) -> SeparabilityReport {
        let mut argmin = Vec::with_capacity(self.repetitions);
        let mut drift = Vec::with_capacity(self.repetitions);
        for rep in 0..self.repetitions {
            let cols: Vec<Option<usize>> = (0..self.lrs.len())
                .map(|i| {
                    (0..self.decays.len())
                        .map(|j| self.run_at(rep, i, j))
                        .filter(|r| !r.diverged)
                        .min_by(|a, b| a.final_eval_loss.total_cmp(&b.final_eval_loss))
                        .map(|r| r.decay_index)
                })
                .collect();
            let present: Vec<usize> = cols.iter().flatten().copied().collect();
            let spread = match (present.iter().min(), present.iter().max()) {
                (Some(lo), Some(hi)) => hi - lo,
                _ => 0,
            };
            argmin.push(cols);
            drift.push(spread);
        }
        let median_drift = median(drift.iter().map(|&d| d as f64).collect());
        SeparabilityReport {
            argmin,
            drift,
            median_drift,
        }
    }

    /// The `k` best cells by mean best eval error; ties broken by
    /// (lr, decay) in ascending order.
    pub fn top_cells(&self, k: usize) -> Vec<CellSummary> {
        let mut cells: Vec<CellSummary> =
            self.summaries().into_iter().filter(|c| !c.diverged).collect();
        cells.sort_by(|a, b| {
            a.best_eval_error
                .total_cmp(&b.best_eval_error)
                .then(a.lr.total_cmp(&b.lr))
                .then(a.decay.total_cmp(&b.decay))
        });
        cells.truncate(k);
        cells
    }
}

pub fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Runs every (repetition, lr, decay) cell. Cells are independent and run in
/// parallel; results come back in grid order regardless of scheduling.
pub fn sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let instances = (0..spec.repetitions)
        .map(|rep| spec.base.problem.instantiate(spec.repetition_seed(rep)))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize, usize)> = (0..spec.repetitions)
        .flat_map(|r| {
            (0..spec.lrs.len()).flat_map(move |i| (0..spec.decays.len()).map(move |j| (r, i, j)))
        })
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(rep, i, j)| {
            let config = spec.cell_config(i, j, rep);
            let record = run_instance(&config, &instances[rep])?;
            Ok(CellRun {
                lr_index: i,
                decay_index: j,
                rep,
                final_eval_error: record.final_eval_error(),
                best_eval_error: record.best_eval_error().0,
                final_eval_loss: record.final_eval_loss(),
                diverged: record.diverged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        lrs: spec.lrs.clone(),
        decays: spec.decays.clone(),
        repetitions: spec.repetitions,
        runs,
    })
}
