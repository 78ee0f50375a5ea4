//! Paired-trajectory oracles relating L2 regularization and decoupled weight
//! decay.
//!
//! * plain SGD: decay `lambda` and an L2 term `lambda / lr` produce the same
//!   iterates ([`check_prop1`]);
//! * Adam: no single L2 coefficient reproduces AdamW ([`check_prop2`]);
//! * a fixed diagonal preconditioner `diag(s)^-1`: decay `lambda` matches a
//!   penalty `(lambda / lr) / 2 * ||theta * sqrt(s)||^2` ([`check_prop3`]).
//!
//! Both arms of every comparison see the same batches in the same order and
//! sum gradients in the same order, so any gap is either rounding or a real
//! difference between the update rules.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::optim::{
    adam_step, preconditioned_step, sgd_step, AdamHyper, DecayMode, FixedPreconditioner,
    OptimizerState, SgdHyper,
};
use crate::problems::{BatchPlan, Problem};
use crate::rng::Rng;
use crate::vector::ParamVector;

/// Trajectory-gap tolerance for the SGD and fixed-preconditioner identities.
pub const EQUIVALENCE_TOL: f64 = 1e-9;

/// Separation the AdamW / Adam-L2 final-point gap must exceed on the
/// anisotropic quadratic.
pub const PROP2_SEPARATION: f64 = 1e-4;

/// Mini-batch size used by the oracles on data-backed problems.
pub const ORACLE_BATCH: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// One of the arms diverged before the comparison finished.
    Inconclusive,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        }
    }
}

/// Two parameter trajectories, one entry per completed step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPair {
    pub a: Vec<ParamVector>,
    pub b: Vec<ParamVector>,
    /// Max over steps of `||a_t - b_t||_inf`.
    pub max_gap: f64,
    pub diverged: bool,
}

impl TrajectoryPair {
    fn from_arms(a: Vec<ParamVector>, b: Vec<ParamVector>, diverged: bool) -> Result<Self> {
        let mut max_gap: f64 = 0.0;
        for (x, y) in a.iter().zip(&b) {
            max_gap = max_gap.max(x.max_abs_diff(y)?);
        }
        Ok(Self { a, b, max_gap, diverged })
    }

    pub fn verdict(&self, tol: f64) -> Verdict {
        if self.diverged {
            Verdict::Inconclusive
        } else if self.max_gap < tol {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn steps(&self) -> usize {
        self.a.len()
    }
}

/// Well-conditioned quadratic, stable under plain SGD for every `lr <= 1`.
pub fn benign_quadratic() -> Problem {
    Problem::quadratic(
        ParamVector::new(vec![0.5, 1.0, 1.5]).expect("finite"),
        ParamVector::filled(3, 1.0),
    )
    .expect("positive curvature")
}

/// `H = diag(1, 100)` with the optimum at all-ones.
pub fn anisotropic_quadratic() -> Problem {
    Problem::quadratic(
        ParamVector::new(vec![1.0, 100.0]).expect("finite"),
        ParamVector::filled(2, 1.0),
    )
    .expect("positive curvature")
}

/// Training split of the default sparse logistic task.
pub fn oracle_logistic(seed: u64) -> Result<Problem> {
    let (train, _) = crate::problems::SparseLogisticTask::default().generate(seed)?;
    Ok(Problem::logistic(train))
}

/// Seeded starting point, `N(0, 0.5^2)` per coordinate.
pub fn oracle_init(dim: usize, seed: u64) -> ParamVector {
    let mut rng = Rng::derive(seed, 0x1417);
    ParamVector::new((0..dim).map(|_| 0.5 * rng.normal()).collect())
        .expect("finite normal draws")
}

/// Batch sequence for `steps` iterations, shared by both arms.
fn batch_sequence(p: &Problem, steps: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let plan = BatchPlan::new(p.num_examples(), ORACLE_BATCH, seed)?;
    let mut out = Vec::with_capacity(steps);
    let mut epoch = 0;
    while out.len() < steps {
        out.extend(plan.epoch_batches(epoch));
        epoch += 1;
    }
    out.truncate(steps);
    Ok(out)
}

/// Runs two single-arm steppers over the same batches.
fn paired<FA, FB>(
    p: &Problem,
    init: &ParamVector,
    batches: &[Vec<usize>],
    mut step_a: FA,
    mut step_b: FB,
) -> Result<TrajectoryPair>
where
    FA: FnMut(&ParamVector, &[usize]) -> Result<ParamVector>,
    FB: FnMut(&ParamVector, &[usize]) -> Result<ParamVector>,
{
    if init.len() != p.dim() {
        return Err(Error::Dimension {
            expected: p.dim(),
            actual: init.len(),
        });
    }
    let mut a = Vec::with_capacity(batches.len());
    let mut b = Vec::with_capacity(batches.len());
    let mut ta = init.clone();
    let mut tb = init.clone();
    let mut diverged = false;
    for batch in batches {
        match (step_a(&ta, batch), step_b(&tb, batch)) {
            (Ok(na), Ok(nb)) => {
                ta = na;
                tb = nb;
                a.push(ta.clone());
                b.push(tb.clone());
            }
            (Err(Error::NonFinite { .. }), _) | (_, Err(Error::NonFinite { .. })) => {
                diverged = true;
                break;
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    TrajectoryPair::from_arms(a, b, diverged)
}

/// SGD (no momentum, constant multiplier) with decoupled decay `lambda`
/// versus SGD on the L2-regularized loss with coefficient `lambda / lr`.
pub fn check_prop1(p: &Problem, lr: f64, lambda: f64, steps: usize, seed: u64) -> Result<TrajectoryPair> {
    sgd_pair(p, lr, lambda, 0.0, steps, seed)
}

/// Same comparison with a momentum buffer. The identity is not claimed in
/// this case; the gap is reported for information only.
pub fn prop1_momentum_gap(
    p: &Problem,
    lr: f64,
    lambda: f64,
    momentum: f64,
    steps: usize,
    seed: u64,
) -> Result<TrajectoryPair> {
    sgd_pair(p, lr, lambda, momentum, steps, seed)
}

fn sgd_pair(p: &Problem, lr: f64, lambda: f64, momentum: f64, steps: usize, seed: u64) -> Result<TrajectoryPair> {
    let decoupled = SgdHyper::new(lr, momentum, DecayMode::Decoupled(lambda))?;
    let l2 = SgdHyper::new(lr, momentum, DecayMode::L2(lambda / lr))?;
    let init = oracle_init(p.dim(), seed);
    let batches = batch_sequence(p, steps, seed)?;
    let mut sa = OptimizerState::sgd(p.dim());
    let mut sb = OptimizerState::sgd(p.dim());
    paired(
        p,
        &init,
        &batches,
        |th, batch| sgd_step(th, &p.grad(th, batch)?, &mut sa, &decoupled, 1.0),
        |th, batch| sgd_step(th, &p.grad(th, batch)?, &mut sb, &l2, 1.0),
    )
}

/// The loss plus `coef / 2 * ||theta * sqrt(s)||^2`.
#[derive(Debug, Clone)]
pub struct ScaleAdjusted<'a> {
    pub inner: &'a Problem,
    pub scales: &'a ParamVector,
    pub coef: f64,
}

impl ScaleAdjusted<'_> {
    pub fn loss(&self, theta: &ParamVector, batch: &[usize]) -> Result<f64> {
        let penalty: f64 = theta
            .iter()
            .zip(self.scales)
            .map(|(t, s)| t * t * s)
            .sum();
        Ok(self.inner.loss(theta, batch)? + 0.5 * self.coef * penalty)
    }

    pub fn grad(&self, theta: &ParamVector, batch: &[usize]) -> Result<ParamVector> {
        let g = self.inner.grad(theta, batch)?;
        let out: Vec<f64> = g
            .iter()
            .zip(theta)
            .zip(self.scales)
            .map(|((g, t), s)| g + self.coef * (t * s))
            .collect();
        ParamVector::new(out)
    }
}

/// Fixed-preconditioner descent with decoupled decay `lambda` on the loss
/// versus undecayed descent on [`ScaleAdjusted`] with `coef = lambda / lr`.
pub fn check_prop3(
    s: &FixedPreconditioner,
    lr: f64,
    lambda: f64,
    steps: usize,
    p: &Problem,
    seed: u64,
) -> Result<TrajectoryPair> {
    if s.scales().len() != p.dim() {
        return Err(Error::Dimension {
            expected: p.dim(),
            actual: s.scales().len(),
        });
    }
    let sreg = ScaleAdjusted {
        inner: p,
        scales: s.scales(),
        coef: lambda / lr,
    };
    let init = oracle_init(p.dim(), seed);
    let batches = batch_sequence(p, steps, seed)?;
    paired(
        p,
        &init,
        &batches,
        |th, batch| preconditioned_step(th, &p.grad(th, batch)?, s, lr, DecayMode::Decoupled(lambda)),
        |th, batch| preconditioned_step(th, &sreg.grad(th, batch)?, s, lr, DecayMode::None),
    )
}

/// Result of the Adam inequivalence search.
#[derive(Debug, Clone, PartialEq)]
pub struct Prop2Outcome {
    /// `(coefficient, final-point gap)` for every evaluated L2 coefficient,
    /// grid points first, then refinement probes.
    pub evaluations: Vec<(f64, f64)>,
    pub best_l2: f64,
    pub min_gap: f64,
}

impl Prop2Outcome {
    pub fn verdict(&self, threshold: f64) -> Verdict {
        if self.min_gap.is_finite() && self.min_gap > threshold {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// `count` log-spaced coefficients spanning `[lambda / (100 lr), 100 lambda / lr]`.
pub fn prop2_grid(lr: f64, lambda: f64, count: usize) -> Vec<f64> {
    let lo = (lambda / (100.0 * lr)).ln();
    let hi = (100.0 * lambda / lr).ln();
    (0..count)
        .map(|k| (lo + (hi - lo) * k as f64 / (count - 1).max(1) as f64).exp())
        .collect()
}

/// Final parameters of full-batch Adam with the given decay mode.
fn adam_final(p: &Problem, init: &ParamVector, lr: f64, decay: DecayMode, steps: usize) -> Result<ParamVector> {
    let h = AdamHyper {
        lr,
        decay,
        ..AdamHyper::default()
    };
    let batch = p.full_batch();
    let mut state = OptimizerState::adam(p.dim());
    let mut theta = init.clone();
    for _ in 0..steps {
        theta = adam_step(&theta, &p.grad(&theta, &batch)?, &mut state, &h, 1.0)?;
    }
    Ok(theta)
}

/// Starting point for [`check_prop2`]: `1 + 0.1 u`, `u ~ U(-1, 1)` per coordinate.
pub fn prop2_init(dim: usize, seed: u64) -> ParamVector {
    let mut rng = Rng::derive(seed, 0x2A2A);
    ParamVector::new((0..dim).map(|_| 1.0 + 0.1 * rng.uniform_range(-1.0, 1.0)).collect())
        .expect("finite")
}

/// Runs AdamW with decay `lambda` and Adam-L2 for every coefficient in
/// `grid`, then refines the best grid cell by golden-section search in log
/// space. Returns the smallest final-point gap found.
pub fn check_prop2(
    p: &Problem,
    lr: f64,
    lambda: f64,
    steps: usize,
    grid: &[f64],
    seed: u64,
) -> Result<Prop2Outcome> {
    if grid.is_empty() {
        return Err(Error::Config("L2 coefficient grid is empty".into()));
    }
    let init = prop2_init(p.dim(), seed);
    let target = adam_final(p, &init, lr, DecayMode::Decoupled(lambda), steps)?;
    let gap_at = |coef: f64| -> f64 {
        adam_final(p, &init, lr, DecayMode::L2(coef), steps)
            .and_then(|th| th.max_abs_diff(&target))
            .unwrap_or(f64::INFINITY)
    };

    let mut evaluations: Vec<(f64, f64)> = grid.par_iter().map(|&c| (c, gap_at(c))).collect();
    let best = evaluations
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .expect("nonempty grid");

    let mut sorted: Vec<f64> = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = sorted
        .iter()
        .position(|&c| c == evaluations[best].0)
        .expect("grid value present");
    let lo = sorted[pos.saturating_sub(1)].ln();
    let hi = sorted[(pos + 1).min(sorted.len() - 1)].ln();
    if hi > lo {
        evaluations.extend(golden_section(|x| gap_at(x.exp()), lo, hi, 40).into_iter().map(|(x, g)| (x.exp(), g)));
    }

    let (best_l2, min_gap) = evaluations
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty");
    Ok(Prop2Outcome {
        evaluations,
        best_l2,
        min_gap,
    })
}

/// Golden-section search for a minimum on `[lo, hi]`; returns every probe.
fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> Vec<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut probes = Vec::with_capacity(iters + 2);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    probes.push((x1, f1));
    probes.push((x2, f2));
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
            probes.push((x1, f1));
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
            probes.push((x2, f2));
        }
    }
    probes
}

/// One step's multiplicative shrinkage of a zero-gradient coordinate under
/// the fixed preconditioner: `(l2, decoupled)` where L2 with coefficient
/// `coef` gives `lr * coef / s_i` and decoupled decay gives `lambda`.
pub fn fixed_preconditioner_shrinkage(
    s: &FixedPreconditioner,
    lr: f64,
    coef: f64,
    lambda: f64,
    theta: &ParamVector,
) -> Result<Vec<(f64, f64)>> {
    let penalty = theta.scale(coef)?;
    let l2 = preconditioned_step(theta, &penalty, s, lr, DecayMode::None)?;
    let dec = preconditioned_step(theta, &ParamVector::zeros(theta.len()), s, lr, DecayMode::Decoupled(lambda))?;
    Ok((0..theta.len())
        .map(|i| (1.0 - l2[i] / theta[i], 1.0 - dec[i] / theta[i]))
        .collect())
}
