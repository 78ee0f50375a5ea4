//! Schedule multipliers (fixed, step-drop, cosine annealing with warm
//! restarts) and normalized weight decay.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Relative slack used when deciding that a fractional `t_cur` has reached the
/// end of its period. Per-batch increments of `1 / steps_per_epoch` do not sum
/// to an exact integer in binary floating point.
const BOUNDARY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum SchedulePolicy {
    Fixed,
    StepDrop {
        /// Strictly increasing epoch indices at which the multiplier drops.
        drop_epochs: Vec<f64>,
        factor: f64,
    },
    CosineRestarts {
        t0: f64,
        t_mult: f64,
        eta_min: f64,
        eta_max: f64,
    },
}

impl SchedulePolicy {
    /// Step drops at epochs 30, 60 and 80 with factor 0.1.
    pub fn default_step_drop() -> Self {
        SchedulePolicy::StepDrop {
            drop_epochs: vec![30.0, 60.0, 80.0],
            factor: 0.1,
        }
    }

    /// Single cosine period of `t0` epochs with multiplier range `[0, 1]`.
    pub fn cosine(t0: f64, t_mult: f64) -> Self {
        SchedulePolicy::CosineRestarts {
            t0,
            t_mult,
            eta_min: 0.0,
            eta_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SchedulePolicy::Fixed => Ok(()),
            SchedulePolicy::StepDrop { drop_epochs, factor } => {
                if !(*factor > 0.0 && *factor < 1.0) {
                    return Err(Error::InvalidHyper(format!(
                        "drop factor must lie in (0, 1), got {factor}"
                    )));
                }
                if drop_epochs.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidHyper(
                        "drop epochs must be strictly increasing".into(),
                    ));
                }
                Ok(())
            }
            SchedulePolicy::CosineRestarts {
                t0,
                t_mult,
                eta_min,
                eta_max,
            } => {
                if !(t0.is_finite() && *t0 > 0.0) {
                    return Err(Error::InvalidHyper(format!("t0 must be > 0, got {t0}")));
                }
                if !(t_mult.is_finite() && *t_mult >= 1.0) {
                    return Err(Error::InvalidHyper(format!("t_mult must be >= 1, got {t_mult}")));
                }
                if !(0.0 <= *eta_min && eta_min <= eta_max && eta_max.is_finite()) {
                    return Err(Error::InvalidHyper(format!(
                        "need 0 <= eta_min <= eta_max, got [{eta_min}, {eta_max}]"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Range the multiplier can take under this policy.
    pub fn eta_range(&self) -> (f64, f64) {
        match self {
            SchedulePolicy::Fixed => (1.0, 1.0),
            SchedulePolicy::StepDrop { drop_epochs, factor } => {
                (factor.powi(drop_epochs.len() as i32), 1.0)
            }
            SchedulePolicy::CosineRestarts { eta_min, eta_max, .. } => (*eta_min, *eta_max),
        }
    }
}

/// Position inside the current cosine period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleState {
    /// Epochs since the last restart (fractional).
    pub t_cur: f64,
    /// Length of the current period in epochs; infinite for non-restarting
    /// policies.
    pub t_i: f64,
    /// Number of restarts so far.
    pub restart: u32,
}

impl ScheduleState {
    pub fn new(policy: &SchedulePolicy) -> Self {
        let t_i = match policy {
            SchedulePolicy::CosineRestarts { t0, .. } => *t0,
            _ => f64::INFINITY,
        };
        Self {
            t_cur: 0.0,
            t_i,
            restart: 0,
        }
    }
}

/// Multiplier at `epoch_frac` (fixed and step-drop) or at the state's
/// position in its period (cosine). Does not modify `state`.
pub fn eta(policy: &SchedulePolicy, state: &ScheduleState, epoch_frac: f64) -> f64 {
    match policy {
        SchedulePolicy::Fixed => 1.0,
        SchedulePolicy::StepDrop { drop_epochs, factor } => {
            let passed = drop_epochs.iter().take_while(|&&e| e <= epoch_frac).count();
            factor.powi(passed as i32)
        }
        SchedulePolicy::CosineRestarts { eta_min, eta_max, .. } => {
            let frac = (state.t_cur / state.t_i).clamp(0.0, 1.0);
            eta_min + 0.5 * (eta_max - eta_min) * (1.0 + (PI * frac).cos())
        }
    }
}

/// Moves `state` forward by `delta_epochs`, returning the new state and
/// whether a restart happened. At most one restart is taken per call; callers
/// advance in steps no longer than the shortest period.
pub fn advance(state: ScheduleState, policy: &SchedulePolicy, delta_epochs: f64) -> (ScheduleState, bool) {
    debug_assert!(delta_epochs > 0.0);
    let mut next = state;
    next.t_cur += delta_epochs;
    if let SchedulePolicy::CosineRestarts { t_mult, .. } = policy {
        if next.t_cur >= next.t_i * (1.0 - BOUNDARY_SLACK) {
            next.t_cur = (next.t_cur - next.t_i).max(0.0);
            if next.t_cur < next.t_i * BOUNDARY_SLACK {
                next.t_cur = 0.0;
            }
            next.t_i *= t_mult;
            next.restart += 1;
            return (next, true);
        }
    }
    (next, false)
}

/// Cumulative epochs at which the first `count` restarts occur, found by
/// stepping the schedule one epoch at a time.
pub fn restart_epochs(policy: &SchedulePolicy, count: usize, max_epochs: u64) -> Vec<u64> {
    let mut state = ScheduleState::new(policy);
    let mut out = Vec::with_capacity(count);
    for epoch in 1..=max_epochs {
        if out.len() == count {
            break;
        }
        let (next, restarted) = advance(state, policy, 1.0);
        state = next;
        if restarted {
            out.push(epoch);
        }
    }
    out
}

/// Inputs to the budget-normalized weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedDecay {
    pub lambda_norm: f64,
    /// Batch size.
    pub batch: usize,
    /// Number of training points.
    pub total: usize,
    /// Epochs in the current restart period (or the whole run).
    pub epochs: f64,
}

impl NormalizedDecay {
    pub fn new(lambda_norm: f64, batch: usize, total: usize, epochs: f64) -> Result<Self> {
        if !(lambda_norm.is_finite() && lambda_norm >= 0.0) {
            return Err(Error::InvalidHyper(format!("lambda_norm must be >= 0, got {lambda_norm}")));
        }
        if batch == 0 || batch > total {
            return Err(Error::InvalidHyper(format!(
                "batch size must lie in 1..={total}, got {batch}"
            )));
        }
        if !(epochs.is_finite() && epochs > 0.0) {
            return Err(Error::InvalidHyper(format!("epochs must be > 0, got {epochs}")));
        }
        Ok(Self {
            lambda_norm,
            batch,
            total,
            epochs,
        })
    }
}

/// `lambda_norm * sqrt(b / (B * T))`.
pub fn effective_lambda(n: &NormalizedDecay) -> f64 {
    n.lambda_norm * (n.batch as f64 / (n.total as f64 * n.epochs)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(t_cur: f64, t_i: f64) -> ScheduleState {
        ScheduleState { t_cur, t_i, restart: 0 }
    }

    #[test]
    fn cosine_endpoints() {
        let p = SchedulePolicy::cosine(10.0, 1.0);
        assert_eq!(eta(&p, &at(0.0, 10.0), 0.0), 1.0);
        assert_eq!(eta(&p, &at(10.0, 10.0), 0.0), 0.0);
        assert!((eta(&p, &at(5.0, 10.0), 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn step_drop_counts_passed_drops() {
        let p = SchedulePolicy::default_step_drop();
        let s = ScheduleState::new(&p);
        assert_eq!(eta(&p, &s, 0.0), 1.0);
        assert_eq!(eta(&p, &s, 29.99), 1.0);
        assert_eq!(eta(&p, &s, 45.0), 0.1);
        assert!((eta(&p, &s, 60.0) - 0.01).abs() < 1e-16);
        assert!((eta(&p, &s, 95.0) - 0.001).abs() < 1e-16);
    }

    #[test]
    fn fixed_is_one() {
        let p = SchedulePolicy::Fixed;
        assert_eq!(eta(&p, &ScheduleState::new(&p), 123.4), 1.0);
    }

    #[test]
    fn restart_on_exact_period() {
        let p = SchedulePolicy::cosine(5.0, 2.0);
        let (s, restarted) = advance(ScheduleState::new(&p), &p, 5.0);
        assert!(restarted);
        assert_eq!(s.t_cur, 0.0);
        assert_eq!(s.t_i, 10.0);
        assert_eq!(s.restart, 1);
    }

    #[test]
    fn fractional_increments_hit_the_boundary() {
        let p = SchedulePolicy::cosine(3.0, 1.0);
        let mut s = ScheduleState::new(&p);
        let mut restarts = vec![];
        for step in 1..=7 * 9 {
            let (n, r) = advance(s, &p, 1.0 / 7.0);
            s = n;
            if r {
                restarts.push(step);
            }
        }
        assert_eq!(restarts, vec![21, 42, 63]);
    }

    #[test]
    fn fixed_period_restarts() {
        let p = SchedulePolicy::cosine(10.0, 1.0);
        assert_eq!(restart_epochs(&p, 4, 100), vec![10, 20, 30, 40]);
    }

    #[test]
    fn validation() {
        assert!(SchedulePolicy::cosine(0.0, 1.0).validate().is_err());
        assert!(SchedulePolicy::cosine(1.0, 0.5).validate().is_err());
        let bad = SchedulePolicy::StepDrop {
            drop_epochs: vec![30.0, 30.0],
            factor: 0.1,
        };
        assert!(bad.validate().is_err());
        assert!(NormalizedDecay::new(0.1, 10, 5, 1.0).is_err());
    }

    #[test]
    fn effective_lambda_examples() {
        let zero = NormalizedDecay::new(0.0, 7, 100, 3.0).unwrap();
        assert_eq!(effective_lambda(&zero), 0.0);
        let one_pass = NormalizedDecay::new(0.3, 64, 64, 1.0).unwrap();
        assert_eq!(effective_lambda(&one_pass), 0.3);
    }
}
