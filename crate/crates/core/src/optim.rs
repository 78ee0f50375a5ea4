//! SGD with momentum and Adam, each with either an L2 penalty folded into the
//! gradient or weight decay applied directly to the parameters.
//!
//! Both step functions take the raw batch gradient, the schedule multiplier
//! `eta` for this step, and mutate the optimizer state in place. The returned
//! vector is the new parameter vector; the caller keeps ownership of the old
//! one, which makes side-by-side trajectory comparisons straightforward.

use crate::error::{Error, Result};
use crate::vector::ParamVector;

/// Largest step count for which `beta^t` bias correction is still computed
/// from an exactly representable `t`.
pub const MAX_STEPS: u64 = 1 << 53;

/// How regularization enters the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecayMode {
    None,
    /// Adds `coef * theta` to the loss gradient before any momentum or
    /// preconditioning is applied.
    L2(f64),
    /// Shrinks the parameters by `eta * coef * theta` alongside the
    /// gradient-based update.
    Decoupled(f64),
}

impl DecayMode {
    pub fn coefficient(self) -> f64 {
        match self {
            DecayMode::None => 0.0,
            DecayMode::L2(c) | DecayMode::Decoupled(c) => c,
        }
    }

    fn l2(self) -> f64 {
        match self {
            DecayMode::L2(c) => c,
            _ => 0.0,
        }
    }

    fn decoupled(self) -> f64 {
        match self {
            DecayMode::Decoupled(c) => c,
            _ => 0.0,
        }
    }

    pub fn validate(self) -> Result<()> {
        let c = self.coefficient();
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::InvalidHyper(format!(
                "decay coefficient must be finite and >= 0, got {c}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdHyper {
    pub lr: f64,
    pub momentum: f64,
    pub decay: DecayMode,
}

impl SgdHyper {
    pub fn new(lr: f64, momentum: f64, decay: DecayMode) -> Result<Self> {
        let h = Self { lr, momentum, decay };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        check_lr(self.lr)?;
        check_beta("momentum", self.momentum)?;
        self.decay.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay: DecayMode,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: DecayMode::None,
        }
    }
}

impl AdamHyper {
    pub fn with_decay(decay: DecayMode) -> Self {
        Self {
            decay,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_lr(self.lr)?;
        check_beta("beta1", self.beta1)?;
        check_beta("beta2", self.beta2)?;
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::InvalidHyper(format!("eps must be > 0, got {}", self.eps)));
        }
        self.decay.validate()
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::InvalidHyper(format!("learning rate must be > 0, got {lr}")));
    }
    Ok(())
}

fn check_beta(name: &str, beta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidHyper(format!("{name} must lie in [0, 1), got {beta}")));
    }
    Ok(())
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidHyper(format!(
            "schedule multiplier must lie in [0, 1], got {eta}"
        )));
    }
    Ok(())
}

/// Mutable per-run optimizer state. `second` is only populated for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    t: u64,
    first: ParamVector,
    second: Option<ParamVector>,
    decay_mask: Option<Vec<bool>>,
}

impl OptimizerState {
    pub fn sgd(len: usize) -> Self {
        Self {
            t: 0,
            first: ParamVector::zeros(len),
            second: None,
            decay_mask: None,
        }
    }

    pub fn adam(len: usize) -> Self {
        Self {
            t: 0,
            first: ParamVector::zeros(len),
            second: Some(ParamVector::zeros(len)),
            decay_mask: None,
        }
    }

    /// Restricts regularization (either mode) to coordinates where the mask
    /// is true. Without a mask every coordinate is regularized.
    pub fn with_decay_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.first.len() {
            return Err(Error::Dimension {
                expected: self.first.len(),
                actual: mask.len(),
            });
        }
        self.decay_mask = Some(mask);
        Ok(self)
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// First moment (Adam) or momentum buffer (SGD).
    pub fn first_moment(&self) -> &ParamVector {
        &self.first
    }

    pub fn second_moment(&self) -> Option<&ParamVector> {
        self.second.as_ref()
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Bias-corrected moments `(m / (1 - beta1^t), v / (1 - beta2^t))` at the
    /// current step, computed exactly as `adam_step` computes them.
    pub fn bias_corrected(&self, beta1: f64, beta2: f64) -> Option<(ParamVector, ParamVector)> {
        let v = self.second.as_ref()?;
        if self.t == 0 {
            return None;
        }
        let c1 = bias_correction(beta1, self.t);
        let c2 = bias_correction(beta2, self.t);
        let m_hat = self.first.map("bias_correct", |m| m / c1).ok()?;
        let v_hat = v.map("bias_correct", |v| v / c2).ok()?;
        Some((m_hat, v_hat))
    }

    fn regularized(&self, i: usize) -> bool {
        self.decay_mask.as_ref().is_none_or(|mask| mask[i])
    }

    fn advance_counter(&self) -> Result<u64> {
        if self.t >= MAX_STEPS {
            return Err(Error::StepOverflow);
        }
        Ok(self.t + 1)
    }
}

fn bias_correction(beta: f64, t: u64) -> f64 {
    1.0 - beta.powf(t as f64)
}

/// `grad + coef * theta`.
pub fn gradient_with_l2(grad: &ParamVector, theta: &ParamVector, coef: f64) -> Result<ParamVector> {
    grad.zip_map(theta, "gradient_with_l2", |g, th| g + coef * th)
}

fn check_lengths(theta: &ParamVector, grad: &ParamVector, state: &OptimizerState) -> Result<()> {
    theta.ensure_same_len(grad)?;
    if state.len() != theta.len() {
        return Err(Error::Dimension {
            expected: theta.len(),
            actual: state.len(),
        });
    }
    Ok(())
}

/// One iteration of SGD with momentum.
///
/// ```text
/// g     = grad (+ l2 * theta)
/// m     = momentum * m + eta * lr * g
/// theta = theta - m (- eta * decay * theta)
/// ```
pub fn sgd_step(
    theta: &ParamVector,
    grad: &ParamVector,
    state: &mut OptimizerState,
    h: &SgdHyper,
    eta: f64,
) -> Result<ParamVector> {
    check_lengths(theta, grad, state)?;
    check_eta(eta)?;
    let t = state.advance_counter()?;
    let l2 = h.decay.l2();
    let shrink = 1.0 - eta * h.decay.decoupled();
    let step = eta * h.lr;

    let mut m = state.first.as_slice().to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let th = theta[i];
        let reg = state.regularized(i);
        let g = if reg && l2 != 0.0 { grad[i] + l2 * th } else { grad[i] };
        m[i] = h.momentum * m[i] + step * g;
        let kept = if reg { th * shrink } else { th };
        out.push(kept - m[i]);
    }
    let first = ParamVector::from_checked("sgd_step", m)?;
    let next = ParamVector::from_checked("sgd_step", out)?;
    state.first = first;
    state.t = t;
    Ok(next)
}

/// One iteration of Adam.
///
/// ```text
/// g     = grad (+ l2 * theta)
/// m     = beta1 * m + (1 - beta1) * g
/// v     = beta2 * v + (1 - beta2) * g^2
/// m_hat = m / (1 - beta1^t),  v_hat = v / (1 - beta2^t)
/// theta = theta - eta * (lr * m_hat / (sqrt(v_hat) + eps) (+ decay * theta))
/// ```
///
/// The decoupled term is evaluated as `theta * (1 - eta * decay)`, so a
/// coordinate with zero gradient history decays by exactly that factor.
pub fn adam_step(
    theta: &ParamVector,
    grad: &ParamVector,
    state: &mut OptimizerState,
    h: &AdamHyper,
    eta: f64,
) -> Result<ParamVector> {
    check_lengths(theta, grad, state)?;
    check_eta(eta)?;
    let Some(v_prev) = state.second.as_ref() else {
        return Err(Error::InvalidHyper("adam_step needs an Adam optimizer state".into()));
    };
    let t = state.advance_counter()?;
    let l2 = h.decay.l2();
    let shrink = 1.0 - eta * h.decay.decoupled();
    let c1 = bias_correction(h.beta1, t);
    let c2 = bias_correction(h.beta2, t);

    let mut m = state.first.as_slice().to_vec();
    let mut v = v_prev.as_slice().to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let th = theta[i];
        let reg = state.regularized(i);
        let g = if reg && l2 != 0.0 { grad[i] + l2 * th } else { grad[i] };
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * (g * g);
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        let update = eta * (h.lr * m_hat / (v_hat.sqrt() + h.eps));
        let kept = if reg { th * shrink } else { th };
        out.push(kept - update);
    }
    let first = ParamVector::from_checked("adam_step", m)?;
    let second = ParamVector::from_checked("adam_step", v)?;
    let next = ParamVector::from_checked("adam_step", out)?;
    state.first = first;
    state.second = Some(second);
    state.t = t;
    Ok(next)
}

/// Diagonal preconditioner `M = diag(s)^-1`, every `s_i > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPreconditioner {
    s: ParamVector,
}

impl FixedPreconditioner {
    pub fn new(s: ParamVector) -> Result<Self> {
        if let Some(index) = s.iter().position(|&x| x <= 0.0) {
            return Err(Error::Domain {
                op: "preconditioner",
                index,
                value: s[index],
            });
        }
        Ok(Self { s })
    }

    pub fn scales(&self) -> &ParamVector {
        &self.s
    }
}

/// Gradient step under a fixed diagonal preconditioner.
///
/// * `Decoupled(l)`: `theta' = (1 - l) * theta - lr * grad / s`
/// * `L2(c)`: `theta' = theta - lr * (grad + c * theta * s) / s`, i.e. plain
///   preconditioned descent on the loss plus `c/2 * ||theta * sqrt(s)||^2`.
pub fn preconditioned_step(
    theta: &ParamVector,
    grad: &ParamVector,
    p: &FixedPreconditioner,
    lr: f64,
    mode: DecayMode,
) -> Result<ParamVector> {
    theta.ensure_same_len(grad)?;
    theta.ensure_same_len(&p.s)?;
    check_lr(lr)?;
    mode.validate()?;
    let s = p.s.as_slice();
    let out: Vec<f64> = (0..theta.len())
        .map(|i| {
            let th = theta[i];
            match mode {
                DecayMode::None => th - lr * grad[i] / s[i],
                DecayMode::L2(c) => th - lr * (grad[i] + c * (th * s[i])) / s[i],
                DecayMode::Decoupled(l) => (1.0 - l) * th - lr * grad[i] / s[i],
            }
        })
        .collect();
    ParamVector::from_checked("preconditioned_step", out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn sgd_pure_decay_with_zero_gradient() {
        let h = SgdHyper::new(0.37, 0.0, DecayMode::Decoupled(0.1)).unwrap();
        let mut st = OptimizerState::sgd(1);
        let th = sgd_step(&pv(&[1.0]), &pv(&[0.0]), &mut st, &h, 1.0).unwrap();
        assert_eq!(th[0], 0.9);
    }

    #[test]
    fn sgd_momentum_with_decoupled_decay() {
        let h = SgdHyper::new(0.1, 0.9, DecayMode::Decoupled(0.01)).unwrap();
        let mut st = OptimizerState::sgd(1);
        let th = sgd_step(&pv(&[1.0]), &pv(&[0.5]), &mut st, &h, 1.0).unwrap();
        assert!((st.first_moment()[0] - 0.05).abs() < 1e-15);
        assert!((th[0] - 0.94).abs() < 1e-15);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn sgd_l2_matches_decoupled_example() {
        let h = SgdHyper::new(0.1, 0.0, DecayMode::L2(0.1)).unwrap();
        let mut st = OptimizerState::sgd(1);
        let th = sgd_step(&pv(&[1.0]), &pv(&[0.5]), &mut st, &h, 1.0).unwrap();
        assert!((th[0] - 0.94).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_defaults() {
        let h = AdamHyper::default();
        let mut st = OptimizerState::adam(1);
        let th = adam_step(&pv(&[1.0]), &pv(&[1.0]), &mut st, &h, 1.0).unwrap();
        assert!((st.first_moment()[0] - 0.1).abs() < 1e-15);
        assert!((st.second_moment().unwrap()[0] - 0.001).abs() < 1e-15);
        let (m_hat, v_hat) = st.bias_corrected(h.beta1, h.beta2).unwrap();
        assert!((m_hat[0] - 1.0).abs() < 1e-12);
        assert!((v_hat[0] - 1.0).abs() < 1e-12);
        // 1 - 0.001 / (1 + 1e-8)
        assert!((th[0] - 0.999_000_000_01).abs() < 1e-13, "{}", th[0]);
    }

    #[test]
    fn adamw_zero_gradient_is_geometric() {
        let h = AdamHyper::with_decay(DecayMode::Decoupled(0.1));
        let mut st = OptimizerState::adam(1);
        let mut th = pv(&[5.0]);
        for k in 1..=50 {
            th = adam_step(&th, &pv(&[0.0]), &mut st, &h, 1.0).unwrap();
            let expected = 5.0 * 0.9f64.powi(k);
            assert!((th[0] - expected).abs() <= 1e-13 * expected, "k={k}");
        }
    }

    #[test]
    fn adam_l2_shrinkage_is_normalized() {
        let h = AdamHyper::with_decay(DecayMode::L2(0.1));
        let mut st = OptimizerState::adam(1);
        let th = adam_step(&pv(&[5.0]), &pv(&[0.0]), &mut st, &h, 1.0).unwrap();
        // 5 - 0.001 * 0.5 / (0.5 + 1e-8)
        assert!((th[0] - 4.999_000_000_02).abs() < 1e-12, "{}", th[0]);
    }

    #[test]
    fn gradient_with_l2_examples() {
        let g = pv(&[1.0, 0.0]);
        assert_eq!(gradient_with_l2(&g, &pv(&[2.0, 2.0]), 0.0).unwrap(), g);
        assert_eq!(gradient_with_l2(&g, &pv(&[2.0, 2.0]), 0.5).unwrap(), pv(&[2.0, 1.0]));
        assert_eq!(
            gradient_with_l2(&pv(&[0.0, 0.0]), &pv(&[-3.5, 7.25]), 1.0).unwrap(),
            pv(&[-3.5, 7.25])
        );
    }

    #[test]
    fn preconditioned_examples() {
        let ones = FixedPreconditioner::new(pv(&[1.0, 1.0])).unwrap();
        let th = pv(&[0.3, -2.0]);
        let g = pv(&[1.5, 0.25]);
        let plain = preconditioned_step(&th, &g, &ones, 0.2, DecayMode::Decoupled(0.0)).unwrap();
        assert_eq!(plain, pv(&[0.3 - 0.2 * 1.5, -2.0 - 0.2 * 0.25]));

        let p = FixedPreconditioner::new(pv(&[1.0, 4.0])).unwrap();
        let zero = pv(&[0.0, 0.0]);
        let ones_th = pv(&[1.0, 1.0]);
        let dec = preconditioned_step(&ones_th, &zero, &p, 0.5, DecayMode::Decoupled(0.2)).unwrap();
        assert_eq!(dec, pv(&[0.8, 0.8]));
        let l2 = preconditioned_step(&ones_th, &zero, &p, 0.5, DecayMode::L2(0.4)).unwrap();
        assert!(l2.max_abs_diff(&dec).unwrap() < 1e-15);
    }

    #[test]
    fn preconditioner_rejects_non_positive_scale() {
        let err = FixedPreconditioner::new(pv(&[1.0, 0.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::Domain { index: 1, .. }));
    }

    #[test]
    fn step_counter_overflow() {
        let mut st = OptimizerState::adam(1);
        st.t = MAX_STEPS;
        let err = adam_step(&pv(&[1.0]), &pv(&[1.0]), &mut st, &AdamHyper::default(), 1.0).unwrap_err();
        assert!(matches!(err, Error::StepOverflow));
    }

    #[test]
    fn non_finite_result_is_reported() {
        let h = SgdHyper::new(1e300, 0.0, DecayMode::None).unwrap();
        let mut st = OptimizerState::sgd(1);
        let err = sgd_step(&pv(&[0.0]), &pv(&[1e300]), &mut st, &h, 1.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert_eq!(st.step_count(), 0, "failed step leaves state untouched");
    }

    #[test]
    fn hyper_validation() {
        assert!(SgdHyper::new(0.0, 0.0, DecayMode::None).is_err());
        assert!(SgdHyper::new(0.1, 1.0, DecayMode::None).is_err());
        assert!(SgdHyper::new(0.1, 0.0, DecayMode::L2(-1.0)).is_err());
        let bad = AdamHyper {
            eps: 0.0,
            ..AdamHyper::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn decay_mask_exempts_coordinates() {
        let h = AdamHyper::with_decay(DecayMode::Decoupled(0.5));
        let mut st = OptimizerState::adam(2).with_decay_mask(vec![true, false]).unwrap();
        let th = adam_step(&pv(&[2.0, 2.0]), &pv(&[0.0, 0.0]), &mut st, &h, 1.0).unwrap();
        assert_eq!(th, pv(&[1.0, 2.0]));
    }
}
