//! SGD and Adam with L2 regularization or decoupled weight decay, cosine
//! warm-restart schedules, normalized weight decay, and the experiment
//! harness built on top of them.

pub mod equivalence;
pub mod error;
pub mod harness;
pub mod optim;
pub mod problems;
pub mod rng;
pub mod schedule;
pub mod vector;

pub use error::{Error, Result};
pub use optim::{
    adam_step, gradient_with_l2, preconditioned_step, sgd_step, AdamHyper, DecayMode,
    FixedPreconditioner, OptimizerState, SgdHyper,
};
pub use problems::{fd_gradient, BatchPlan, Dataset, Problem, SparseLogisticTask};
pub use rng::Rng;
pub use schedule::{advance, effective_lambda, eta, NormalizedDecay, SchedulePolicy, ScheduleState};
pub use vector::{axpy, elementwise, ElementwiseOp, ParamVector};
