//! Asynchronous limited-memory distributed quasi-Newton optimization (L-DQN).
//!
//! Workers keep an O(md) limited-memory estimate of their local Hessian and
//! exchange O(d) messages with a master that maintains the inverse of the
//! aggregate estimate. A deterministic event-driven simulator drives the
//! protocol, and the `diagnostics` module checks runs against the linear
//! convergence theory.

pub mod baselines;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod master;
pub mod memory;
pub mod objectives;
pub mod simulator;
pub mod worker;

pub use error::{Error, Result};
pub use master::{MasterState, StepRecord};
pub use memory::{GammaScale, LimitedMemoryEstimate, MemoryTuple, TupleMemory};
pub use objectives::{Shard, SmoothnessConstants};
pub use worker::{HessianApprox, WorkerMessage, WorkerState};

/// Dense column vector used for iterates, gradients and messages.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix, only used on the master and in diagnostics.
pub type DenseMatrix = nalgebra::DMatrix<f64>;

/// Largest dimension for which dense d×d objects are built on worker-side
/// code paths (materialize, dense Hessians, DAve-QN workers).
pub const DEFAULT_DENSE_CAP: usize = 512;
