//! Reference solvers that share the simulator and trace format: dense-memory
//! DAve-QN workers, an exact-Hessian worker used to exercise the convergence
//! theory, and synchronous gradient descent.

use crate::memory::{compute_gamma, CURVATURE_TOL};
use crate::objectives::{global_gradient, Shard};
use crate::simulator::{
    check_stop, CommHistory, DelayModel, EpochTracker, Metrics, RunOutput, StopRule, SyncRoundClock, Trace, TraceRow,
};
use crate::worker::{Absorbed, HessianApprox, SkipReason, WorkerState};
use crate::{DenseMatrix, Error, Result, Vector, DEFAULT_DENSE_CAP};

/// Full d×d BFGS estimate, `B ← B + yyᵀ/α − qqᵀ/β` with `q = Bs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBfgs {
    b: DenseMatrix,
}

impl DenseBfgs {
    /// `γ₀ I`, refused above the dense cap.
    pub fn new(dim: usize, gamma0: f64) -> Result<Self> {
        Self::with_cap(dim, gamma0, DEFAULT_DENSE_CAP)
    }

    pub fn with_cap(dim: usize, gamma0: f64, cap: usize) -> Result<Self> {
        if dim > cap {
            return Err(Error::DimensionTooLarge { dim, cap });
        }
        if !(gamma0 > 0.0 && gamma0.is_finite()) {
            return Err(Error::InvalidGamma(gamma0));
        }
        Ok(Self { b: DenseMatrix::from_diagonal_element(dim, dim, gamma0) })
    }

    pub fn from_matrix(b: DenseMatrix) -> Self {
        Self { b }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.b
    }
}

impl HessianApprox for DenseBfgs {
    fn dim(&self) -> usize {
        self.b.nrows()
    }

    fn apply(&self, x: &Vector) -> Vector {
        &self.b * x
    }

    fn to_dense(&self) -> DenseMatrix {
        self.b.clone()
    }

    fn absorb(&mut self, s: &Vector, y: &Vector) -> Absorbed {
        match compute_gamma(y, s) {
            Ok(_) => {}
            Err(Error::DegenerateStep) => return Absorbed::Skipped(SkipReason::Degenerate),
            Err(_) => return Absorbed::Skipped(SkipReason::Curvature),
        }
        let alpha = y.dot(s);
        debug_assert!(alpha > CURVATURE_TOL * y.norm() * s.norm());
        let q = &self.b * s;
        let beta = s.dot(&q);
        if !(beta > 0.0 && beta.is_finite()) {
            return Absorbed::Skipped(SkipReason::NonPositive);
        }
        self.b.ger(1.0 / alpha, y, y, 1.0);
        self.b.ger(-1.0 / beta, &q, &q, 1.0);
        let b = &mut self.b;
        for j in 0..b.ncols() {
            for i in 0..j {
                let avg = 0.5 * (b[(i, j)] + b[(j, i)]);
                b[(i, j)] = avg;
                b[(j, i)] = avg;
            }
        }
        Absorbed::Updated { q_tilde: q, alpha, beta_tilde: beta, rank_two: true }
    }

    fn state_floats(&self) -> usize {
        self.b.len()
    }
}

/// A worker state holding a dense BFGS matrix.
pub type DenseWorkerState = WorkerState<DenseBfgs>;

/// Dense DAve-QN worker started at `x0` with `B = γ₀ I`.
pub fn daveqn_worker(id: usize, shard: Shard, x0: Vector, gamma0: f64) -> Result<DenseWorkerState> {
    let est = DenseBfgs::new(shard.dim(), gamma0)?;
    WorkerState::new(id, shard, x0, est)
}

/// An estimate pinned to a fixed matrix; it never absorbs curvature pairs.
/// With the true Hessian of a quadratic shard this gives exact approximation
/// quality, which is the setting where the convergence rate can be checked
/// end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenHessian {
    h: DenseMatrix,
}

impl FrozenHessian {
    pub fn new(h: DenseMatrix) -> Self {
        Self { h }
    }

    /// The exact Hessian of a quadratic shard.
    pub fn exact(shard: &Shard) -> Result<Self> {
        match shard {
            Shard::Quadratic(q) => Ok(Self { h: q.matrix().clone() }),
            Shard::Logistic(_) => Err(Error::Config("exact-Hessian mode needs quadratic shards".into())),
        }
    }
}

impl HessianApprox for FrozenHessian {
    fn dim(&self) -> usize {
        self.h.nrows()
    }

    fn apply(&self, x: &Vector) -> Vector {
        &self.h * x
    }

    fn to_dense(&self) -> DenseMatrix {
        self.h.clone()
    }

    fn absorb(&mut self, _s: &Vector, _y: &Vector) -> Absorbed {
        Absorbed::Skipped(SkipReason::Frozen)
    }

    fn state_floats(&self) -> usize {
        self.h.len()
    }
}

/// `x − η (1/n) Σ ∇f_i(x)`.
pub fn sync_gd_step(x: &Vector, shards: &[Shard], eta: f64) -> Vector {
    x - global_gradient(shards, x) * eta
}

/// Synchronous gradient descent on the same clock as the asynchronous runs.
///
/// A round occupies `n` consecutive update indices, one per worker in id
/// order, and lasts as long as its slowest worker under `delay_model`. The
/// iterate changes on the last slot of each round. Epochs follow the same
/// definition as for the asynchronous solvers.
pub fn run_sync_gd(
    shards: &[Shard],
    x0: Vector,
    eta: f64,
    delay_model: &DelayModel,
    seed: u64,
    stop: &StopRule,
    metrics: Metrics<'_>,
) -> Result<RunOutput> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Config(format!("stepsize must be positive, got {eta}")));
    }
    let mut clock = SyncRoundClock::new(delay_model, shards.len(), seed)?;
    if stop.subopt_tol.is_some() && metrics.reference.is_none() {
        return Err(Error::Config("a suboptimality target needs a reference optimum".into()));
    }
    let n = shards.len();
    let mut history = CommHistory::new(n);
    let mut tracker = EpochTracker::new(n);
    let mut trace = Trace::default();

    let mut x = x0;
    let mut row = metrics.row(0, 0, 0.0, None, &x);
    let mut reason = check_stop(stop, &row, 0, 0);
    trace.rows.push(row.clone());

    let mut t = 0;
    let mut now = 0.0;
    while reason.is_none() {
        now += clock.next_round();
        let next = sync_gd_step(&x, shards, eta);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("gradient descent iterate"));
        }
        for i in 0..n {
            t += 1;
            history.record(t, i);
            tracker.record(t, i);
            if i + 1 == n {
                x = next.clone();
                row = metrics.row(t, tracker.current_epoch(), now, Some(i), &x);
            } else {
                row = TraceRow {
                    t,
                    epoch: tracker.current_epoch(),
                    virtual_time: now,
                    worker_id: Some(i),
                    ..row
                };
            }
            reason = check_stop(stop, &row, t, tracker.current_epoch());
            trace.rows.push(row.clone());
            if reason.is_some() {
                break;
            }
        }
    }

    Ok(RunOutput {
        trace,
        history,
        epochs: tracker.index(),
        stop_reason: reason.unwrap(),
        skipped_messages: 0,
    })
}
