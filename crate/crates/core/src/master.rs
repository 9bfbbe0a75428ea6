//! Master side of the protocol.
//!
//! The master keeps `u = Σ B̃_i z_i`, `g = Σ ∇f_i(z_i)` and the dense inverse
//! `(Σ B̃_i)⁻¹`, and answers every message with `x = (Σ B̃_i)⁻¹ (u − η g)`.
//!
//! When a worker reports a pure rank-two change the inverse is updated with
//! two Sherman–Morrison corrections. When the worker's estimate changed in a
//! wider way (its scale moved or a tuple was evicted), the master re-forms
//! the aggregate from per-worker mirrors and re-inverts it. The mirrors are
//! replayed from the iterates the master itself sent and the `y` carried by
//! each message, so no extra communication is needed.

use nalgebra::Cholesky;

use crate::worker::{EstimateChange, HessianApprox, WorkerMessage, WorkerState};
use crate::{DenseMatrix, Error, Result, Vector, DEFAULT_DENSE_CAP};

/// Relative tolerance on the two Sherman–Morrison denominators.
pub const DENOM_TOL: f64 = 1e-12;

/// How the inverse was refreshed for one message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseUpdate {
    Unchanged,
    ShermanMorrison,
    Refactored,
}

/// What the master did with one message.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub worker_id: usize,
    pub x_new: Vector,
    /// `‖g‖ / n`, the norm of the averaged (possibly stale) gradients.
    pub grad_norm: f64,
    /// `α + vᵀy`, NaN when no correction was attempted.
    pub denom1: f64,
    /// `β̃ − q̃ᵀw`, NaN when no correction was attempted.
    pub denom2: f64,
    pub change: EstimateChange,
    pub inverse: InverseUpdate,
    /// Set when a denominator fell below tolerance and the inverse was
    /// refactored instead.
    pub singular: bool,
}

#[derive(Debug, Clone)]
pub struct MasterState<E> {
    x: Vector,
    b_inv: DenseMatrix,
    /// `Σ B̃_i`, kept for refactorization.
    b_sum: DenseMatrix,
    u: Vector,
    g: Vector,
    eta: f64,
    t: usize,
    mirrors: Vec<E>,
    /// Iterate each worker is currently working on.
    sent: Vec<Vector>,
    /// Iterate each worker last finished (its `z`).
    held: Vec<Vector>,
    singular_events: usize,
    refactorizations: usize,
}

/// Builds the master from freshly initialized workers. All workers must hold
/// the same starting point, which becomes `x⁰` and is considered already
/// sent to every worker.
pub fn master_init<E: HessianApprox>(eta: f64, workers: &[WorkerState<E>]) -> Result<MasterState<E>> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Config(format!("stepsize must be positive, got {eta}")));
    }
    let first = workers.first().ok_or_else(|| Error::Config("need at least one worker".into()))?;
    let x0 = first.z().clone();
    let d = x0.len();
    let mut u = Vector::zeros(d);
    let mut g = Vector::zeros(d);
    for (i, w) in workers.iter().enumerate() {
        if w.id() != i {
            return Err(Error::Config(format!("worker at position {i} has id {}", w.id())));
        }
        if w.z() != &x0 {
            return Err(Error::Config("workers must share the starting point".into()));
        }
        u += w.u_prev();
        g += w.local_gradient();
    }
    let mirrors: Vec<E> = workers.iter().map(|w| w.estimate().clone()).collect();
    let b_sum = dense_sum(&mirrors, d);
    let b_inv = invert(&b_sum)?;
    Ok(MasterState {
        x: x0.clone(),
        b_inv,
        b_sum,
        u,
        g,
        eta,
        t: 0,
        mirrors,
        sent: vec![x0.clone(); workers.len()],
        held: vec![x0; workers.len()],
        singular_events: 0,
        refactorizations: 0,
    })
}

/// Refactorizations between full re-forms of `Σ B̃_i` from the mirrors.
const REFORM_EVERY: usize = 64;

fn dense_sum<E: HessianApprox>(mirrors: &[E], d: usize) -> DenseMatrix {
    let mut sum = DenseMatrix::zeros(d, d);
    for m in mirrors {
        sum += m.to_dense();
    }
    sum
}

fn invert(sum: &DenseMatrix) -> Result<DenseMatrix> {
    let chol = Cholesky::new(sum.clone()).ok_or(Error::Singular)?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    if inv.iter().all(|v| v.is_finite()) {
        Ok(inv)
    } else {
        Err(Error::Singular)
    }
}

fn symmetrize(m: &mut DenseMatrix) {
    let d = m.nrows();
    for j in 0..d {
        for i in 0..j {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

fn too_small(denom: f64, scale: f64) -> bool {
    !denom.is_finite() || denom.abs() <= DENOM_TOL * scale.max(f64::MIN_POSITIVE)
}

impl<E: HessianApprox> MasterState<E> {
    pub fn x(&self) -> &Vector {
        &self.x
    }

    pub fn b_inv(&self) -> &DenseMatrix {
        &self.b_inv
    }

    pub fn u(&self) -> &Vector {
        &self.u
    }

    pub fn g(&self) -> &Vector {
        &self.g
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn n_workers(&self) -> usize {
        self.mirrors.len()
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// The iterate most recently sent to worker `i`.
    pub fn sent_to(&self, i: usize) -> &Vector {
        &self.sent[i]
    }

    /// The master's replica of worker `i`'s estimate.
    pub fn mirror(&self, i: usize) -> &E {
        &self.mirrors[i]
    }

    pub fn singular_events(&self) -> usize {
        self.singular_events
    }

    pub fn refactorizations(&self) -> usize {
        self.refactorizations
    }

    /// Processes one message and produces the next iterate, which the caller
    /// must deliver to `msg.worker_id`.
    pub fn step(&mut self, msg: &WorkerMessage) -> Result<StepRecord> {
        let i = msg.worker_id;
        let n = self.mirrors.len();
        if i >= n {
            return Err(Error::Config(format!("message from unknown worker {i}")));
        }
        let d = self.x.len();
        for v in [&msg.delta_u, &msg.y, &msg.q_tilde] {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: v.len() });
            }
        }

        let s = &self.sent[i] - &self.held[i];
        let before = (msg.change == EstimateChange::Rebuilt).then(|| self.mirrors[i].to_dense());
        self.mirrors[i].absorb(&s, &msg.y);
        self.held[i] = self.sent[i].clone();

        self.u += &msg.delta_u;
        self.g += &msg.y;

        let mut denom1 = f64::NAN;
        let mut denom2 = f64::NAN;
        let mut singular = false;
        let inverse = match msg.change {
            EstimateChange::Skipped => InverseUpdate::Unchanged,
            EstimateChange::RankTwo => {
                self.b_sum.ger(1.0 / msg.alpha, &msg.y, &msg.y, 1.0);
                self.b_sum.ger(-1.0 / msg.beta_tilde, &msg.q_tilde, &msg.q_tilde, 1.0);
                let (d1, d2, ok) = self.sherman_morrison(msg);
                denom1 = d1;
                denom2 = d2;
                if ok {
                    InverseUpdate::ShermanMorrison
                } else {
                    singular = true;
                    self.singular_events += 1;
                    self.refactor()?;
                    InverseUpdate::Refactored
                }
            }
            EstimateChange::Rebuilt => {
                self.b_sum += self.mirrors[i].to_dense();
                if let Some(before) = before {
                    self.b_sum -= before;
                }
                self.refactor()?;
                InverseUpdate::Refactored
            }
        };

        let rhs = &self.u - &self.g * self.eta;
        let x = &self.b_inv * rhs;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("master iterate"));
        }
        self.x = x;
        self.sent[i] = self.x.clone();
        self.t += 1;

        Ok(StepRecord {
            t: self.t,
            worker_id: i,
            x_new: self.x.clone(),
            grad_norm: self.g.norm() / n as f64,
            denom1,
            denom2,
            change: msg.change,
            inverse,
            singular,
        })
    }

    /// Applies `(B + yyᵀ/α − q̃q̃ᵀ/β̃)⁻¹` from `B⁻¹` in place. Leaves the
    /// inverse untouched and returns `false` when a denominator is too small.
    fn sherman_morrison(&mut self, msg: &WorkerMessage) -> (f64, f64, bool) {
        let (y, q, alpha, beta) = (&msg.y, &msg.q_tilde, msg.alpha, msg.beta_tilde);
        let v = &self.b_inv * y;
        let vy = v.dot(y);
        let denom1 = alpha + vy;
        if too_small(denom1, alpha.abs() + vy.abs()) {
            return (denom1, f64::NAN, false);
        }
        // w = U q̃ with U = B⁻¹ − vvᵀ/denom1, formed without touching B⁻¹.
        let mut w = &self.b_inv * q;
        w.axpy(-v.dot(q) / denom1, &v, 1.0);
        let qw = q.dot(&w);
        let denom2 = beta - qw;
        if too_small(denom2, beta.abs() + qw.abs()) {
            return (denom1, denom2, false);
        }
        self.b_inv.ger(-1.0 / denom1, &v, &v, 1.0);
        self.b_inv.ger(1.0 / denom2, &w, &w, 1.0);
        symmetrize(&mut self.b_inv);
        (denom1, denom2, true)
    }

    fn refactor(&mut self) -> Result<()> {
        self.refactorizations += 1;
        if self.refactorizations.is_multiple_of(REFORM_EVERY) {
            self.b_sum = dense_sum(&self.mirrors, self.x.len());
        }
        self.b_inv = invert(&self.b_sum)?;
        Ok(())
    }

    /// `‖x − (Σ B̃_i)⁻¹ (Σ B̃_i z_i − η Σ ∇f_i(z_i))‖` recomputed from the
    /// workers' own states. Zero before the first step.
    pub fn iterate_residual(&self, workers: &[WorkerState<E>]) -> Result<f64> {
        if self.t == 0 {
            return Ok(0.0);
        }
        let d = self.x.len();
        if d > DEFAULT_DENSE_CAP {
            return Err(Error::DimensionTooLarge { dim: d, cap: DEFAULT_DENSE_CAP });
        }
        let mut b = DenseMatrix::zeros(d, d);
        let mut rhs = Vector::zeros(d);
        for w in workers {
            let bi = w.estimate().to_dense();
            rhs += &bi * w.z();
            rhs.axpy(-self.eta, w.local_gradient(), 1.0);
            b += bi;
        }
        let x = Cholesky::new(b).ok_or(Error::NotPositiveDefinite)?.solve(&rhs);
        Ok((&self.x - x).norm())
    }

    /// Largest of `‖u − Σ B̃_i z_i‖` and `‖g − Σ ∇f_i(z_i)‖`, recomputed from
    /// the workers' states.
    pub fn ledger_residual(&self, workers: &[WorkerState<E>]) -> f64 {
        let d = self.x.len();
        let mut u = Vector::zeros(d);
        let mut g = Vector::zeros(d);
        for w in workers {
            u += w.estimate().apply(w.z());
            g += w.local_gradient();
        }
        (&self.u - u).norm().max((&self.g - g).norm())
    }
}
