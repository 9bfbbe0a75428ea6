//! Worker side of the protocol.
//!
//! On receiving an iterate `x` a worker forms `s = x − z`,
//! `y = ∇f_i(x) − ∇f_i(z)`, folds the pair into its Hessian estimate, and
//! replies with `Δu = B_new x − B_old z` together with the curvature data the
//! master needs. Everything it sends is O(d).

use crate::objectives::Shard;
use crate::{DenseMatrix, Error, Result, Vector};

/// Why a curvature pair was not folded into an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// `s = 0` or `y = 0`.
    Degenerate,
    /// `yᵀs` at or below the relative curvature tolerance.
    Curvature,
    /// The candidate `β̃ = sᵀq̃` was not positive.
    NonPositive,
    /// The estimate is frozen (exact-Hessian test mode).
    Frozen,
}

/// Result of offering a `(s, y)` pair to an estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum Absorbed {
    Skipped(SkipReason),
    Updated {
        q_tilde: Vector,
        alpha: f64,
        beta_tilde: f64,
        /// True when the estimate changed by exactly
        /// `y yᵀ/α − q̃ q̃ᵀ/β̃` and nothing else.
        rank_two: bool,
    },
}

/// A worker-local Hessian estimate.
pub trait HessianApprox: Clone + Send + std::fmt::Debug {
    fn dim(&self) -> usize;
    /// `B x`.
    fn apply(&self, x: &Vector) -> Vector;
    /// Dense `B`. O(d²); master and diagnostics only.
    fn to_dense(&self) -> DenseMatrix;
    /// Folds a curvature pair in, or leaves the estimate untouched.
    fn absorb(&mut self, s: &Vector, y: &Vector) -> Absorbed;
    /// Number of f64 values the estimate keeps.
    fn state_floats(&self) -> usize;
}

/// How the sender's estimate changed during the step that produced a
/// message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateChange {
    Skipped,
    RankTwo,
    Rebuilt,
}

impl EstimateChange {
    fn tag(self) -> u8 {
        match self {
            EstimateChange::Skipped => 0,
            EstimateChange::RankTwo => 1,
            EstimateChange::Rebuilt => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(EstimateChange::Skipped),
            1 => Some(EstimateChange::RankTwo),
            2 => Some(EstimateChange::Rebuilt),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EstimateChange::Skipped => "skipped",
            EstimateChange::RankTwo => "rank_two",
            EstimateChange::Rebuilt => "rebuilt",
        }
    }
}

/// The O(d) reply `(Δu, y, q̃, α, β̃)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerMessage {
    pub worker_id: usize,
    pub delta_u: Vector,
    pub y: Vector,
    pub q_tilde: Vector,
    pub alpha: f64,
    pub beta_tilde: f64,
    pub change: EstimateChange,
}

impl WorkerMessage {
    pub fn skipped(&self) -> bool {
        self.change == EstimateChange::Skipped
    }

    /// Little-endian wire form: `u64` worker id, `u8` change tag, then
    /// `Δu`, `y`, `q̃` each as a `u64` length followed by that many `f64`,
    /// then `α` and `β̃`.
    pub fn encode(&self) -> Vec<u8> {
        let d = self.y.len();
        let mut out = Vec::with_capacity(9 + 3 * (8 + 8 * d) + 16);
        out.extend_from_slice(&(self.worker_id as u64).to_le_bytes());
        out.push(self.change.tag());
        for v in [&self.delta_u, &self.y, &self.q_tilde] {
            out.extend_from_slice(&(v.len() as u64).to_le_bytes());
            for x in v.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.alpha.to_le_bytes());
        out.extend_from_slice(&self.beta_tilde.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::Parse { line: 0, msg: "truncated worker message".into() });
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        let u64_at = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
        let f64_at = |b: &[u8]| f64::from_le_bytes(b.try_into().expect("8 bytes"));

        let worker_id = u64_at(take(8)?) as usize;
        let change = EstimateChange::from_tag(take(1)?[0])
            .ok_or_else(|| Error::Parse { line: 0, msg: "unknown change tag".into() })?;
        let mut vecs = Vec::with_capacity(3);
        for _ in 0..3 {
            let len = u64_at(take(8)?) as usize;
            let body = take(len.checked_mul(8).ok_or(Error::Parse { line: 0, msg: "length overflow".into() })?)?;
            vecs.push(Vector::from_iterator(len, body.chunks_exact(8).map(f64_at)));
        }
        let alpha = f64_at(take(8)?);
        let beta_tilde = f64_at(take(8)?);
        if !cur.is_empty() {
            return Err(Error::Parse { line: 0, msg: "trailing bytes in worker message".into() });
        }
        let q_tilde = vecs.pop().unwrap();
        let y = vecs.pop().unwrap();
        let delta_u = vecs.pop().unwrap();
        Ok(Self { worker_id, delta_u, y, q_tilde, alpha, beta_tilde, change })
    }
}

/// Worker `i`'s state: the last iterate it received (`z`), the cached
/// gradient there, its estimate, and `u_prev = B z`.
#[derive(Debug, Clone)]
pub struct WorkerState<E> {
    id: usize,
    z: Vector,
    grad_z: Vector,
    estimate: E,
    u_prev: Vector,
    shard: Shard,
    peak_floats: usize,
    peak_estimate_floats: usize,
}

impl<E: HessianApprox> WorkerState<E> {
    /// Starts from `x0` with the given initial estimate.
    pub fn new(id: usize, shard: Shard, x0: Vector, estimate: E) -> Result<Self> {
        let d = shard.dim();
        if x0.len() != d || estimate.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x0.len().max(estimate.dim()) });
        }
        let grad_z = shard.gradient(&x0);
        let u_prev = estimate.apply(&x0);
        let peak_estimate_floats = estimate.state_floats();
        let mut w = Self { id, z: x0, grad_z, estimate, u_prev, shard, peak_floats: 0, peak_estimate_floats };
        w.peak_floats = w.state_floats();
        Ok(w)
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn z(&self) -> &Vector {
        &self.z
    }

    /// Cached `∇f_i(z)`.
    pub fn local_gradient(&self) -> &Vector {
        &self.grad_z
    }

    pub fn estimate(&self) -> &E {
        &self.estimate
    }

    pub fn u_prev(&self) -> &Vector {
        &self.u_prev
    }

    pub fn shard(&self) -> &Shard {
        &self.shard
    }

    /// Floats held by the protocol state (estimate plus `z`, `∇f_i(z)`,
    /// `u_prev`); the data shard is not counted.
    pub fn state_floats(&self) -> usize {
        self.estimate.state_floats() + 3 * self.z.len()
    }

    pub fn peak_state_floats(&self) -> usize {
        self.peak_floats
    }

    /// Peak floats held by the estimate alone.
    pub fn peak_estimate_floats(&self) -> usize {
        self.peak_estimate_floats
    }

    /// Processes an iterate from the master and returns the reply.
    pub fn step(&mut self, x: &Vector) -> WorkerMessage {
        assert_eq!(x.len(), self.z.len(), "iterate length mismatch");
        let s = x - &self.z;
        let grad_x = self.shard.gradient(x);
        let y = &grad_x - &self.grad_z;

        let (q_tilde, alpha, beta_tilde, change) = match self.estimate.absorb(&s, &y) {
            Absorbed::Updated { q_tilde, alpha, beta_tilde, rank_two } => {
                let change = if rank_two { EstimateChange::RankTwo } else { EstimateChange::Rebuilt };
                (q_tilde, alpha, beta_tilde, change)
            }
            Absorbed::Skipped(_) => (Vector::zeros(x.len()), 0.0, 0.0, EstimateChange::Skipped),
        };

        let u = self.estimate.apply(x);
        let delta_u = &u - &self.u_prev;
        self.u_prev = u;
        self.z = x.clone();
        self.grad_z = grad_x;
        self.peak_floats = self.peak_floats.max(self.state_floats());
        self.peak_estimate_floats = self.peak_estimate_floats.max(self.estimate.state_floats());

        WorkerMessage { worker_id: self.id, delta_u, y, q_tilde, alpha, beta_tilde, change }
    }
}
