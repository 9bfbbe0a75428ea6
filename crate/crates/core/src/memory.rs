//! Limited-memory Hessian estimate.
//!
//! A worker's estimate is represented implicitly as
//!
//! ```text
//! B = γ I + Σ_j ( y_j y_jᵀ / α_j  −  q_j q_jᵀ / β_j )
//! ```
//!
//! where each tuple stores `q_j = B_{j-1} s_j`, `α_j = y_jᵀ s_j` and
//! `β_j = s_jᵀ q_j`. Applying `B` to a vector costs O(md) and never forms a
//! d×d matrix; [`materialize`] exists for oracles and diagnostics only.

use std::collections::VecDeque;

use crate::worker::{Absorbed, HessianApprox, SkipReason};
use crate::{DenseMatrix, Error, Result, Vector, DEFAULT_DENSE_CAP};

/// Relative curvature threshold: a pair is rejected when
/// `yᵀs ≤ CURVATURE_TOL · ‖y‖ · ‖s‖`.
pub const CURVATURE_TOL: f64 = 1e-10;

/// Positive scale of the identity part of the estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaScale(f64);

impl GammaScale {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma.is_finite() {
            Ok(Self(gamma))
        } else {
            Err(Error::InvalidGamma(gamma))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// `γ = ‖y‖² / (yᵀs)`, an estimate of the largest local curvature.
pub fn compute_gamma(y: &Vector, s: &Vector) -> Result<GammaScale> {
    let (ny, ns) = (y.norm(), s.norm());
    if ny == 0.0 || ns == 0.0 {
        return Err(Error::DegenerateStep);
    }
    let ys = y.dot(s);
    let threshold = CURVATURE_TOL * ny * ns;
    if ys <= threshold {
        return Err(Error::CurvatureFailure { ys, threshold });
    }
    GammaScale::new(ny * ny / ys)
}

/// One curvature record `(y, q̃, α, β̃)`. The step `s` that produced it is
/// kept so the record can be re-derived when the base scale changes.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryTuple {
    pub s: Vector,
    pub y: Vector,
    pub q_tilde: Vector,
    pub alpha: f64,
    pub beta_tilde: f64,
}

impl MemoryTuple {
    pub fn new(s: Vector, y: Vector, q_tilde: Vector, alpha: f64, beta_tilde: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta_tilde > 0.0 && alpha.is_finite() && beta_tilde.is_finite()) {
            return Err(Error::InvalidTuple { alpha, beta: beta_tilde });
        }
        let d = y.len();
        for v in [&s, &q_tilde] {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: v.len() });
            }
        }
        Ok(Self { s, y, q_tilde, alpha, beta_tilde })
    }

    /// Adds `(yᵀx/α) y − (q̃ᵀx/β̃) q̃` to `acc`.
    #[inline]
    fn accumulate(&self, x: &Vector, acc: &mut Vector) {
        let c1 = self.y.dot(x) / self.alpha;
        let c2 = self.q_tilde.dot(x) / self.beta_tilde;
        acc.axpy(c1, &self.y, 1.0);
        acc.axpy(-c2, &self.q_tilde, 1.0);
    }
}

/// FIFO store of at most `capacity` tuples, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleMemory {
    capacity: usize,
    tuples: VecDeque<MemoryTuple>,
}

impl TupleMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("memory capacity must be at least 1".into()));
        }
        Ok(Self { capacity, tuples: VecDeque::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.tuples.len() == self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &MemoryTuple> {
        self.tuples.iter()
    }

    /// Appends `tuple`, evicting and returning the oldest one when full.
    pub fn push(&mut self, tuple: MemoryTuple) -> Result<Option<MemoryTuple>> {
        if !(tuple.alpha > 0.0 && tuple.beta_tilde > 0.0) {
            return Err(Error::InvalidTuple { alpha: tuple.alpha, beta: tuple.beta_tilde });
        }
        let evicted = if self.is_full() { self.tuples.pop_front() } else { None };
        self.tuples.push_back(tuple);
        Ok(evicted)
    }

    fn pop_oldest(&mut self) -> Option<MemoryTuple> {
        self.tuples.pop_front()
    }

    /// Number of f64 values held by the stored tuples.
    pub fn stored_floats(&self) -> usize {
        self.tuples.iter().map(|t| t.s.len() + t.y.len() + t.q_tilde.len() + 2).sum()
    }

    /// Re-derives every `q̃_j = B_{j-1} s_j` against base scale `gamma`,
    /// oldest first. Tuples whose `β̃` is no longer positive are dropped.
    fn rechain(&mut self, gamma: f64) {
        let old = std::mem::take(&mut self.tuples);
        for t in old {
            let q = apply_tuples(gamma, self.tuples.iter(), &t.s);
            let beta = t.s.dot(&q);
            if beta > 0.0 && beta.is_finite() {
                self.tuples.push_back(MemoryTuple { q_tilde: q, beta_tilde: beta, ..t });
            }
        }
    }
}

fn apply_tuples<'a>(gamma: f64, tuples: impl Iterator<Item = &'a MemoryTuple>, x: &Vector) -> Vector {
    let mut u = x * gamma;
    for t in tuples {
        t.accumulate(x, &mut u);
    }
    u
}

/// Computes `u = B x` from the memory without forming `B`.
pub fn lbfgs_apply(gamma: GammaScale, memory: &TupleMemory, x: &Vector) -> Vector {
    apply_tuples(gamma.get(), memory.iter(), x)
}

/// Pushes `tuple` into a copy of `memory`.
pub fn push_tuple(memory: &TupleMemory, tuple: MemoryTuple) -> Result<TupleMemory> {
    let mut next = memory.clone();
    next.push(tuple)?;
    Ok(next)
}

/// Dense `γI + Σ (y yᵀ/α − q̃ q̃ᵀ/β̃)`, refused above [`DEFAULT_DENSE_CAP`].
pub fn materialize(gamma: GammaScale, memory: &TupleMemory, d: usize) -> Result<DenseMatrix> {
    materialize_capped(gamma, memory, d, DEFAULT_DENSE_CAP)
}

pub fn materialize_capped(
    gamma: GammaScale,
    memory: &TupleMemory,
    d: usize,
    cap: usize,
) -> Result<DenseMatrix> {
    if d > cap {
        return Err(Error::DimensionTooLarge { dim: d, cap });
    }
    for t in memory.iter() {
        if t.y.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: t.y.len() });
        }
    }
    Ok(dense_unchecked(gamma.get(), memory, d))
}

fn dense_unchecked(gamma: f64, memory: &TupleMemory, d: usize) -> DenseMatrix {
    let mut b = DenseMatrix::from_diagonal_element(d, d, gamma);
    for t in memory.iter() {
        b.ger(1.0 / t.alpha, &t.y, &t.y, 1.0);
        b.ger(-1.0 / t.beta_tilde, &t.q_tilde, &t.q_tilde, 1.0);
    }
    b
}

/// How retained tuples relate to the current base scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TupleRefresh {
    /// Re-chain retained tuples whenever γ changes or a tuple is evicted, so
    /// the estimate is always the BFGS recursion started from the current γI.
    #[default]
    Rebuild,
    /// Keep q̃ and β̃ as computed at insertion time. The estimate may lose
    /// positive definiteness once γ moves.
    Stored,
}

/// Choice of the base scale after each accepted pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GammaRule {
    /// `γ = ‖y‖²/(yᵀs)` from the newest pair.
    #[default]
    Secant,
    /// Keep the initial γ₀ forever.
    Fixed,
}

/// A worker's complete limited-memory estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitedMemoryEstimate {
    dim: usize,
    gamma: GammaScale,
    memory: TupleMemory,
    refresh: TupleRefresh,
    rule: GammaRule,
}

impl LimitedMemoryEstimate {
    pub fn new(dim: usize, gamma0: f64, capacity: usize) -> Result<Self> {
        Ok(Self {
            dim,
            gamma: GammaScale::new(gamma0)?,
            memory: TupleMemory::new(capacity)?,
            refresh: TupleRefresh::default(),
            rule: GammaRule::default(),
        })
    }

    pub fn with_refresh(mut self, refresh: TupleRefresh) -> Self {
        self.refresh = refresh;
        self
    }

    pub fn with_gamma_rule(mut self, rule: GammaRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn gamma(&self) -> GammaScale {
        self.gamma
    }

    pub fn memory(&self) -> &TupleMemory {
        &self.memory
    }

    /// Floats held by the tuple store alone.
    pub fn tuple_floats(&self) -> usize {
        self.memory.stored_floats()
    }
}

impl HessianApprox for LimitedMemoryEstimate {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &Vector) -> Vector {
        lbfgs_apply(self.gamma, &self.memory, x)
    }

    fn to_dense(&self) -> DenseMatrix {
        dense_unchecked(self.gamma.get(), &self.memory, self.dim)
    }

    fn absorb(&mut self, s: &Vector, y: &Vector) -> Absorbed {
        let gamma = match compute_gamma(y, s) {
            Ok(g) => match self.rule {
                GammaRule::Secant => g,
                GammaRule::Fixed => self.gamma,
            },
            Err(Error::DegenerateStep) => return Absorbed::Skipped(SkipReason::Degenerate),
            Err(_) => return Absorbed::Skipped(SkipReason::Curvature),
        };
        let rescaled = gamma != self.gamma;
        let alpha = y.dot(s);

        let mut memory = self.memory.clone();
        let mut evicted = false;
        let q_tilde = match self.refresh {
            TupleRefresh::Rebuild => {
                if memory.is_full() {
                    memory.pop_oldest();
                    evicted = true;
                }
                if rescaled || evicted {
                    memory.rechain(gamma.get());
                }
                lbfgs_apply(gamma, &memory, s)
            }
            TupleRefresh::Stored => {
                evicted = memory.is_full();
                lbfgs_apply(gamma, &memory, s)
            }
        };
        let beta_tilde = s.dot(&q_tilde);
        let tuple = match MemoryTuple::new(s.clone(), y.clone(), q_tilde.clone(), alpha, beta_tilde) {
            Ok(t) => t,
            Err(_) => return Absorbed::Skipped(SkipReason::NonPositive),
        };
        if memory.push(tuple).is_err() {
            return Absorbed::Skipped(SkipReason::NonPositive);
        }
        // A rechain can drop tuples, which is not a rank-two change either.
        let rank_two = !rescaled && !evicted && memory.len() == self.memory.len() + 1;
        self.memory = memory;
        self.gamma = gamma;
        Absorbed::Updated { q_tilde, alpha, beta_tilde, rank_two }
    }

    fn state_floats(&self) -> usize {
        self.memory.stored_floats() + 1
    }
}
