//! Smooth, strongly convex component objectives `f_i`.
//!
//! Every component carries the full `(λ/2)‖x‖²` regularizer, so each `f_i`
//! is itself `λ`-strongly convex and the global objective is the plain mean
//! `f = (1/n) Σ f_i`.

use nalgebra::Cholesky;

use crate::data::SparseRow;
use crate::{DenseMatrix, Error, Result, Vector, DEFAULT_DENSE_CAP};

/// `log(1 + exp(t))` without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + exp(−t))`.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Binary logistic loss over a set of sparse rows with labels in {−1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticShard {
    dim: usize,
    rows: Vec<SparseRow>,
    labels: Vec<f64>,
    lambda: f64,
}

impl LogisticShard {
    pub fn new(dim: usize, rows: Vec<SparseRow>, labels: Vec<f64>, lambda: f64) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: rows.len(), got: labels.len() });
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("regularization must be nonnegative, got {lambda}")));
        }
        if let Some(b) = labels.iter().find(|b| **b != 1.0 && **b != -1.0) {
            return Err(Error::Config(format!("label {b} is not in {{-1, +1}}")));
        }
        if let Some(r) = rows.iter().find(|r| r.indices.iter().any(|&j| j >= dim)) {
            return Err(Error::DimensionMismatch { expected: dim, got: r.indices.iter().max().unwrap() + 1 });
        }
        Ok(Self { dim, rows, labels, lambda })
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn margins<'a>(&'a self, x: &'a Vector) -> impl Iterator<Item = (&'a SparseRow, f64, f64)> + 'a {
        self.rows.iter().zip(&self.labels).map(move |(r, &b)| (r, b, b * r.dot(x)))
    }

    fn loss(&self, x: &Vector) -> f64 {
        let reg = 0.5 * self.lambda * x.norm_squared();
        if self.rows.is_empty() {
            return reg;
        }
        let sum: f64 = self.margins(x).map(|(_, _, m)| softplus(-m)).sum();
        sum / self.rows.len() as f64 + reg
    }

    fn gradient(&self, x: &Vector) -> Vector {
        let mut g = x * self.lambda;
        if self.rows.is_empty() {
            return g;
        }
        let scale = 1.0 / self.rows.len() as f64;
        for (row, b, m) in self.margins(x) {
            row.axpy_into(-b * sigmoid(-m) * scale, &mut g);
        }
        g
    }

    fn hessian(&self, x: &Vector) -> DenseMatrix {
        let mut h = DenseMatrix::from_diagonal_element(self.dim, self.dim, self.lambda);
        if self.rows.is_empty() {
            return h;
        }
        let scale = 1.0 / self.rows.len() as f64;
        for (row, _, m) in self.margins(x) {
            let w = sigmoid(m) * sigmoid(-m) * scale;
            row.add_outer_into(w, &mut h);
        }
        h
    }

    fn hessian_vector(&self, x: &Vector, v: &Vector) -> Vector {
        let mut hv = v * self.lambda;
        if self.rows.is_empty() {
            return hv;
        }
        let scale = 1.0 / self.rows.len() as f64;
        for (row, _, m) in self.margins(x) {
            let w = sigmoid(m) * sigmoid(-m) * scale;
            row.axpy_into(w * row.dot(v), &mut hv);
        }
        hv
    }

    /// Largest Hessian eigenvalue over all x: σ' ≤ 1/4, attained at margin 0.
    fn curvature_at_zero_margin(&self) -> DenseMatrix {
        let mut h = DenseMatrix::from_diagonal_element(self.dim, self.dim, self.lambda);
        if !self.rows.is_empty() {
            let w = 0.25 / self.rows.len() as f64;
            for row in &self.rows {
                row.add_outer_into(w, &mut h);
            }
        }
        h
    }
}

/// `f(x) = ½ (x − c)ᵀ Q (x − c)` with `Q` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticShard {
    q: DenseMatrix,
    center: Vector,
}

impl QuadraticShard {
    pub fn new(q: DenseMatrix, center: Vector) -> Result<Self> {
        let d = center.len();
        if q.nrows() != d || q.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: q.nrows() });
        }
        if (&q - q.transpose()).amax() > 1e-12 * (1.0 + q.amax()) {
            return Err(Error::Config("quadratic matrix is not symmetric".into()));
        }
        if Cholesky::new(q.clone()).is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { q, center })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.q
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }
}

/// One worker's component function.
#[derive(Debug, Clone, PartialEq)]
pub enum Shard {
    Logistic(LogisticShard),
    Quadratic(QuadraticShard),
}

impl Shard {
    pub fn dim(&self) -> usize {
        match self {
            Shard::Logistic(s) => s.dim,
            Shard::Quadratic(s) => s.center.len(),
        }
    }

    fn check(&self, x: &Vector) {
        assert_eq!(x.len(), self.dim(), "vector length does not match shard dimension");
    }

    pub fn loss(&self, x: &Vector) -> f64 {
        self.check(x);
        match self {
            Shard::Logistic(s) => s.loss(x),
            Shard::Quadratic(s) => {
                let e = x - &s.center;
                0.5 * e.dot(&(&s.q * &e))
            }
        }
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        self.check(x);
        match self {
            Shard::Logistic(s) => s.gradient(x),
            Shard::Quadratic(s) => &s.q * (x - &s.center),
        }
    }

    pub fn hessian_vector(&self, x: &Vector, v: &Vector) -> Vector {
        self.check(x);
        match self {
            Shard::Logistic(s) => s.hessian_vector(x, v),
            Shard::Quadratic(s) => &s.q * v,
        }
    }

    /// Dense Hessian, refused above [`DEFAULT_DENSE_CAP`].
    pub fn hessian(&self, x: &Vector) -> Result<DenseMatrix> {
        self.hessian_capped(x, DEFAULT_DENSE_CAP)
    }

    pub fn hessian_capped(&self, x: &Vector, cap: usize) -> Result<DenseMatrix> {
        self.check(x);
        let d = self.dim();
        if d > cap {
            return Err(Error::DimensionTooLarge { dim: d, cap });
        }
        Ok(match self {
            Shard::Logistic(s) => s.hessian(x),
            Shard::Quadratic(s) => s.q.clone(),
        })
    }

    /// Per-component `(μ, L)`. Logistic shards use the closed-form
    /// `L = λ + max ‖a‖² / 4`.
    pub fn constants(&self) -> SmoothnessConstants {
        match self {
            Shard::Logistic(s) => {
                let max_sq = s.rows.iter().map(SparseRow::norm_squared).fold(0.0, f64::max);
                SmoothnessConstants::new(s.lambda, s.lambda + 0.25 * max_sq)
            }
            Shard::Quadratic(s) => {
                let eig = s.q.clone().symmetric_eigenvalues();
                SmoothnessConstants::new(eig.min(), eig.max())
            }
        }
    }

    /// Dense matrix dominating the Hessian everywhere (exact for quadratics).
    fn curvature_envelope(&self) -> DenseMatrix {
        match self {
            Shard::Logistic(s) => s.curvature_at_zero_margin(),
            Shard::Quadratic(s) => s.q.clone(),
        }
    }
}

/// Strong convexity and smoothness moduli.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SmoothnessConstants {
    pub mu: f64,
    pub l: f64,
    pub kappa: f64,
}

impl SmoothnessConstants {
    /// `kappa` is infinite when `mu` is zero.
    pub fn new(mu: f64, l: f64) -> Self {
        Self { mu, l, kappa: l / mu }
    }
}

/// Conservative `(μ, L)` valid for every component: the smallest per-shard μ
/// and the largest per-shard L.
pub fn global_constants(shards: &[Shard]) -> SmoothnessConstants {
    assert!(!shards.is_empty(), "need at least one shard");
    let mu = shards.iter().map(|s| s.constants().mu).fold(f64::INFINITY, f64::min);
    let l = shards.iter().map(|s| s.constants().l).fold(0.0, f64::max);
    SmoothnessConstants::new(mu, l)
}

/// Smoothness constant of the mean objective `f`. Uses the exact largest
/// eigenvalue of the curvature envelope when `d` is within the dense cap,
/// otherwise the per-shard bound.
pub fn global_lipschitz(shards: &[Shard]) -> f64 {
    let d = shards[0].dim();
    if d > DEFAULT_DENSE_CAP {
        return global_constants(shards).l;
    }
    let mut h = DenseMatrix::zeros(d, d);
    for s in shards {
        h += s.curvature_envelope();
    }
    h /= shards.len() as f64;
    h.symmetric_eigenvalues().max()
}

pub fn global_loss(shards: &[Shard], x: &Vector) -> f64 {
    shards.iter().map(|s| s.loss(x)).sum::<f64>() / shards.len() as f64
}

pub fn global_gradient(shards: &[Shard], x: &Vector) -> Vector {
    let mut g = Vector::zeros(x.len());
    for s in shards {
        g += s.gradient(x);
    }
    g / shards.len() as f64
}

/// High-accuracy minimizer of the mean objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceOptimum {
    pub x_star: Vector,
    pub f_star: f64,
    pub grad_norm: f64,
}

/// Damped Newton to `‖∇f‖ ≤ 1e-12` (or until no further progress is
/// possible in floating point). Falls back to gradient descent with step
/// `1/L` above the dense cap.
pub fn reference_solve(shards: &[Shard]) -> Result<ReferenceOptimum> {
    const TOL: f64 = 1e-12;
    let d = shards[0].dim();
    let mut x = Vector::zeros(d);
    let mut f = global_loss(shards, &x);
    let mut g = global_gradient(shards, &x);

    if d > DEFAULT_DENSE_CAP {
        let step = 1.0 / global_constants(shards).l;
        for _ in 0..200_000 {
            if g.norm() <= TOL {
                break;
            }
            x.axpy(-step, &g, 1.0);
            g = global_gradient(shards, &x);
        }
        f = global_loss(shards, &x);
        return Ok(ReferenceOptimum { grad_norm: g.norm(), x_star: x, f_star: f });
    }

    for _ in 0..200 {
        if g.norm() <= TOL {
            break;
        }
        let mut h = DenseMatrix::zeros(d, d);
        for s in shards {
            h += s.hessian(&x)?;
        }
        h /= shards.len() as f64;
        let dir = Cholesky::new(h).ok_or(Error::NotPositiveDefinite)?.solve(&g);
        let slope = g.dot(&dir);
        if slope <= 1e-10 * (1.0 + f.abs()) {
            // Inside the quadratic region the loss cannot resolve the
            // decrease, so judge the full step by the gradient instead.
            let cand = &x - &dir;
            let gc = global_gradient(shards, &cand);
            if gc.norm() >= g.norm() {
                break;
            }
            f = global_loss(shards, &cand);
            x = cand;
            g = gc;
            continue;
        }
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let cand = &x - &dir * t;
            let fc = global_loss(shards, &cand);
            if fc <= f - 1e-4 * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            // Loss no longer resolves the decrease; take the full step if it
            // still shrinks the gradient.
            let cand = &x - &dir;
            let gc = global_gradient(shards, &cand);
            if gc.norm() < g.norm() {
                f = global_loss(shards, &cand);
                x = cand;
                g = gc;
                continue;
            }
            break;
        };
        x = cand;
        f = fc;
        g = global_gradient(shards, &x);
    }
    Ok(ReferenceOptimum { grad_norm: g.norm(), x_star: x, f_star: f })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn row(pairs: &[(usize, f64)]) -> SparseRow {
        SparseRow::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
    }

    fn logistic(rows: Vec<SparseRow>, labels: Vec<f64>, lambda: f64, d: usize) -> Shard {
        Shard::Logistic(LogisticShard::new(d, rows, labels, lambda).unwrap())
    }

    #[test]
    fn loss_at_origin_is_log_two() {
        let s = logistic(vec![row(&[(0, 1.0)]), row(&[(1, -2.0)])], vec![1.0, -1.0], 0.0, 3);
        assert!((s.loss(&Vector::zeros(3)) - 2f64.ln()).abs() < 1e-15);
        let s = logistic(vec![row(&[(0, 1.0)])], vec![1.0], 2.0, 2);
        assert!((s.loss(&Vector::zeros(2)) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn large_margin_loss_is_tiny_and_finite() {
        // b aᵀx = 50: log1p(e^-50) = e^-50 − e^-100/2 + ... ≈ 1.9287e-22
        let s = logistic(vec![row(&[(0, 1.0)])], vec![1.0], 0.0, 1);
        let l = s.loss(&dvector![50.0]);
        assert!(l <= 1e-20 && l > 0.0);
        assert!((l - 1.928749847963918e-22).abs() < 1e-35);
        let l = s.loss(&dvector![-800.0]);
        assert!((l - 800.0).abs() < 1e-12);
        assert!(s.gradient(&dvector![-800.0]).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn regularizer_only_shard() {
        let s = logistic(vec![], vec![], 0.7, 2);
        let x = dvector![1.0, -2.0];
        assert_eq!(s.gradient(&x), &x * 0.7);
        let c = s.constants();
        assert_eq!((c.mu, c.l), (0.7, 0.7));
    }

    #[test]
    fn hessian_at_origin_single_row() {
        let s = logistic(vec![row(&[(0, 1.0)])], vec![1.0], 0.0, 2);
        let h = s.hessian(&Vector::zeros(2)).unwrap();
        assert_eq!(h, DenseMatrix::from_row_slice(2, 2, &[0.25, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn quadratic_basics() {
        let q = DenseMatrix::from_diagonal(&dvector![1.0, 4.0]);
        let c = dvector![0.5, -1.0];
        let s = Shard::Quadratic(QuadraticShard::new(q.clone(), c.clone()).unwrap());
        assert_eq!(s.gradient(&c), Vector::zeros(2));
        assert_eq!(s.hessian(&dvector![3.0, 3.0]).unwrap(), q);
        let k = s.constants();
        assert!((k.mu - 1.0).abs() < 1e-12 && (k.l - 4.0).abs() < 1e-12 && (k.kappa - 4.0).abs() < 1e-12);
        assert!(QuadraticShard::new(DenseMatrix::from_diagonal(&dvector![1.0, -1.0]), c).is_err());
    }

    #[test]
    fn normalized_rows_bound() {
        let rows = vec![row(&[(0, 0.6), (1, 0.8)]), row(&[(1, 0.5)])];
        let s = logistic(rows, vec![1.0, -1.0], 0.1, 2);
        let c = global_constants(&[s]);
        assert_eq!(c.mu, 0.1);
        assert!(c.l <= 0.35 + 1e-15);
    }

    #[test]
    fn dense_cap_enforced() {
        let d = DEFAULT_DENSE_CAP + 1;
        let s = logistic(vec![], vec![], 1.0, d);
        assert!(matches!(s.hessian(&Vector::zeros(d)), Err(Error::DimensionTooLarge { .. })));
    }

    #[test]
    fn reference_solve_quadratic_is_exact() {
        let q1 = DenseMatrix::from_diagonal(&dvector![2.0, 1.0]);
        let q2 = DenseMatrix::from_diagonal(&dvector![1.0, 3.0]);
        let shards = vec![
            Shard::Quadratic(QuadraticShard::new(q1, dvector![1.0, 0.0]).unwrap()),
            Shard::Quadratic(QuadraticShard::new(q2, dvector![-1.0, 2.0]).unwrap()),
        ];
        let r = reference_solve(&shards).unwrap();
        // (Q1 + Q2) x = Q1 c1 + Q2 c2 → x = (1/3, 6/4)
        assert!((r.x_star[0] - 1.0 / 3.0).abs() < 1e-14);
        assert!((r.x_star[1] - 1.5).abs() < 1e-14);
        assert!(r.grad_norm <= 1e-12);
    }
}
