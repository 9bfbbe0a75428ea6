#![allow(dead_code)]

use ldqn::data::SparseRow;
use ldqn::memory::LimitedMemoryEstimate;
use ldqn::objectives::{LogisticShard, QuadraticShard};
use ldqn::{DenseMatrix, Shard, Vector, WorkerState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vector(d: usize, rng: &mut impl Rng) -> Vector {
    Vector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

/// Random orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn random_orthogonal(d: usize, rng: &mut impl Rng) -> DenseMatrix {
    let g = DenseMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

/// Symmetric matrix with the given eigenvalues and a random eigenbasis.
pub fn spd_with_eigenvalues(eigs: &[f64], rng: &mut impl Rng) -> DenseMatrix {
    let d = eigs.len();
    let u = random_orthogonal(d, rng);
    let m = &u * DenseMatrix::from_diagonal(&Vector::from_column_slice(eigs)) * u.transpose();
    (&m + m.transpose()) * 0.5
}

/// Random SPD matrix whose eigenvalues lie in `[lo, hi]`, with both ends
/// attained.
pub fn random_spd(d: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> DenseMatrix {
    let mut eigs: Vec<f64> = (0..d).map(|_| rng.random_range(lo..=hi)).collect();
    eigs[0] = lo;
    if d > 1 {
        eigs[d - 1] = hi;
    }
    spd_with_eigenvalues(&eigs, rng)
}

pub fn quadratic_shard(q: DenseMatrix, center: Vector) -> Shard {
    Shard::Quadratic(QuadraticShard::new(q, center).unwrap())
}

pub fn random_quadratic_shards(n: usize, d: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<Shard> {
    (0..n).map(|_| quadratic_shard(random_spd(d, lo, hi, rng), gaussian_vector(d, rng))).collect()
}

/// Logistic shard with dense Gaussian rows scaled to unit norm on average.
pub fn random_logistic_shard(d: usize, rows: usize, lambda: f64, rng: &mut impl Rng) -> Shard {
    let scale = 1.0 / (d as f64).sqrt();
    let mut data = Vec::with_capacity(rows);
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        let v: Vec<f64> = (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            })
            .collect();
        data.push(SparseRow::new((0..d).collect(), v));
        labels.push(if rng.random::<bool>() { 1.0 } else { -1.0 });
    }
    Shard::Logistic(LogisticShard::new(d, data, labels, lambda).unwrap())
}

pub fn ldqn_workers(shards: &[Shard], x0: &Vector, gamma0: f64, m: usize) -> Vec<WorkerState<LimitedMemoryEstimate>> {
    shards
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let est = LimitedMemoryEstimate::new(x0.len(), gamma0, m).unwrap();
            WorkerState::new(i, s.clone(), x0.clone(), est).unwrap()
        })
        .collect()
}

/// Textbook dense BFGS recursion from `γ I` over the given pairs, with no
/// skipping: the oracle for limited-memory estimates that kept every pair.
pub fn dense_bfgs(gamma: f64, pairs: &[(Vector, Vector)], d: usize) -> DenseMatrix {
    let mut b = DenseMatrix::identity(d, d) * gamma;
    for (s, y) in pairs {
        let bs = &b * s;
        let sbs = s.dot(&bs);
        let ys = y.dot(s);
        b = b - &bs * bs.transpose() / sbs + y * y.transpose() / ys;
    }
    b
}

pub fn rel_frobenius(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
